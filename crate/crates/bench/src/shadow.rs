//! Brute-force reference model for differential testing.
//!
//! The model knows the size classes only through the JSON table printed by
//! `dump-classes`, read here as plain data.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::trace::{Slot, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShadowError {
    #[error("trace semantics: {0}")]
    Semantics(String),
    #[error("class table: {0}")]
    Table(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

/// Rounding rules recovered from a class-table dump.
#[derive(Clone, Debug)]
pub struct ClassTableData {
    block_sizes: Vec<usize>,
    huge_granule: usize,
}

impl ClassTableData {
    pub fn from_json(text: &str) -> Result<Self, ShadowError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ShadowError::Table(e.to_string()))?;
        let classes = v["classes"].as_array().ok_or_else(|| ShadowError::Table("missing classes".into()))?;
        let block_sizes = classes
            .iter()
            .map(|c| c["block_size"].as_u64().map(|b| b as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ShadowError::Table("bad block_size".into()))?;
        let huge_granule = v["huge_granule"].as_u64().ok_or_else(|| ShadowError::Table("missing huge_granule".into()))?;
        Ok(ClassTableData { block_sizes, huge_granule: huge_granule as usize })
    }

    /// Block size the table assigns to a request, by linear scan.
    pub fn block_size(&self, size: usize) -> usize {
        let size = size.max(1);
        match self.block_sizes.iter().find(|&&b| b >= size) {
            Some(&b) => b,
            None => size.div_ceil(self.huge_granule) * self.huge_granule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShadowBlock {
    pub start: u64,
    pub size: usize,
    pub seed: u64,
}

/// Map-based allocator model with synthetic, never-reused addresses.
#[derive(Default)]
pub struct ShadowHeap {
    live: BTreeMap<Slot, ShadowBlock>,
    next_addr: u64,
    total_live_bytes: usize,
}

impl ShadowHeap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_live_bytes(&self) -> usize {
        self.total_live_bytes
    }

    pub fn live(&self) -> &BTreeMap<Slot, ShadowBlock> {
        &self.live
    }

    pub fn is_live(&self, slot: Slot) -> bool {
        self.live.contains_key(&slot)
    }

    fn place(&mut self, size: usize, seed: u64) -> ShadowBlock {
        let start = self.next_addr;
        self.next_addr += size.max(1) as u64;
        ShadowBlock { start, size, seed }
    }

    pub fn apply(&mut self, event: &TraceEvent) -> Result<(), ShadowError> {
        match *event {
            TraceEvent::Alloc { slot, size } => {
                if self.live.contains_key(&slot) {
                    return Err(ShadowError::Semantics(format!("alloc into live slot {slot}")));
                }
                let block = self.place(size, slot ^ ((size as u64) << 32));
                self.live.insert(slot, block);
                self.total_live_bytes += size;
            }
            TraceEvent::Free { slot } => {
                let old = self.live.remove(&slot).ok_or_else(|| ShadowError::Semantics(format!("free of dead slot {slot}")))?;
                self.total_live_bytes -= old.size;
            }
            TraceEvent::Realloc { slot, size } => {
                let old = *self.live.get(&slot).ok_or_else(|| ShadowError::Semantics(format!("realloc of dead slot {slot}")))?;
                let block = self.place(size, slot ^ ((size as u64) << 32));
                self.live.insert(slot, block);
                self.total_live_bytes = self.total_live_bytes - old.size + size;
            }
        }
        Ok(())
    }

    /// Σ over live slots of (rounded block size − requested size).
    pub fn rounding_gap(&self, table: &ClassTableData) -> usize {
        self.live.values().map(|b| table.block_size(b.size) - b.size).sum()
    }
}

/// What the model needs to know about the real heap's view of each slot.
pub struct HeapView<'a> {
    /// Live slot → (address, usable size).
    pub blocks: &'a BTreeMap<Slot, (usize, usize)>,
    pub bytes_live: usize,
}

/// Cross-checks the heap against the model: same live slots, pairwise
/// disjoint blocks, usable sizes covering requests, and an exact rounding gap.
pub fn check_equivalence(shadow: &ShadowHeap, table: &ClassTableData, heap: &HeapView<'_>) -> Result<(), ShadowError> {
    if shadow.live.len() != heap.blocks.len() || !shadow.live.keys().eq(heap.blocks.keys()) {
        return Err(ShadowError::Divergence("live slot sets differ".into()));
    }
    let mut intervals: Vec<(usize, usize, Slot)> = Vec::with_capacity(heap.blocks.len());
    for (&slot, &(addr, usable)) in heap.blocks {
        let requested = shadow.live[&slot].size;
        if usable < requested {
            return Err(ShadowError::Divergence(format!("slot {slot}: usable {usable} < requested {requested}")));
        }
        if usable != table.block_size(requested) {
            return Err(ShadowError::Divergence(format!(
                "slot {slot}: usable {usable}, table says {}",
                table.block_size(requested)
            )));
        }
        intervals.push((addr, addr + usable, slot));
    }
    intervals.sort_unstable();
    for pair in intervals.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(ShadowError::Divergence(format!("slots {} and {} overlap", pair[0].2, pair[1].2)));
        }
    }
    let gap = shadow.rounding_gap(table);
    if heap.bytes_live != shadow.total_live_bytes() + gap {
        return Err(ShadowError::Divergence(format!(
            "bytes_live {} != requested {} + gap {gap}",
            heap.bytes_live,
            shadow.total_live_bytes()
        )));
    }
    Ok(())
}
