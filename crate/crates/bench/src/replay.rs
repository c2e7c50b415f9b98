//! Trace replay against stalloc or the system allocator.
//!
//! A run makes a verified pass (every block is filled with a pattern derived
//! from its slot and size and checked before it is freed or moved), then,
//! when timing is requested, a separate unverified pass on a fresh allocator
//! timed in batches of [`TIMING_BATCH`] events, followed by latency probes of
//! homogeneous alloc, realloc and free batches.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::HashMap;
use std::hint::black_box;
use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use stalloc::size_classes::MEDIUM_MAX_BLOCK;
use stalloc::{AllocError, FreeListPolicy, Heap, HeapConfig, HeapStats, OsBackend, SimBackend, ValidationReport};
use thiserror::Error;

use crate::report::{Latency, LatencySummary, ReuseStats, StatsReport, Timing, SCHEMA_VERSION};
use crate::trace::{Slot, TraceEvent};

pub const TIMING_BATCH: usize = 1024;
const PROBE_ROUNDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Real,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Sim => "sim",
            BackendKind::Real => "real",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Stalloc,
    System,
}

impl AllocatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::Stalloc => "stalloc",
            AllocatorKind::System => "system",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub allocator: AllocatorKind,
    pub policy: FreeListPolicy,
    pub backend: BackendKind,
    /// Run the heap in checked mode during the verified pass.
    pub checked: bool,
    pub timing: bool,
    /// Corrupt one free-list link right after this event index.
    pub inject_fault_after: Option<usize>,
}

impl RunConfig {
    pub fn stalloc(policy: FreeListPolicy, backend: BackendKind) -> Self {
        RunConfig { allocator: AllocatorKind::Stalloc, policy, backend, checked: false, timing: false, inject_fault_after: None }
    }

    pub fn system() -> Self {
        RunConfig { allocator: AllocatorKind::System, ..Self::stalloc(FreeListPolicy::Single, BackendKind::Real) }
    }

    pub fn with_timing(mut self, timing: bool) -> Self {
        self.timing = timing;
        self
    }

    pub fn with_checked(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn label(&self) -> String {
        match self.allocator {
            AllocatorKind::System => "system".to_string(),
            AllocatorKind::Stalloc => {
                let policy = match self.policy {
                    FreeListPolicy::Single => "single",
                    FreeListPolicy::TripleEmulated => "triple",
                };
                format!("stalloc-{policy}-{}", self.backend.name())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("corruption detected: {0}")]
    Corruption(String),
    #[error("allocation failed at event {event}: {error}")]
    Alloc { event: usize, error: AllocError },
    #[error("{0}")]
    Config(String),
}

/// The operations replay needs from an allocator.
pub trait ReplayTarget {
    fn alloc(&mut self, size: usize) -> Result<*mut u8, AllocError>;
    /// # Safety
    /// `ptr` must be live with requested size `size`.
    unsafe fn free(&mut self, ptr: *mut u8, size: usize) -> Result<(), AllocError>;
    /// # Safety
    /// As for `free`.
    unsafe fn realloc(&mut self, ptr: *mut u8, old: usize, new: usize) -> Result<*mut u8, AllocError>;
    /// Key under which freed blocks are matched against later allocations,
    /// or `None` for sizes left out of the reuse metric.
    fn reuse_key(&self, size: usize) -> Option<usize>;
    fn heap_stats(&self) -> Option<HeapStats> {
        None
    }
    fn validate(&self) -> Option<ValidationReport> {
        None
    }
    /// Makes a free block's link point at `victim`. Returns false if unsupported.
    ///
    /// # Safety
    /// `victim` must be live with requested size `size`.
    unsafe fn corrupt_link(&mut self, _victim: *mut u8, _size: usize) -> Result<bool, AllocError> {
        Ok(false)
    }
}

impl<B: OsBackend> ReplayTarget for Heap<B> {
    #[inline]
    fn alloc(&mut self, size: usize) -> Result<*mut u8, AllocError> {
        self.allocate(size).map(|p| p.as_ptr())
    }

    #[inline]
    unsafe fn free(&mut self, ptr: *mut u8, _size: usize) -> Result<(), AllocError> {
        self.deallocate(ptr)
    }

    #[inline]
    unsafe fn realloc(&mut self, ptr: *mut u8, _old: usize, new: usize) -> Result<*mut u8, AllocError> {
        self.reallocate(ptr, new).map(|p| p.as_ptr())
    }

    /// Blocks on pages of their own (Large, huge) are excluded: whether one
    /// comes back at the same address depends on the OS mapping.
    fn reuse_key(&self, size: usize) -> Option<usize> {
        self.rounded_size(size).ok().filter(|&b| b <= MEDIUM_MAX_BLOCK)
    }

    fn heap_stats(&self) -> Option<HeapStats> {
        Some(self.stats())
    }

    fn validate(&self) -> Option<ValidationReport> {
        Some(Heap::validate(self))
    }

    unsafe fn corrupt_link(&mut self, victim: *mut u8, size: usize) -> Result<bool, AllocError> {
        let decoy = self.allocate(size)?.as_ptr();
        self.deallocate(decoy)?;
        decoy.cast::<usize>().write_unaligned(victim as usize);
        Ok(true)
    }
}

/// The platform allocator, addressed through [`System`].
#[derive(Default)]
pub struct SystemTarget;

fn layout(size: usize) -> Layout {
    Layout::from_size_align(size.max(1), 16).expect("valid layout")
}

impl ReplayTarget for SystemTarget {
    #[inline]
    fn alloc(&mut self, size: usize) -> Result<*mut u8, AllocError> {
        // SAFETY: non-zero size.
        let p = unsafe { System.alloc(layout(size)) };
        if p.is_null() {
            Err(AllocError::OutOfMemory)
        } else {
            Ok(p)
        }
    }

    #[inline]
    unsafe fn free(&mut self, ptr: *mut u8, size: usize) -> Result<(), AllocError> {
        System.dealloc(ptr, layout(size));
        Ok(())
    }

    #[inline]
    unsafe fn realloc(&mut self, ptr: *mut u8, old: usize, new: usize) -> Result<*mut u8, AllocError> {
        let p = System.realloc(ptr, layout(old), new.max(1));
        if p.is_null() {
            Err(AllocError::OutOfMemory)
        } else {
            Ok(p)
        }
    }

    fn reuse_key(&self, size: usize) -> Option<usize> {
        (size <= MEDIUM_MAX_BLOCK).then_some(size)
    }
}

/// Maps trace slots onto dense indices so replay loops index a vector.
fn densify(events: &[TraceEvent]) -> (Vec<u32>, usize) {
    let mut map: HashMap<Slot, u32> = HashMap::new();
    let idx = events
        .iter()
        .map(|e| {
            let next = map.len() as u32;
            *map.entry(e.slot()).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

#[inline]
fn pattern_seed(slot: Slot, size: usize) -> u64 {
    let mut z = slot.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (size as u64).rotate_left(32) ^ 0xD1B5_4A32_D192_ED03;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn pattern_word(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D))
}

/// # Safety
/// `ptr` must be valid for `len` bytes.
unsafe fn fill_pattern(ptr: *mut u8, len: usize, seed: u64) {
    let words = len / 8;
    for i in 0..words {
        ptr.add(i * 8).cast::<u64>().write_unaligned(pattern_word(seed, i));
    }
    let tail = pattern_word(seed, words).to_le_bytes();
    for (j, &b) in tail.iter().enumerate().take(len % 8) {
        *ptr.add(words * 8 + j) = b;
    }
}

/// Offset of the first byte that differs from the pattern, if any.
///
/// # Safety
/// `ptr` must be valid for `len` bytes.
unsafe fn check_pattern(ptr: *const u8, len: usize, seed: u64) -> Option<usize> {
    let words = len / 8;
    for i in 0..words {
        if ptr.add(i * 8).cast::<u64>().read_unaligned() != pattern_word(seed, i) {
            return Some(i * 8);
        }
    }
    let tail = pattern_word(seed, words).to_le_bytes();
    (0..len % 8).find(|&j| *ptr.add(words * 8 + j) != tail[j]).map(|j| words * 8 + j)
}

#[derive(Default)]
struct Tally {
    allocs: u64,
    frees: u64,
    reallocs: u64,
    live_requested: usize,
    peak_requested: usize,
    reuse: ReuseStats,
}

struct VerifiedOutcome {
    tally: Tally,
    stats: Option<HeapStats>,
    validation: Option<ValidationReport>,
}

fn alloc_err(event: usize) -> impl Fn(AllocError) -> RunError {
    move |error| match error {
        AllocError::HeapCorruption { .. } | AllocError::DoubleFree { .. } | AllocError::ForeignPointer { .. } => {
            RunError::Corruption(format!("event {event}: {error}"))
        }
        error => RunError::Alloc { event, error },
    }
}

fn verified_pass<T: ReplayTarget>(
    target: &mut T,
    events: &[TraceEvent],
    fault_after: Option<usize>,
) -> Result<VerifiedOutcome, RunError> {
    let (dense, nslots) = densify(events);
    let mut table: Vec<(*mut u8, usize)> = vec![(std::ptr::null_mut(), 0); nslots];
    let mut slot_of = vec![0 as Slot; nslots];
    for (e, &d) in events.iter().zip(&dense) {
        slot_of[d as usize] = e.slot();
    }
    let mut last_freed: HashMap<usize, *mut u8> = HashMap::new();
    let mut t = Tally::default();
    let mut scratch = Vec::new();

    let verify = |ptr: *const u8, slot: Slot, size: usize, len: usize, event: usize| -> Result<(), RunError> {
        // SAFETY: `ptr` is a live block of at least `size >= len` bytes.
        match unsafe { check_pattern(ptr, len, pattern_seed(slot, size)) } {
            None => Ok(()),
            Some(off) => Err(RunError::Corruption(format!("event {event}: slot {slot} ({size} B) clobbered at offset {off}"))),
        }
    };

    for (i, (e, &d)) in events.iter().zip(&dense).enumerate() {
        let d = d as usize;
        match *e {
            TraceEvent::Alloc { slot, size } => {
                let p = target.alloc(size).map_err(alloc_err(i))?;
                if let Some(prev) = target.reuse_key(size).and_then(|k| last_freed.remove(&k)) {
                    t.reuse.candidates += 1;
                    t.reuse.hits += u64::from(prev == p);
                }
                // SAFETY: fresh block of at least `size` bytes.
                unsafe { fill_pattern(p, size, pattern_seed(slot, size)) };
                table[d] = (p, size);
                t.allocs += 1;
                t.live_requested += size;
            }
            TraceEvent::Free { slot } => {
                let (p, size) = table[d];
                verify(p, slot, size, size, i)?;
                // SAFETY: slot discipline guarantees `p` is live.
                unsafe { target.free(p, size) }.map_err(alloc_err(i))?;
                if let Some(k) = target.reuse_key(size) {
                    last_freed.insert(k, p);
                }
                table[d] = (std::ptr::null_mut(), 0);
                t.frees += 1;
                t.live_requested -= size;
            }
            TraceEvent::Realloc { slot, size } => {
                let (p, old) = table[d];
                verify(p, slot, old, old, i)?;
                // SAFETY: as above.
                let q = unsafe { target.realloc(p, old, size) }.map_err(alloc_err(i))?;
                verify(q, slot, old, old.min(size), i)?;
                if let Some(k) = target.reuse_key(old).filter(|_| q != p) {
                    last_freed.insert(k, p);
                }
                // SAFETY: `q` holds at least `size` bytes.
                unsafe { fill_pattern(q, size, pattern_seed(slot, size)) };
                table[d] = (q, size);
                t.reallocs += 1;
                t.live_requested = t.live_requested - old + size;
            }
        }
        t.peak_requested = t.peak_requested.max(t.live_requested);
        if fault_after == Some(i) {
            inject_fault(target, &table, &slot_of, &mut scratch, i)?;
        }
    }

    // Scratch blocks from fault injection carry their own patterns.
    for (p, size, seed) in scratch.drain(..) {
        // SAFETY: scratch blocks are live blocks of `size` bytes.
        if let Some(off) = unsafe { check_pattern(p, size, seed) } {
            return Err(RunError::Corruption(format!("scratch block clobbered at offset {off}")));
        }
        unsafe { target.free(p, size) }.map_err(alloc_err(events.len()))?;
    }

    let before_drain = target.validate();

    // Free whatever the trace left live so the allocator is empty on drop.
    for (d, &(p, size)) in table.iter().enumerate() {
        if !p.is_null() {
            verify(p, slot_of[d], size, size, events.len())?;
            // SAFETY: still live.
            unsafe { target.free(p, size) }.map_err(alloc_err(events.len()))?;
        }
    }
    let after_drain = target.validate();
    let validation = match (before_drain, after_drain) {
        (Some(a), _) if a.violation.is_some() => Some(a),
        (_, b) => b,
    };
    let stats = target.heap_stats();

    t.reuse.hit_rate = if t.reuse.candidates == 0 { 0.0 } else { t.reuse.hits as f64 / t.reuse.candidates as f64 };
    Ok(VerifiedOutcome { tally: t, stats, validation })
}

/// Points a freed block's link at a live block of the same size, then
/// allocates twice more of that size. The second allocation lands on the live
/// block, and its pattern overwrites the victim's.
fn inject_fault<T: ReplayTarget>(
    target: &mut T,
    table: &[(*mut u8, usize)],
    slot_of: &[Slot],
    scratch: &mut Vec<(*mut u8, usize, u64)>,
    at: usize,
) -> Result<(), RunError> {
    let victim = table.iter().enumerate().find(|(_, &(p, size))| !p.is_null() && (8..=1024).contains(&size));
    let Some((d, &(victim, size))) = victim else {
        return Err(RunError::Config(format!("no live small block to corrupt after event {at}")));
    };
    // SAFETY: `victim` is live with `size` bytes.
    if !unsafe { target.corrupt_link(victim, size) }.map_err(alloc_err(at))? {
        return Err(RunError::Config("allocator does not support fault injection".into()));
    }
    for k in 0..2u64 {
        let p = target.alloc(size).map_err(alloc_err(at))?;
        let seed = pattern_seed(u64::MAX - k, size);
        // SAFETY: block of `size` bytes as far as the allocator is concerned.
        unsafe { fill_pattern(p, size, seed) };
        scratch.push((p, size, seed));
    }
    // Check the victim now: an unchecked heap's free list is garbage past this point.
    // SAFETY: still live.
    if let Some(off) = unsafe { check_pattern(victim, size, pattern_seed(slot_of[d], size)) } {
        return Err(RunError::Corruption(format!("event {at}: slot {} ({size} B) clobbered at offset {off}", slot_of[d])));
    }
    // A policy that parks frees on a side list has not handed the bad link out
    // yet; the structural walk sees it there.
    match target.validate().and_then(|v| v.violation) {
        Some(violation) => Err(RunError::Corruption(format!("event {at}: validate failed: {violation}"))),
        None => Ok(()),
    }
}

fn timed_pass<T: ReplayTarget>(target: &mut T, events: &[TraceEvent]) -> Result<(f64, Latency), RunError> {
    let (dense, nslots) = densify(events);
    let mut table: Vec<(*mut u8, usize)> = vec![(std::ptr::null_mut(), 0); nslots];
    let mut total = 0.0f64;
    for (chunk, dchunk) in events.chunks(TIMING_BATCH).zip(dense.chunks(TIMING_BATCH)) {
        let start = Instant::now();
        for (e, &d) in chunk.iter().zip(dchunk) {
            let d = d as usize;
            match *e {
                TraceEvent::Alloc { size, .. } => {
                    let p = target.alloc(size).map_err(alloc_err(0))?;
                    // Touch the block so both allocators pay for first access alike.
                    unsafe { p.write_volatile(1) };
                    table[d] = (p, size);
                }
                TraceEvent::Free { .. } => {
                    let (p, size) = table[d];
                    unsafe { target.free(p, size) }.map_err(alloc_err(0))?;
                }
                TraceEvent::Realloc { size, .. } => {
                    let (p, old) = table[d];
                    let q = unsafe { target.realloc(p, old, size) }.map_err(alloc_err(0))?;
                    table[d] = (q, size);
                }
            }
        }
        total += start.elapsed().as_secs_f64();
    }
    black_box(&table);

    let sizes: Vec<usize> = events
        .iter()
        .filter_map(|e| match *e {
            TraceEvent::Alloc { size, .. } => Some(size),
            _ => None,
        })
        .take(TIMING_BATCH * 2)
        .collect();
    let latency = if sizes.is_empty() { Latency::default() } else { probe_latency(target, &sizes)? };
    Ok((total, latency))
}

fn probe_latency<T: ReplayTarget>(target: &mut T, sizes: &[usize]) -> Result<Latency, RunError> {
    let n = TIMING_BATCH;
    let size_at = |k: usize| sizes[k % sizes.len()];
    let mut blocks: Vec<(*mut u8, usize)> = Vec::with_capacity(n);
    let (mut a, mut f, mut r) = (Vec::new(), Vec::new(), Vec::new());
    for round in 0..PROBE_ROUNDS {
        blocks.clear();
        let start = Instant::now();
        for k in 0..n {
            let size = size_at(round + k);
            blocks.push((target.alloc(size).map_err(alloc_err(0))?, size));
        }
        a.push(start.elapsed().as_nanos() as f64 / n as f64);
        let start = Instant::now();
        for (k, b) in blocks.iter_mut().enumerate() {
            let new = size_at(round + k + 1);
            b.0 = unsafe { target.realloc(b.0, b.1, new) }.map_err(alloc_err(0))?;
            b.1 = new;
        }
        r.push(start.elapsed().as_nanos() as f64 / n as f64);
        let start = Instant::now();
        for &(p, size) in &blocks {
            unsafe { target.free(p, size) }.map_err(alloc_err(0))?;
        }
        f.push(start.elapsed().as_nanos() as f64 / n as f64);
    }
    Ok(Latency {
        alloc: LatencySummary::from_samples(a),
        free: LatencySummary::from_samples(f),
        realloc: LatencySummary::from_samples(r),
    })
}

fn heap_config(config: &RunConfig, checked: bool) -> HeapConfig {
    HeapConfig::default().with_policy(config.policy).with_checked(checked)
}

fn build_report(config: &RunConfig, source: &str, events: &[TraceEvent], out: VerifiedOutcome, timing: Option<Timing>) -> Result<StatsReport, RunError> {
    if let Some(v) = &out.validation {
        if let Some(violation) = &v.violation {
            return Err(RunError::Corruption(format!("validate failed: {violation}")));
        }
    }
    let t = out.tally;
    let stats = out.stats;
    let peak_live = stats.as_ref().map_or(t.peak_requested, |s| s.peak_live);
    let peak_committed = stats.as_ref().map(|s| s.peak_committed);
    Ok(StatsReport {
        schema_version: SCHEMA_VERSION,
        allocator: config.allocator,
        policy: (config.allocator == AllocatorKind::Stalloc).then_some(config.policy),
        backend: (config.allocator == AllocatorKind::Stalloc).then_some(config.backend),
        source: source.to_string(),
        events: events.len() as u64,
        alloc_events: t.allocs,
        free_events: t.frees,
        realloc_events: t.reallocs,
        peak_requested: t.peak_requested,
        peak_live,
        peak_committed,
        fragmentation_ratio: peak_committed.map(|c| c as f64 / peak_live.max(1) as f64),
        final_bytes_live: stats.as_ref().map(|s| s.bytes_live),
        final_live_segments: stats.as_ref().map(|s| s.page_types.iter().map(|p| p.live_segments).sum()),
        final_cached_segments: stats.as_ref().map(|s| s.page_types.iter().map(|p| p.cached_segments).sum()),
        final_committed: stats.as_ref().map(|s| s.committed_bytes),
        final_reserved: stats.as_ref().map(|s| s.reserved_bytes),
        backend_counters: stats.as_ref().map(|s| s.backend),
        reuse: t.reuse,
        validated: out.validation.is_some(),
        timing,
    })
}

fn run_with<T: ReplayTarget>(
    config: &RunConfig,
    source: &str,
    events: &[TraceEvent],
    mut make: impl FnMut(bool) -> Result<T, RunError>,
) -> Result<StatsReport, RunError> {
    let outcome = {
        let mut target = make(config.checked)?;
        verified_pass(&mut target, events, config.inject_fault_after)?
    };
    let timing = if config.timing {
        let mut target = make(false)?;
        let (secs, latency) = timed_pass(&mut target, events)?;
        Some(Timing {
            wall_time_s: secs,
            ops_per_second: if secs > 0.0 { events.len() as f64 / secs } else { 0.0 },
            latency,
        })
    } else {
        None
    };
    build_report(config, source, events, outcome, timing)
}

/// Replays `events` under `config` and reports.
pub fn run(events: &[TraceEvent], config: &RunConfig, source: &str) -> Result<StatsReport, RunError> {
    let heap_err = |e: AllocError| RunError::Config(format!("heap construction: {e}"));
    match (config.allocator, config.backend) {
        (AllocatorKind::System, _) => run_with(config, source, events, |_| Ok(SystemTarget)),
        (AllocatorKind::Stalloc, BackendKind::Sim) => run_with(config, source, events, |checked| {
            Heap::with_config(SimBackend::new().without_log(), heap_config(config, checked)).map_err(heap_err)
        }),
        #[cfg(unix)]
        (AllocatorKind::Stalloc, BackendKind::Real) => run_with(config, source, events, |checked| {
            Heap::with_config(crate::os::MmapBackend::new(), heap_config(config, checked)).map_err(heap_err)
        }),
        #[cfg(not(unix))]
        (AllocatorKind::Stalloc, BackendKind::Real) => Err(RunError::Config("real backend needs a unix host".into())),
    }
}

/// Runs every config `repeat` times (keeping the run with median throughput)
/// and reports ratios against the first config.
pub fn compare(
    events: &[TraceEvent],
    configs: &[RunConfig],
    source: &str,
    repeat: usize,
) -> Result<crate::report::Comparison, RunError> {
    if configs.len() < 2 {
        return Err(RunError::Config("compare needs at least two configs".into()));
    }
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        let config = config.with_timing(true);
        let mut runs = (0..repeat.max(1)).map(|_| run(events, &config, source)).collect::<Result<Vec<_>, _>>()?;
        runs.sort_by(|a, b| ops(a).total_cmp(&ops(b)));
        reports.push(runs.swap_remove(runs.len() / 2));
    }
    let base = &reports[0];
    let ratios = configs
        .iter()
        .zip(&reports)
        .map(|(c, r)| crate::report::Ratio {
            config: c.label(),
            speedup: (ops(base) > 0.0).then(|| ops(r) / ops(base)),
            memory_ratio: match (r.peak_committed, base.peak_committed) {
                (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
                _ => None,
            },
        })
        .collect();
    Ok(crate::report::Comparison {
        schema_version: SCHEMA_VERSION,
        configs: configs.iter().map(RunConfig::label).collect(),
        reports,
        ratios,
    })
}

/// The class table as JSON: `{"huge_granule", "large_max", "classes": [{index, block_size, page_type}]}`.
pub fn class_table_json() -> String {
    let v = serde_json::json!({
        "huge_granule": stalloc::size_classes::MIN_OS_PAGE_SIZE,
        "large_max": stalloc::size_classes::LARGE_MAX_BLOCK,
        "classes": stalloc::class_table(),
    });
    serde_json::to_string_pretty(&v).expect("class table serializes")
}

fn ops(r: &StatsReport) -> f64 {
    r.timing.map_or(0.0, |t| t.ops_per_second)
}
