use alloc::alloc::{alloc_zeroed, dealloc, Layout};
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ptr::{self, NonNull};

use super::{AddressRange, BackendCounters, CommitLedger, OsBackend};
use crate::error::AllocError;

/// Byte written over pages when they are decommitted, so stale accesses
/// through raw pointers are visible in later checks.
pub const DECOMMIT_POISON: u8 = 0xDB;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SimOp {
    Reserve,
    Commit,
    Decommit,
    Release,
}

/// One backend call, with the address expressed relative to its reservation
/// so that logs from different runs compare equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimCall {
    pub op: SimOp,
    /// Ordinal of the reservation, in reserve order.
    pub reservation: u64,
    pub offset: usize,
    pub length: usize,
    pub alignment: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimFault {
    /// The address is not inside any live reservation.
    Unreserved { addr: usize },
    /// The page is reserved but not committed (never, or since a decommit).
    Uncommitted { addr: usize },
}

struct HostBlock {
    base: NonNull<u8>,
    layout: Layout,
    ordinal: u64,
    /// Pages whose contents were poisoned by a decommit.
    dirty: Vec<u64>,
}

/// Deterministic backend for tests and reproducible benchmarks.
///
/// Reservations are backed by zeroed host allocations so the heap can use
/// real pointers; commit state lives in the shared ledger. Decommitted pages
/// are poisoned and zero-filled again on recommit. [`SimBackend::read`] and
/// [`SimBackend::write`] fault on pages that are not committed.
pub struct SimBackend {
    ledger: CommitLedger,
    blocks: BTreeMap<usize, HostBlock>,
    next_ordinal: u64,
    log: Vec<SimCall>,
    logging: bool,
    reserve_limit: Option<usize>,
}

impl Default for SimBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl SimBackend {
    pub fn new() -> Self {
        Self::with_page_size(4096)
    }

    pub fn with_page_size(os_page_size: usize) -> Self {
        SimBackend {
            ledger: CommitLedger::new(os_page_size),
            blocks: BTreeMap::new(),
            next_ordinal: 0,
            log: Vec::new(),
            logging: true,
            reserve_limit: None,
        }
    }

    /// Disables the call log (long runs would otherwise grow it unboundedly).
    pub fn without_log(mut self) -> Self {
        self.logging = false;
        self
    }

    /// Makes reservations fail with `OutOfMemory` once `reserved_bytes`
    /// would exceed `limit`.
    pub fn set_reserve_limit(&mut self, limit: Option<usize>) {
        self.reserve_limit = limit;
    }

    pub fn call_log(&self) -> &[SimCall] {
        &self.log
    }

    pub fn ledger(&self) -> &CommitLedger {
        &self.ledger
    }

    fn block_for(&self, addr: usize) -> Option<(&usize, &HostBlock)> {
        let (start, block) = self.blocks.range(..=addr).next_back()?;
        (addr < start + block.layout.size()).then_some((start, block))
    }

    fn log_call(&mut self, op: SimOp, range: AddressRange, alignment: usize) {
        if !self.logging {
            return;
        }
        let (start, ordinal) = match self.block_for(range.start) {
            Some((&s, b)) => (s, b.ordinal),
            None => (range.start, u64::MAX),
        };
        self.log.push(SimCall { op, reservation: ordinal, offset: range.start - start, length: range.length, alignment });
    }

    fn check_access(&self, addr: usize, len: usize) -> Result<(), SimFault> {
        if self.block_for(addr).is_none() {
            return Err(SimFault::Unreserved { addr });
        }
        let page = self.ledger.os_page_size();
        let mut p = addr & !(page - 1);
        while p < addr + len.max(1) {
            if !self.ledger.is_committed(&AddressRange::new(p, page)) {
                return Err(SimFault::Uncommitted { addr: p.max(addr) });
            }
            p += page;
        }
        Ok(())
    }

    /// Checked read of committed memory.
    pub fn read(&self, addr: usize, buf: &mut [u8]) -> Result<(), SimFault> {
        self.check_access(addr, buf.len())?;
        // SAFETY: the range lies inside a live host block (checked above).
        unsafe { ptr::copy_nonoverlapping(addr as *const u8, buf.as_mut_ptr(), buf.len()) };
        Ok(())
    }

    pub fn read_u8(&self, addr: usize) -> Result<u8, SimFault> {
        let mut b = [0u8];
        self.read(addr, &mut b)?;
        Ok(b[0])
    }

    /// Checked write to committed memory.
    pub fn write(&mut self, addr: usize, data: &[u8]) -> Result<(), SimFault> {
        self.check_access(addr, data.len())?;
        // SAFETY: as in `read`.
        unsafe { ptr::copy_nonoverlapping(data.as_ptr(), addr as *mut u8, data.len()) };
        Ok(())
    }
}

impl OsBackend for SimBackend {
    fn os_page_size(&self) -> usize {
        self.ledger.os_page_size()
    }

    fn reserve(&mut self, length: usize, alignment: usize) -> Result<AddressRange, AllocError> {
        self.ledger.check_reserve(length, alignment)?;
        if let Some(limit) = self.reserve_limit {
            if self.ledger.counters().reserved_bytes + length > limit {
                return Err(AllocError::OutOfMemory);
            }
        }
        let layout = Layout::from_size_align(length, alignment).map_err(|_| AllocError::OutOfMemory)?;
        // SAFETY: length is non-zero (checked by the ledger).
        let base = NonNull::new(unsafe { alloc_zeroed(layout) }).ok_or(AllocError::OutOfMemory)?;
        let range = AddressRange::new(base.as_ptr() as usize, length);
        self.ledger.record_reserve(range)?;
        let pages = length / self.ledger.os_page_size();
        self.blocks.insert(
            range.start,
            HostBlock { base, layout, ordinal: self.next_ordinal, dirty: vec![0; pages.div_ceil(64)] },
        );
        self.next_ordinal += 1;
        self.log_call(SimOp::Reserve, range, alignment);
        Ok(range)
    }

    fn commit(&mut self, range: AddressRange) -> Result<(), AllocError> {
        let page = self.ledger.os_page_size();
        let blocks = &mut self.blocks;
        self.ledger.record_commit(range, |p| {
            let (&start, block) = blocks.range_mut(..=p).next_back().expect("ledger and host blocks agree");
            let i = (p - start) / page;
            if block.dirty[i / 64] & (1 << (i % 64)) != 0 {
                block.dirty[i / 64] &= !(1 << (i % 64));
                // SAFETY: p..p+page is inside the host block.
                unsafe { ptr::write_bytes(p as *mut u8, 0, page) };
            }
        })?;
        self.log_call(SimOp::Commit, range, 0);
        Ok(())
    }

    fn decommit(&mut self, range: AddressRange) -> Result<(), AllocError> {
        let page = self.ledger.os_page_size();
        let blocks = &mut self.blocks;
        self.ledger.record_decommit(range, |p| {
            let (&start, block) = blocks.range_mut(..=p).next_back().expect("ledger and host blocks agree");
            let i = (p - start) / page;
            block.dirty[i / 64] |= 1 << (i % 64);
            // SAFETY: p..p+page is inside the host block.
            unsafe { ptr::write_bytes(p as *mut u8, DECOMMIT_POISON, page) };
        })?;
        self.log_call(SimOp::Decommit, range, 0);
        Ok(())
    }

    fn release(&mut self, range: AddressRange) -> Result<(), AllocError> {
        self.log_call(SimOp::Release, range, 0);
        self.ledger.record_release(range)?;
        let block = self.blocks.remove(&range.start).expect("ledger and host blocks agree");
        // SAFETY: allocated in `reserve` with this exact layout.
        unsafe { dealloc(block.base.as_ptr(), block.layout) };
        Ok(())
    }

    fn counters(&self) -> BackendCounters {
        self.ledger.counters()
    }
}

impl Drop for SimBackend {
    fn drop(&mut self) {
        for (_, block) in core::mem::take(&mut self.blocks) {
            // SAFETY: allocated in `reserve` with this exact layout.
            unsafe { dealloc(block.base.as_ptr(), block.layout) };
        }
    }
}
