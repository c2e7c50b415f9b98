//! Virtual-memory backends.
//!
//! A backend hands out reservations (address space without guaranteed
//! physical backing) and commits, decommits or releases page ranges inside
//! them. All counter bookkeeping goes through [`CommitLedger`] so every
//! backend reports identical numbers for identical call sequences.

mod ledger;
mod sim;

pub use ledger::CommitLedger;
pub use sim::{SimBackend, SimCall, SimFault, SimOp};

use crate::error::AllocError;

/// A page-aligned address range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AddressRange {
    pub start: usize,
    pub length: usize,
}

impl AddressRange {
    #[inline]
    pub const fn new(start: usize, length: usize) -> Self {
        AddressRange { start, length }
    }

    #[inline]
    pub const fn end(&self) -> usize {
        self.start + self.length
    }

    #[inline]
    pub const fn contains(&self, addr: usize) -> bool {
        addr >= self.start && addr < self.end()
    }

    #[inline]
    pub const fn contains_range(&self, other: &AddressRange) -> bool {
        other.start >= self.start && other.end() <= self.end()
    }
}

/// Syscall counters and memory gauges of a backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BackendCounters {
    pub reserve_count: u64,
    pub commit_count: u64,
    pub decommit_count: u64,
    pub release_count: u64,
    pub committed_bytes: usize,
    pub reserved_bytes: usize,
    /// False when the platform could not return pages and decommit degraded
    /// to bookkeeping only.
    pub decommit_effective: bool,
}

/// Reserve/commit/decommit/release over address ranges.
///
/// Preconditions are checked by the ledger and reported as
/// [`AllocError::ContractViolation`]; refusals by the OS are
/// [`AllocError::OutOfMemory`]. Freshly committed memory always reads as zero.
pub trait OsBackend {
    fn os_page_size(&self) -> usize;

    fn reserve(&mut self, length: usize, alignment: usize) -> Result<AddressRange, AllocError>;

    fn commit(&mut self, range: AddressRange) -> Result<(), AllocError>;

    fn decommit(&mut self, range: AddressRange) -> Result<(), AllocError>;

    /// `range` must be an entire live reservation.
    fn release(&mut self, range: AddressRange) -> Result<(), AllocError>;

    fn counters(&self) -> BackendCounters;
}
