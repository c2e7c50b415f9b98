use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{AddressRange, BackendCounters};
use crate::error::AllocError;

struct Reservation {
    length: usize,
    /// One bit per OS page.
    committed: Vec<u64>,
    committed_pages: usize,
}

/// Reservation and commit-state bookkeeping shared by all backends.
///
/// Tracks commit state per OS page so that `committed_bytes` only moves by
/// pages whose state actually changes.
pub struct CommitLedger {
    os_page_size: usize,
    reservations: BTreeMap<usize, Reservation>,
    counters: BackendCounters,
}

impl CommitLedger {
    pub fn new(os_page_size: usize) -> Self {
        assert!(os_page_size.is_power_of_two(), "OS page size must be a power of two");
        CommitLedger {
            os_page_size,
            reservations: BTreeMap::new(),
            counters: BackendCounters { decommit_effective: true, ..BackendCounters::default() },
        }
    }

    #[inline]
    pub fn os_page_size(&self) -> usize {
        self.os_page_size
    }

    #[inline]
    pub fn counters(&self) -> BackendCounters {
        self.counters
    }

    pub fn set_decommit_effective(&mut self, effective: bool) {
        self.counters.decommit_effective = effective;
    }

    /// Validates the arguments of a reserve call before the OS is asked.
    pub fn check_reserve(&self, length: usize, alignment: usize) -> Result<(), AllocError> {
        if length == 0 || !length.is_multiple_of(self.os_page_size) {
            return Err(AllocError::ContractViolation("reserve length must be a positive multiple of the OS page"));
        }
        if !alignment.is_power_of_two() || alignment < self.os_page_size {
            return Err(AllocError::ContractViolation("reserve alignment must be a power of two >= OS page"));
        }
        Ok(())
    }

    pub fn record_reserve(&mut self, range: AddressRange) -> Result<(), AllocError> {
        if self.overlaps(&range) {
            return Err(AllocError::ContractViolation("reservation overlaps a live reservation"));
        }
        let pages = range.length / self.os_page_size;
        self.reservations.insert(
            range.start,
            Reservation { length: range.length, committed: vec![0; pages.div_ceil(64)], committed_pages: 0 },
        );
        self.counters.reserve_count += 1;
        self.counters.reserved_bytes += range.length;
        Ok(())
    }

    fn overlaps(&self, range: &AddressRange) -> bool {
        if let Some((&start, r)) = self.reservations.range(..range.end()).next_back() {
            return start + r.length > range.start;
        }
        false
    }

    /// Start of the reservation that fully contains `range`.
    pub fn containing_reservation(&self, range: &AddressRange) -> Option<AddressRange> {
        let (&start, r) = self.reservations.range(..=range.start).next_back()?;
        let whole = AddressRange::new(start, r.length);
        whole.contains_range(range).then_some(whole)
    }

    fn check_subrange(&self, range: &AddressRange) -> Result<usize, AllocError> {
        if !range.start.is_multiple_of(self.os_page_size) || !range.length.is_multiple_of(self.os_page_size) {
            return Err(AllocError::ContractViolation("range is not OS-page aligned"));
        }
        self.containing_reservation(range)
            .map(|r| r.start)
            .ok_or(AllocError::ContractViolation("range is not inside a live reservation"))
    }

    /// Marks `range` committed. `on_new_page` sees every page that was not
    /// committed before. Returns the newly committed byte count.
    pub fn record_commit(
        &mut self,
        range: AddressRange,
        mut on_new_page: impl FnMut(usize),
    ) -> Result<usize, AllocError> {
        let base = self.check_subrange(&range)?;
        let page = self.os_page_size;
        let res = self.reservations.get_mut(&base).expect("reservation checked above");
        let first = (range.start - base) / page;
        let mut fresh = 0;
        for i in first..first + range.length / page {
            let (word, bit) = (i / 64, 1u64 << (i % 64));
            if res.committed[word] & bit == 0 {
                res.committed[word] |= bit;
                fresh += 1;
                on_new_page(base + i * page);
            }
        }
        res.committed_pages += fresh;
        self.counters.commit_count += 1;
        self.counters.committed_bytes += fresh * page;
        Ok(fresh * page)
    }

    /// Marks `range` decommitted. `on_dropped_page` sees every page that was
    /// committed before. Returns the decommitted byte count.
    pub fn record_decommit(
        &mut self,
        range: AddressRange,
        mut on_dropped_page: impl FnMut(usize),
    ) -> Result<usize, AllocError> {
        let base = self.check_subrange(&range)?;
        let page = self.os_page_size;
        let res = self.reservations.get_mut(&base).expect("reservation checked above");
        let first = (range.start - base) / page;
        let mut dropped = 0;
        for i in first..first + range.length / page {
            let (word, bit) = (i / 64, 1u64 << (i % 64));
            if res.committed[word] & bit != 0 {
                res.committed[word] &= !bit;
                dropped += 1;
                on_dropped_page(base + i * page);
            }
        }
        res.committed_pages -= dropped;
        self.counters.decommit_count += 1;
        self.counters.committed_bytes -= dropped * page;
        Ok(dropped * page)
    }

    /// Drops an entire reservation. Partial releases are contract violations.
    pub fn record_release(&mut self, range: AddressRange) -> Result<(), AllocError> {
        match self.reservations.get(&range.start) {
            Some(r) if r.length == range.length => {}
            Some(_) => return Err(AllocError::ContractViolation("partial release of a reservation")),
            None => return Err(AllocError::ContractViolation("release of an unknown reservation")),
        }
        let r = self.reservations.remove(&range.start).expect("checked above");
        self.counters.release_count += 1;
        self.counters.reserved_bytes -= r.length;
        self.counters.committed_bytes -= r.committed_pages * self.os_page_size;
        Ok(())
    }

    /// Whether every OS page of `range` is reserved and committed.
    pub fn is_committed(&self, range: &AddressRange) -> bool {
        let Some(whole) = self.containing_reservation(range) else { return false };
        let res = &self.reservations[&whole.start];
        let page = self.os_page_size;
        let first = (range.start - whole.start) / page;
        let last = (range.end().saturating_sub(1) - whole.start) / page;
        (first..=last).all(|i| res.committed[i / 64] & (1u64 << (i % 64)) != 0)
    }

    /// Exact committed bytes recomputed from the per-page state.
    pub fn recount_committed(&self) -> usize {
        self.reservations
            .values()
            .map(|r| r.committed.iter().map(|w| w.count_ones() as usize).sum::<usize>())
            .sum::<usize>()
            * self.os_page_size
    }

    pub fn reservations(&self) -> impl Iterator<Item = AddressRange> + '_ {
        self.reservations.iter().map(|(&s, r)| AddressRange::new(s, r.length))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE: usize = 4096;

    fn ledger_with(start: usize, len: usize) -> CommitLedger {
        let mut l = CommitLedger::new(PAGE);
        l.record_reserve(AddressRange::new(start, len)).unwrap();
        l
    }

    #[test]
    fn commit_is_idempotent() {
        let mut l = ledger_with(0x40_0000, 0x40_0000);
        let r = AddressRange::new(0x40_0000, 64 * 1024);
        assert_eq!(l.record_commit(r, |_| {}).unwrap(), 64 * 1024);
        assert_eq!(l.record_commit(r, |_| {}).unwrap(), 0);
        assert_eq!(l.counters().committed_bytes, 64 * 1024);
        assert_eq!(l.counters().commit_count, 2);
    }

    #[test]
    fn decommit_then_release_nets_zero() {
        let mut l = ledger_with(0x40_0000, 0x40_0000);
        let r = AddressRange::new(0x41_0000, 64 * 1024);
        l.record_commit(r, |_| {}).unwrap();
        l.record_decommit(r, |_| {}).unwrap();
        assert_eq!(l.counters().committed_bytes, 0);
        l.record_release(AddressRange::new(0x40_0000, 0x40_0000)).unwrap();
        assert_eq!(l.counters().reserved_bytes, 0);
        assert_eq!(l.counters().release_count, 1);
    }

    #[test]
    fn partial_release_is_rejected() {
        let mut l = ledger_with(0x40_0000, 0x40_0000);
        assert!(matches!(
            l.record_release(AddressRange::new(0x40_0000, PAGE)),
            Err(AllocError::ContractViolation(_))
        ));
    }

    #[test]
    fn out_of_reservation_commit_is_rejected() {
        let mut l = ledger_with(0x40_0000, 0x40_0000);
        assert!(l.record_commit(AddressRange::new(0x80_0000, PAGE), |_| {}).is_err());
        assert!(l.record_commit(AddressRange::new(0x40_0001, PAGE), |_| {}).is_err());
    }

    #[test]
    fn overlapping_reserve_is_rejected() {
        let mut l = ledger_with(0x40_0000, 0x40_0000);
        assert!(l.record_reserve(AddressRange::new(0x7f_f000, PAGE * 2)).is_err());
        assert!(l.record_reserve(AddressRange::new(0x80_0000, PAGE)).is_ok());
    }
}
