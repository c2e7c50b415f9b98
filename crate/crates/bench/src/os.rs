//! Backend over the host's virtual-memory calls.

use stalloc::{AddressRange, AllocError, BackendCounters, CommitLedger, OsBackend};

/// Reserves with `mmap(PROT_NONE)`, commits with `mprotect`, decommits with
/// `madvise(MADV_DONTNEED)` plus `mprotect(PROT_NONE)`, releases with `munmap`.
pub struct MmapBackend {
    ledger: CommitLedger,
}

impl Default for MmapBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MmapBackend {
    pub fn new() -> Self {
        // SAFETY: sysconf has no preconditions.
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        let page = if page > 0 { page as usize } else { 4096 };
        MmapBackend { ledger: CommitLedger::new(page) }
    }

    fn protect(range: AddressRange, prot: libc::c_int) -> Result<(), AllocError> {
        // SAFETY: the ledger verified `range` lies inside one of our mappings.
        let rc = unsafe { libc::mprotect(range.start as *mut libc::c_void, range.length, prot) };
        if rc == 0 {
            Ok(())
        } else {
            Err(AllocError::OutOfMemory)
        }
    }
}

impl OsBackend for MmapBackend {
    fn os_page_size(&self) -> usize {
        self.ledger.os_page_size()
    }

    fn reserve(&mut self, length: usize, alignment: usize) -> Result<AddressRange, AllocError> {
        self.ledger.check_reserve(length, alignment)?;
        let page = self.ledger.os_page_size();
        let extra = alignment.saturating_sub(page);
        let total = length.checked_add(extra).ok_or(AllocError::OutOfMemory)?;
        // SAFETY: anonymous private mapping with no address hint.
        let raw = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                total,
                libc::PROT_NONE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                -1,
                0,
            )
        };
        if raw == libc::MAP_FAILED {
            return Err(AllocError::OutOfMemory);
        }
        let raw = raw as usize;
        let start = (raw + alignment - 1) & !(alignment - 1);
        // SAFETY: trimming the unaligned head and tail of our own mapping.
        unsafe {
            if start > raw {
                libc::munmap(raw as *mut libc::c_void, start - raw);
            }
            let tail = raw + total - (start + length);
            if tail > 0 {
                libc::munmap((start + length) as *mut libc::c_void, tail);
            }
        }
        let range = AddressRange::new(start, length);
        self.ledger.record_reserve(range)?;
        Ok(range)
    }

    fn commit(&mut self, range: AddressRange) -> Result<(), AllocError> {
        if self.ledger.containing_reservation(&range).is_none() {
            return Err(AllocError::ContractViolation("range is not inside a live reservation"));
        }
        Self::protect(range, libc::PROT_READ | libc::PROT_WRITE)?;
        self.ledger.record_commit(range, |_| {})?;
        Ok(())
    }

    fn decommit(&mut self, range: AddressRange) -> Result<(), AllocError> {
        if self.ledger.containing_reservation(&range).is_none() {
            return Err(AllocError::ContractViolation("range is not inside a live reservation"));
        }
        // SAFETY: inside one of our mappings.
        let rc = unsafe { libc::madvise(range.start as *mut libc::c_void, range.length, libc::MADV_DONTNEED) };
        if rc != 0 {
            self.ledger.set_decommit_effective(false);
        }
        Self::protect(range, libc::PROT_NONE)?;
        self.ledger.record_decommit(range, |_| {})?;
        Ok(())
    }

    fn release(&mut self, range: AddressRange) -> Result<(), AllocError> {
        self.ledger.record_release(range)?;
        // SAFETY: `range` was an entire reservation of ours.
        unsafe { libc::munmap(range.start as *mut libc::c_void, range.length) };
        Ok(())
    }

    fn counters(&self) -> BackendCounters {
        self.ledger.counters()
    }
}

impl Drop for MmapBackend {
    fn drop(&mut self) {
        let live: Vec<AddressRange> = self.ledger.reservations().collect();
        for r in live {
            // SAFETY: every recorded reservation is a mapping we own.
            unsafe { libc::munmap(r.start as *mut libc::c_void, r.length) };
        }
    }
}
