//! Segments: 4 MiB aligned reservations carrying an in-band header with the
//! page metadata array, plus the segment cache and the huge-segment table.
//!
//! Commit policy per segment:
//! - the first small and first medium segment commit their header at once
//!   and each page only when it is first handed out;
//! - later segments are committed whole at acquisition;
//! - large segments always commit their single page up to the carve
//!   frontier, so a lone large block never pins a whole segment of memory;
//! - a freed segment parks in a one-slot-per-type cache and is reused with
//!   no backend calls. Its data pages are decommitted once it has sat in the
//!   cache for [`PURGE_DELAY`] slow-path events, or on request (`Heap::purge_cache`).

use alloc::collections::{BTreeMap, BTreeSet};
use core::mem::size_of;
use core::ptr;

use crate::backend::{AddressRange, OsBackend};
use crate::error::AllocError;
use crate::page::PageMeta;
use crate::size_classes::{
    huge_block_size, round_up, PageType, HUGE_CLASS, SEGMENT_MASK, SEGMENT_SIZE, SMALL_PAGE_SIZE,
};

pub(crate) const SEGMENT_MAGIC: usize = 0x5354_414C_4C4F_4321;

/// Slow-path events a cached segment keeps its data pages committed.
pub const PURGE_DELAY: u64 = 256;

/// Segment metadata at offset 0 of every segment, followed by the page array.
#[repr(C)]
pub struct SegmentHeader {
    pub(crate) magic: usize,
    pub(crate) page_type: PageType,
    /// Data pages are committed on first use rather than at acquisition.
    pub(crate) deferred_commit: bool,
    pub(crate) cached: bool,
    pub(crate) in_slot_list: bool,
    /// Cached with data pages still committed.
    pub(crate) purge_pending: bool,
    pub(crate) reserved_pages: u32,
    /// Slots assigned to a size class.
    pub(crate) used_pages: u32,
    /// Slots holding at least one live block.
    pub(crate) live_pages: u32,
    pub(crate) segment_size: usize,
    pub(crate) first_page_offset: usize,
    /// Committed length of the header pages.
    pub(crate) header_commit: usize,
    /// Committed bytes below `first_page_offset`.
    pub(crate) meta_committed: usize,
    /// Bit per slot that is usable and unassigned.
    pub(crate) free_slots: u64,
    pub(crate) next_free: *mut SegmentHeader,
    pub(crate) prev_free: *mut SegmentHeader,
    pub(crate) cached_at: u64,
}

const _: () = assert!(size_of::<SegmentHeader>().is_multiple_of(8));

/// Bytes of header plus page array for a page type.
pub const fn header_bytes(page_type: PageType) -> usize {
    size_of::<SegmentHeader>() + page_type.params().pages_per_segment * size_of::<PageMeta>()
}

/// Offset of the first data byte for a page type, given the OS page size.
pub const fn first_page_offset(page_type: PageType, os_page: usize) -> usize {
    match page_type {
        PageType::Small => round_up(header_bytes(page_type), SMALL_PAGE_SIZE),
        _ => round_up(header_bytes(page_type), os_page),
    }
}

impl SegmentHeader {
    #[inline(always)]
    pub(crate) fn base(&self) -> usize {
        self as *const _ as usize
    }

    #[inline(always)]
    pub(crate) unsafe fn pages(seg: *mut SegmentHeader) -> *mut PageMeta {
        seg.cast::<u8>().add(size_of::<SegmentHeader>()).cast()
    }

    #[inline(always)]
    pub(crate) unsafe fn page(seg: *mut SegmentHeader, slot: usize) -> *mut PageMeta {
        Self::pages(seg).add(slot)
    }

    /// Segment owning a non-huge page's metadata.
    #[inline(always)]
    pub(crate) fn of_page(page: *mut PageMeta) -> *mut SegmentHeader {
        (page as usize & !SEGMENT_MASK) as *mut SegmentHeader
    }

    /// Page slot covering `addr`, which must lie in this segment's data area.
    #[inline(always)]
    pub(crate) unsafe fn page_of_addr(seg: *mut SegmentHeader, addr: usize) -> *mut PageMeta {
        let shift = (*seg).page_type.page_shift();
        Self::page(seg, (addr - seg as usize) >> shift)
    }

    /// Data range of a slot as `(start, len)`; `len` is 0 for slots fully
    /// covered by the header.
    pub(crate) fn slot_range(&self, slot: usize) -> (usize, usize) {
        let base = self.base();
        let page_size = match self.page_type {
            PageType::Large | PageType::Huge => self.segment_size,
            t => t.params().page_size,
        };
        let start = (slot * page_size).max(self.first_page_offset);
        let end = (slot + 1) * page_size;
        (base + start, end.saturating_sub(start))
    }

    pub fn page_type(&self) -> PageType {
        self.page_type
    }

    pub fn used_pages(&self) -> usize {
        self.used_pages as usize
    }

    pub fn reserved_pages(&self) -> usize {
        self.reserved_pages as usize
    }

    pub fn first_page_offset(&self) -> usize {
        self.first_page_offset
    }

    pub fn segment_size(&self) -> usize {
        self.segment_size
    }

    pub fn is_deferred(&self) -> bool {
        self.deferred_commit
    }

    /// Committed bytes of this segment, header included.
    pub fn committed_bytes(&self) -> usize {
        let seg = self as *const _ as *mut SegmentHeader;
        // SAFETY: the page array follows the header.
        self.meta_committed
            + (0..self.reserved_pages as usize)
                .map(|i| unsafe { (*Self::page(seg, i)).committed })
                .sum::<usize>()
    }

    fn usable_slot_mask(&self) -> u64 {
        (0..self.reserved_pages as usize)
            .filter(|&i| self.slot_range(i).1 > 0)
            .fold(0u64, |m, i| m | (1 << i))
    }

    /// Takes the lowest free slot.
    pub(crate) fn claim_slot(&mut self) -> usize {
        debug_assert!(self.free_slots != 0);
        let slot = self.free_slots.trailing_zeros() as usize;
        self.free_slots &= !(1 << slot);
        self.used_pages += 1;
        slot
    }
}

/// Segment bookkeeping owned by the heap.
pub(crate) struct SegmentManager {
    pub(crate) os_page: usize,
    pub(crate) cache: [*mut SegmentHeader; 3],
    pub(crate) cache_enabled: bool,
    deferred_enabled: bool,
    first_taken: [bool; 3],
    slot_lists: [*mut SegmentHeader; 3],
    /// Bases of live (non-cached) small, medium and large segments.
    pub(crate) live: BTreeSet<usize>,
    /// Huge segments by base address, with their reservation length.
    pub(crate) huge: BTreeMap<usize, usize>,
    huge_lo: usize,
    huge_hi: usize,
    pub(crate) live_count: [usize; 4],
}

impl SegmentManager {
    pub(crate) fn new(os_page: usize, cache_enabled: bool, deferred_enabled: bool) -> Self {
        SegmentManager {
            os_page,
            cache: [ptr::null_mut(); 3],
            cache_enabled,
            deferred_enabled,
            first_taken: [false; 3],
            slot_lists: [ptr::null_mut(); 3],
            live: BTreeSet::new(),
            huge: BTreeMap::new(),
            huge_lo: usize::MAX,
            huge_hi: 0,
            live_count: [0; 4],
        }
    }

    pub(crate) fn cached_count(&self, page_type: PageType) -> usize {
        match page_type {
            PageType::Huge => 0,
            t => usize::from(!self.cache[t.index()].is_null()),
        }
    }

    /// Segment of a huge block, if `addr` lies in one.
    #[inline(always)]
    pub(crate) fn huge_segment_of(&self, addr: usize) -> Option<*mut SegmentHeader> {
        if addr < self.huge_lo || addr >= self.huge_hi {
            return None;
        }
        let (&base, &len) = self.huge.range(..=addr).next_back()?;
        (addr < base + len).then_some(base as *mut SegmentHeader)
    }

    /// Segment with an unassigned slot of `page_type`, if any.
    pub(crate) fn segment_with_free_slot(&self, page_type: PageType) -> Option<*mut SegmentHeader> {
        let head = self.slot_lists[page_type.index()];
        (!head.is_null()).then_some(head)
    }

    pub(crate) unsafe fn push_slot_list(&mut self, seg: *mut SegmentHeader) {
        let s = &mut *seg;
        if s.in_slot_list || s.free_slots == 0 {
            return;
        }
        let head = &mut self.slot_lists[s.page_type.index()];
        s.prev_free = ptr::null_mut();
        s.next_free = *head;
        if !head.is_null() {
            (**head).prev_free = seg;
        }
        *head = seg;
        s.in_slot_list = true;
    }

    pub(crate) unsafe fn remove_slot_list(&mut self, seg: *mut SegmentHeader) {
        let s = &mut *seg;
        if !s.in_slot_list {
            return;
        }
        if s.prev_free.is_null() {
            self.slot_lists[s.page_type.index()] = s.next_free;
        } else {
            (*s.prev_free).next_free = s.next_free;
        }
        if !s.next_free.is_null() {
            (*s.next_free).prev_free = s.prev_free;
        }
        s.next_free = ptr::null_mut();
        s.prev_free = ptr::null_mut();
        s.in_slot_list = false;
    }

    /// Takes the lowest free slot of `seg`, dropping it from the slot list when full.
    pub(crate) unsafe fn claim_slot(&mut self, seg: *mut SegmentHeader) -> usize {
        let slot = (*seg).claim_slot();
        if (*seg).free_slots == 0 {
            self.remove_slot_list(seg);
        }
        slot
    }

    pub(crate) unsafe fn release_slot(&mut self, seg: *mut SegmentHeader, slot: usize) {
        let page = &mut *SegmentHeader::page(seg, slot);
        page.in_use = false;
        page.free = ptr::null_mut();
        page.local_free = ptr::null_mut();
        page.shared_free = ptr::null_mut();
        page.prev = ptr::null_mut();
        page.next = ptr::null_mut();
        page.used = 0;
        page.carved = 0;
        (*seg).free_slots |= 1 << slot;
        (*seg).used_pages -= 1;
        self.push_slot_list(seg);
    }

    /// Returns a small, medium or large segment: from the cache with no
    /// backend calls, otherwise freshly reserved. The segment is registered
    /// live and placed on its slot list.
    pub(crate) fn acquire_segment<B: OsBackend>(
        &mut self,
        backend: &mut B,
        page_type: PageType,
    ) -> Result<*mut SegmentHeader, AllocError> {
        debug_assert!(page_type != PageType::Huge);
        let t = page_type.index();
        let seg = if self.cache_enabled && !self.cache[t].is_null() {
            let seg = core::mem::replace(&mut self.cache[t], ptr::null_mut());
            // SAFETY: cached segments stay reserved with their header committed.
            unsafe { (*seg).cached = false };
            seg
        } else {
            self.reserve_segment(backend, page_type)?
        };
        self.live.insert(seg as usize);
        self.live_count[t] += 1;
        // SAFETY: header is initialized.
        unsafe { self.push_slot_list(seg) };
        Ok(seg)
    }

    fn reserve_segment<B: OsBackend>(
        &mut self,
        backend: &mut B,
        page_type: PageType,
    ) -> Result<*mut SegmentHeader, AllocError> {
        let t = page_type.index();
        let range = backend.reserve(SEGMENT_SIZE, SEGMENT_SIZE)?;
        if range.start & SEGMENT_MASK != 0 {
            let _ = backend.release(range);
            return Err(AllocError::ContractViolation("backend returned a misaligned segment"));
        }
        let deferred = page_type == PageType::Large || (self.deferred_enabled && !self.first_taken[t]);
        self.first_taken[t] = true;
        let fpo = first_page_offset(page_type, self.os_page);
        let header_commit = round_up(header_bytes(page_type), self.os_page);
        let commit_len = if deferred { header_commit } else { SEGMENT_SIZE };
        if let Err(e) = backend.commit(AddressRange::new(range.start, commit_len)) {
            let _ = backend.release(range);
            return Err(e);
        }
        let seg = range.start as *mut SegmentHeader;
        // SAFETY: the header pages were just committed and nothing else refers to them.
        unsafe {
            ptr::write(
                seg,
                SegmentHeader {
                    magic: SEGMENT_MAGIC,
                    page_type,
                    deferred_commit: deferred,
                    cached: false,
                    in_slot_list: false,
                    purge_pending: false,
                    reserved_pages: page_type.params().pages_per_segment as u32,
                    used_pages: 0,
                    live_pages: 0,
                    segment_size: SEGMENT_SIZE,
                    first_page_offset: fpo,
                    header_commit,
                    meta_committed: if deferred { header_commit } else { fpo },
                    free_slots: 0,
                    next_free: ptr::null_mut(),
                    prev_free: ptr::null_mut(),
                    cached_at: 0,
                },
            );
            for slot in 0..(*seg).reserved_pages as usize {
                let mut meta = PageMeta::unused(slot as u16);
                if !deferred {
                    meta.committed = (*seg).slot_range(slot).1;
                }
                ptr::write(SegmentHeader::page(seg, slot), meta);
            }
            (*seg).free_slots = (*seg).usable_slot_mask();
        }
        Ok(seg)
    }

    /// Reserves and commits a dedicated segment for one huge block.
    pub(crate) fn acquire_huge<B: OsBackend>(
        &mut self,
        backend: &mut B,
        size: usize,
    ) -> Result<*mut SegmentHeader, AllocError> {
        let block = huge_block_size(size, self.os_page);
        let fpo = first_page_offset(PageType::Huge, self.os_page);
        let total = fpo.checked_add(block).ok_or(AllocError::AllocTooLarge { size })?;
        let range = backend.reserve(total, self.os_page)?;
        if let Err(e) = backend.commit(range) {
            let _ = backend.release(range);
            return Err(e);
        }
        let seg = range.start as *mut SegmentHeader;
        // SAFETY: the whole reservation was just committed.
        unsafe {
            ptr::write(
                seg,
                SegmentHeader {
                    magic: SEGMENT_MAGIC,
                    page_type: PageType::Huge,
                    deferred_commit: false,
                    cached: false,
                    in_slot_list: false,
                    purge_pending: false,
                    reserved_pages: 1,
                    used_pages: 1,
                    live_pages: 1,
                    segment_size: total,
                    first_page_offset: fpo,
                    header_commit: fpo,
                    meta_committed: fpo,
                    free_slots: 0,
                    next_free: ptr::null_mut(),
                    prev_free: ptr::null_mut(),
                    cached_at: 0,
                },
            );
            let mut meta = PageMeta::unused(0);
            meta.committed = block;
            meta.init(HUGE_CLASS as u16, block, range.start + fpo, block);
            meta.carved = 1;
            meta.carve_limit = 1;
            meta.used = 1;
            ptr::write(SegmentHeader::page(seg, 0), meta);
        }
        self.huge.insert(range.start, total);
        self.huge_lo = self.huge_lo.min(range.start);
        self.huge_hi = self.huge_hi.max(range.end());
        self.live_count[PageType::Huge.index()] += 1;
        Ok(seg)
    }

    /// Retires an empty segment: huge ones are released, others go to the
    /// cache when their slot is free and are released otherwise.
    pub(crate) fn free_segment<B: OsBackend>(
        &mut self,
        backend: &mut B,
        seg: *mut SegmentHeader,
        tick: u64,
    ) -> Result<(), AllocError> {
        // SAFETY: `seg` is a live segment of this manager.
        unsafe {
            if (*seg).used_pages != 0 {
                return Err(AllocError::ContractViolation("freeing a segment with pages in use"));
            }
            self.remove_slot_list(seg);
            let page_type = (*seg).page_type;
            self.live_count[page_type.index()] -= 1;
            let range = AddressRange::new(seg as usize, (*seg).segment_size);
            if page_type == PageType::Huge {
                self.huge.remove(&range.start);
                self.huge_lo = self.huge.first_key_value().map_or(usize::MAX, |(&s, _)| s);
                self.huge_hi = self.huge.last_key_value().map_or(0, |(&s, &l)| s + l);
                return backend.release(range);
            }
            self.live.remove(&range.start);
            let t = page_type.index();
            if self.cache_enabled && self.cache[t].is_null() {
                (*seg).cached = true;
                (*seg).cached_at = tick;
                (*seg).live_pages = 0;
                (*seg).purge_pending = (*seg).committed_bytes() > (*seg).header_commit;
                self.cache[t] = seg;
                return Ok(());
            }
            backend.release(range)
        }
    }

    /// Decommits the data pages of cached segments that have waited long enough
    /// (all of them when `force`).
    pub(crate) fn purge_cached<B: OsBackend>(
        &mut self,
        backend: &mut B,
        tick: u64,
        force: bool,
    ) -> Result<(), AllocError> {
        for seg in self.cache {
            if seg.is_null() {
                continue;
            }
            // SAFETY: cached segments keep their header committed.
            unsafe {
                let s = &mut *seg;
                if !s.purge_pending || (!force && tick.wrapping_sub(s.cached_at) < PURGE_DELAY) {
                    continue;
                }
                let base = s.base();
                backend.decommit(AddressRange::new(base + s.header_commit, s.segment_size - s.header_commit))?;
                s.meta_committed = s.header_commit;
                s.deferred_commit = true;
                s.purge_pending = false;
                for slot in 0..s.reserved_pages as usize {
                    let page = &mut *SegmentHeader::page(seg, slot);
                    page.committed = 0;
                    page.dirty = false;
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn purge_due(&self, tick: u64) -> bool {
        self.cache.iter().any(|&seg| {
            // SAFETY: cached segments keep their header committed.
            !seg.is_null() && unsafe { (*seg).purge_pending && tick.wrapping_sub((*seg).cached_at) >= PURGE_DELAY }
        })
    }

    /// Releases every segment, live or cached.
    pub(crate) fn release_all<B: OsBackend>(&mut self, backend: &mut B) {
        let live = core::mem::take(&mut self.live);
        let huge = core::mem::take(&mut self.huge);
        for base in live {
            let _ = backend.release(AddressRange::new(base, SEGMENT_SIZE));
        }
        for (base, len) in huge {
            let _ = backend.release(AddressRange::new(base, len));
        }
        for seg in core::mem::replace(&mut self.cache, [ptr::null_mut(); 3]) {
            if !seg.is_null() {
                let _ = backend.release(AddressRange::new(seg as usize, SEGMENT_SIZE));
            }
        }
        self.slot_lists = [ptr::null_mut(); 3];
        self.live_count = [0; 4];
        self.huge_lo = usize::MAX;
        self.huge_hi = 0;
    }

    /// Every segment the manager knows about, cached ones included.
    pub(crate) fn all_segments(&self) -> impl Iterator<Item = *mut SegmentHeader> + '_ {
        self.live
            .iter()
            .map(|&b| b as *mut SegmentHeader)
            .chain(self.huge.keys().map(|&b| b as *mut SegmentHeader))
            .chain(self.cache.iter().copied().filter(|s| !s.is_null()))
    }
}
