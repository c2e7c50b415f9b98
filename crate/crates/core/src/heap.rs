//! The heap front-end: per-class page queues, the nonempty bitmap and the
//! fast/generic allocation split.
//!
//! Queue discipline: pages that can still serve a block precede exhausted
//! ones, so the head of a class queue is the page the fast path pops from.
//! A page that becomes exhausted moves to the tail; a page that regains a
//! block moves back to the head. An emptied page is retired unless it is the
//! only page of its class and its segment still holds live blocks elsewhere.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ptr::{self, NonNull};

use crate::backend::{AddressRange, OsBackend};
use crate::error::AllocError;
use crate::page::{FreeListPolicy, PageMeta};
use crate::segment::{SegmentHeader, SegmentManager, SEGMENT_MAGIC};
use crate::size_classes::{
    block_index_in_page, block_size_of_class, class_index, huge_block_size, round_up, PageType,
    LARGE_MAX_BLOCK, MAX_ALLOC_SIZE, MAX_OS_PAGE_SIZE, NUM_CLASSES, SEGMENT_MASK,
};

pub(crate) const BITMAP_WORDS: usize = NUM_CLASSES.div_ceil(64);

/// Construction options for a [`Heap`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeapConfig {
    pub policy: FreeListPolicy,
    /// Validate every freed pointer, track block liveness and assert the
    /// owning thread. Defaults to on in debug builds.
    pub checked: bool,
    /// Keep one empty segment per page type for reuse.
    pub segment_cache: bool,
    /// Commit the first small and medium segment page by page.
    pub deferred_commit: bool,
}

impl Default for HeapConfig {
    fn default() -> Self {
        HeapConfig {
            policy: FreeListPolicy::Single,
            checked: cfg!(debug_assertions),
            segment_cache: true,
            deferred_commit: true,
        }
    }
}

impl HeapConfig {
    pub fn with_policy(mut self, policy: FreeListPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_checked(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn with_segment_cache(mut self, enabled: bool) -> Self {
        self.segment_cache = enabled;
        self
    }

    pub fn with_deferred_commit(mut self, enabled: bool) -> Self {
        self.deferred_commit = enabled;
        self
    }
}

#[derive(Clone, Copy)]
pub(crate) struct PageQueue {
    pub(crate) head: *mut PageMeta,
    pub(crate) tail: *mut PageMeta,
    pub(crate) len: usize,
}

impl PageQueue {
    const EMPTY: PageQueue = PageQueue { head: ptr::null_mut(), tail: ptr::null_mut(), len: 0 };

    unsafe fn push_front(&mut self, page: *mut PageMeta) {
        (*page).prev = ptr::null_mut();
        (*page).next = self.head;
        if self.head.is_null() {
            self.tail = page;
        } else {
            (*self.head).prev = page;
        }
        self.head = page;
        self.len += 1;
    }

    unsafe fn push_back(&mut self, page: *mut PageMeta) {
        (*page).next = ptr::null_mut();
        (*page).prev = self.tail;
        if self.tail.is_null() {
            self.head = page;
        } else {
            (*self.tail).next = page;
        }
        self.tail = page;
        self.len += 1;
    }

    unsafe fn remove(&mut self, page: *mut PageMeta) {
        let (prev, next) = ((*page).prev, (*page).next);
        if prev.is_null() {
            self.head = next;
        } else {
            (*prev).next = next;
        }
        if next.is_null() {
            self.tail = prev;
        } else {
            (*next).prev = prev;
        }
        (*page).prev = ptr::null_mut();
        (*page).next = ptr::null_mut();
        self.len -= 1;
    }
}

#[derive(Clone, Copy, Default)]
pub(crate) struct Counters {
    pub(crate) allocs: u64,
    pub(crate) frees: u64,
    pub(crate) reallocs: u64,
    pub(crate) bytes_live: usize,
    pub(crate) peak_live: usize,
    pub(crate) peak_committed: usize,
}

/// A single-threaded heap over an [`OsBackend`].
pub struct Heap<B: OsBackend> {
    pub(crate) queues: [PageQueue; NUM_CLASSES],
    pub(crate) nonempty: [u64; BITMAP_WORDS],
    pub(crate) policy: FreeListPolicy,
    pub(crate) checked: bool,
    pub(crate) segments: SegmentManager,
    pub(crate) backend: B,
    pub(crate) stats: Counters,
    ticks: u64,
    /// Set by the generic path when the block came from never-used memory.
    last_fresh: bool,
    /// Checked mode: one bit per carved block of each in-use page, set while live.
    pub(crate) live_bits: BTreeMap<usize, Vec<u64>>,
    #[cfg(feature = "std")]
    owner: std::thread::ThreadId,
}

impl<B: OsBackend> Heap<B> {
    pub fn new(backend: B) -> Result<Self, AllocError> {
        Self::with_config(backend, HeapConfig::default())
    }

    pub fn with_config(backend: B, config: HeapConfig) -> Result<Self, AllocError> {
        let os_page = backend.os_page_size();
        if !os_page.is_power_of_two() || os_page > MAX_OS_PAGE_SIZE {
            return Err(AllocError::ContractViolation("OS page size must be a power of two <= 64 KiB"));
        }
        Ok(Heap {
            queues: [PageQueue::EMPTY; NUM_CLASSES],
            nonempty: [0; BITMAP_WORDS],
            policy: config.policy,
            checked: config.checked,
            segments: SegmentManager::new(os_page, config.segment_cache, config.deferred_commit),
            backend,
            stats: Counters::default(),
            ticks: 0,
            last_fresh: false,
            live_bits: BTreeMap::new(),
            #[cfg(feature = "std")]
            owner: std::thread::current().id(),
        })
    }

    pub fn policy(&self) -> FreeListPolicy {
        self.policy
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    /// Mutable backend access, for tests that inspect or poke memory.
    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    /// Whether class `class` has a page able to serve without the generic path
    /// creating a new one.
    pub fn class_has_space(&self, class: usize) -> bool {
        self.nonempty[class / 64] & (1 << (class % 64)) != 0
    }

    #[inline]
    fn check_owner(&self) -> Result<(), AllocError> {
        #[cfg(feature = "std")]
        if std::thread::current().id() != self.owner {
            return Err(AllocError::OwnershipViolation);
        }
        Ok(())
    }

    fn refresh_bit(&mut self, class: usize) {
        let head = self.queues[class].head;
        // SAFETY: queued pages are initialized metadata inside live segments.
        let space = !head.is_null() && unsafe { (*head).has_space() };
        let bit = 1u64 << (class % 64);
        if space {
            self.nonempty[class / 64] |= bit;
        } else {
            self.nonempty[class / 64] &= !bit;
        }
    }

    fn note_committed(&mut self) {
        let c = self.backend.counters().committed_bytes;
        if c > self.stats.peak_committed {
            self.stats.peak_committed = c;
        }
    }

    /// Allocates at least `size` bytes. Zero-byte requests get the smallest class.
    #[inline]
    pub fn allocate(&mut self, size: usize) -> Result<NonNull<u8>, AllocError> {
        if self.checked {
            self.check_owner()?;
        }
        let block = self.alloc_inner(size)?;
        self.stats.allocs += 1;
        Ok(block)
    }

    #[inline(always)]
    fn alloc_inner(&mut self, size: usize) -> Result<NonNull<u8>, AllocError> {
        if size <= LARGE_MAX_BLOCK {
            let class = class_index(size.max(1));
            let page = self.queues[class].head;
            if !page.is_null() {
                // SAFETY: the queue head is an initialized page of this class.
                if let Some(block) = unsafe { (*page).pop_free() } {
                    unsafe { self.finish_alloc(page, block)? };
                    return Ok(block);
                }
            }
            return self.alloc_generic(class);
        }
        self.alloc_huge(size)
    }

    #[inline(always)]
    unsafe fn finish_alloc(&mut self, page: *mut PageMeta, block: NonNull<u8>) -> Result<(), AllocError> {
        let p = &mut *page;
        if p.used == 1 {
            (*SegmentHeader::of_page(page)).live_pages += 1;
        }
        if p.free.is_null() {
            self.after_drain(page);
        }
        self.stats.bytes_live += p.block_size;
        if self.stats.bytes_live > self.stats.peak_live {
            self.stats.peak_live = self.stats.bytes_live;
        }
        if self.checked {
            self.mark_live(page, block.as_ptr() as usize)?;
        }
        Ok(())
    }

    #[cold]
    unsafe fn after_drain(&mut self, page: *mut PageMeta) {
        if (*page).has_space() {
            return;
        }
        let class = (*page).class as usize;
        let q = &mut self.queues[class];
        if q.len > 1 && q.tail != page {
            q.remove(page);
            q.push_back(page);
        }
        self.refresh_bit(class);
    }

    #[inline(never)]
    fn alloc_generic(&mut self, class: usize) -> Result<NonNull<u8>, AllocError> {
        self.ticks += 1;
        if self.segments.purge_due(self.ticks) {
            self.segments.purge_cached(&mut self.backend, self.ticks, false)?;
        }
        loop {
            let page = self.queues[class].head;
            if !page.is_null() {
                // SAFETY: queued pages are initialized and belong to live segments.
                unsafe {
                    let p = &mut *page;
                    let carved_before = p.carved;
                    if let Some(block) = p.alloc_block(self.policy) {
                        self.last_fresh = p.fresh && p.carved != carved_before;
                        self.finish_alloc(page, block)?;
                        return Ok(block);
                    }
                    if p.carved < p.capacity {
                        self.extend_commit(page)?;
                        continue;
                    }
                    let q = &mut self.queues[class];
                    if q.len > 1 {
                        q.remove(page);
                        q.push_back(page);
                        if (*q.head).has_space() {
                            continue;
                        }
                    }
                    self.refresh_bit(class);
                }
            }
            self.new_page(class)?;
        }
    }

    /// Commits the next stretch of a lazily committed page past its carve frontier.
    unsafe fn extend_commit(&mut self, page: *mut PageMeta) -> Result<(), AllocError> {
        let p = &mut *page;
        let seg = SegmentHeader::of_page(page);
        let slot_len = (*seg).slot_range(p.slot as usize).1;
        let want = round_up((p.carve_limit as usize + 1) * p.block_size, self.segments.os_page).min(slot_len);
        self.backend.commit(AddressRange::new(p.start + p.committed, want - p.committed))?;
        p.committed = want;
        p.update_carve_limit();
        self.note_committed();
        Ok(())
    }

    fn new_page(&mut self, class: usize) -> Result<*mut PageMeta, AllocError> {
        let bs = block_size_of_class(class);
        let page_type = PageType::for_block_size(bs);
        let seg = match self.segments.segment_with_free_slot(page_type) {
            Some(seg) => seg,
            None => self.segments.acquire_segment(&mut self.backend, page_type)?,
        };
        // SAFETY: `seg` is a live segment with at least one free slot.
        unsafe {
            let slot = self.segments.claim_slot(seg);
            let (start, len) = (*seg).slot_range(slot);
            let page = SegmentHeader::page(seg, slot);
            let p = &mut *page;
            let os_page = self.segments.os_page;
            let want = if page_type == PageType::Large { round_up(bs, os_page).min(len) } else { len };
            if p.committed < want {
                if let Err(e) = self.backend.commit(AddressRange::new(start + p.committed, want - p.committed)) {
                    self.segments.release_slot(seg, slot);
                    if (*seg).used_pages == 0 {
                        self.segments.free_segment(&mut self.backend, seg, self.ticks)?;
                    }
                    return Err(e);
                }
                if p.committed == 0 {
                    p.dirty = false;
                }
                p.committed = want;
                self.note_committed();
            } else if page_type == PageType::Large && p.committed > want {
                // A recycled large slot keeps only what its first block needs.
                self.backend.decommit(AddressRange::new(start + want, p.committed - want))?;
                p.committed = want;
            }
            p.fresh = !p.dirty;
            p.dirty = true;
            p.init(class as u16, bs, start, len);
            self.queues[class].push_front(page);
            self.refresh_bit(class);
            if self.checked {
                self.live_bits.insert(page as usize, vec![0; (p.capacity as usize).div_ceil(64)]);
            }
            Ok(page)
        }
    }

    #[cold]
    fn alloc_huge(&mut self, size: usize) -> Result<NonNull<u8>, AllocError> {
        if size > MAX_ALLOC_SIZE {
            return Err(AllocError::AllocTooLarge { size });
        }
        let seg = self.segments.acquire_huge(&mut self.backend, size)?;
        self.note_committed();
        self.last_fresh = true;
        // SAFETY: the huge segment was just initialized with one live block.
        let page = unsafe { &*SegmentHeader::page(seg, 0) };
        self.stats.bytes_live += page.block_size;
        self.stats.peak_live = self.stats.peak_live.max(self.stats.bytes_live);
        Ok(unsafe { NonNull::new_unchecked(page.start as *mut u8) })
    }

    unsafe fn mark_live(&mut self, page: *mut PageMeta, addr: usize) -> Result<(), AllocError> {
        let p = &*page;
        let idx = block_index_in_page(p.start, p.block_size, addr)?;
        let bits = self.live_bits.get_mut(&(page as usize)).ok_or(AllocError::HeapCorruption { addr })?;
        let (w, b) = (idx / 64, 1u64 << (idx % 64));
        if idx >= p.capacity as usize || bits[w] & b != 0 {
            // The free list handed out a block that is already live.
            return Err(AllocError::HeapCorruption { addr });
        }
        bits[w] |= b;
        Ok(())
    }

    /// Resolves a pointer to its segment and page, checking it names a live
    /// block. Huge blocks yield a null page.
    fn locate_checked(&self, addr: usize) -> Result<(*mut SegmentHeader, *mut PageMeta), AllocError> {
        if let Some(seg) = self.segments.huge_segment_of(addr) {
            // SAFETY: huge segments in the table are live.
            let page = unsafe { SegmentHeader::page(seg, 0) };
            if unsafe { (*page).start } != addr {
                return Err(AllocError::HeapCorruption { addr });
            }
            return Ok((seg, ptr::null_mut()));
        }
        let base = addr & !SEGMENT_MASK;
        if !self.segments.live.contains(&base) {
            if self.segments.cache.iter().any(|&s| s as usize == base && !s.is_null()) {
                return Err(AllocError::DoubleFree { addr });
            }
            return Err(AllocError::ForeignPointer { addr });
        }
        let seg = base as *mut SegmentHeader;
        // SAFETY: `base` is a live segment, so its header is committed.
        unsafe {
            if (*seg).magic != SEGMENT_MAGIC {
                return Err(AllocError::HeapCorruption { addr });
            }
            if addr - base < (*seg).first_page_offset {
                return Err(AllocError::HeapCorruption { addr });
            }
            let page = SegmentHeader::page_of_addr(seg, addr);
            let p = &*page;
            if !p.in_use {
                return Err(AllocError::DoubleFree { addr });
            }
            let idx = block_index_in_page(p.start, p.block_size, addr)?;
            if idx >= p.capacity as usize {
                return Err(AllocError::HeapCorruption { addr });
            }
            let bits = self.live_bits.get(&(page as usize)).ok_or(AllocError::HeapCorruption { addr })?;
            if bits[idx / 64] & (1 << (idx % 64)) == 0 {
                return Err(AllocError::DoubleFree { addr });
            }
            Ok((seg, page))
        }
    }

    fn unmark_live(&mut self, addr: usize) -> Result<(), AllocError> {
        let (_, page) = self.locate_checked(addr)?;
        if !page.is_null() {
            // SAFETY: `locate_checked` resolved a live page.
            let idx = unsafe { (addr - (*page).start) / (*page).block_size };
            if let Some(bits) = self.live_bits.get_mut(&(page as usize)) {
                bits[idx / 64] &= !(1 << (idx % 64));
            }
        }
        Ok(())
    }

    /// Returns a block to the heap. Null is a no-op.
    ///
    /// # Safety
    /// Unless the heap is checked, `ptr` must be null or a live block of this heap.
    #[inline]
    pub unsafe fn deallocate(&mut self, ptr: *mut u8) -> Result<(), AllocError> {
        if ptr.is_null() {
            return Ok(());
        }
        if self.checked {
            self.check_owner()?;
            self.unmark_live(ptr as usize)?;
        }
        self.free_inner(NonNull::new_unchecked(ptr), false)?;
        self.stats.frees += 1;
        Ok(())
    }

    /// Frees onto the shared list, standing in for a free from another thread.
    /// Only meaningful under [`FreeListPolicy::TripleEmulated`].
    ///
    /// # Safety
    /// As for [`Heap::deallocate`].
    #[doc(hidden)]
    pub unsafe fn deallocate_shared(&mut self, ptr: *mut u8) -> Result<(), AllocError> {
        if ptr.is_null() {
            return Ok(());
        }
        if self.checked {
            self.check_owner()?;
            self.unmark_live(ptr as usize)?;
        }
        self.free_inner(NonNull::new_unchecked(ptr), true)?;
        self.stats.frees += 1;
        Ok(())
    }

    #[inline(always)]
    unsafe fn free_inner(&mut self, block: NonNull<u8>, shared: bool) -> Result<(), AllocError> {
        let addr = block.as_ptr() as usize;
        if let Some(seg) = self.segments.huge_segment_of(addr) {
            return self.free_huge(seg);
        }
        let seg = (addr & !SEGMENT_MASK) as *mut SegmentHeader;
        let page = SegmentHeader::page_of_addr(seg, addr);
        let p = &mut *page;
        let was_full = !p.has_space();
        if shared && self.policy == FreeListPolicy::TripleEmulated {
            p.free_block_shared(block);
        } else {
            p.free_block(block, self.policy);
        }
        self.stats.bytes_live -= p.block_size;
        if p.used == 0 {
            self.page_emptied(seg, page, was_full)
        } else {
            if was_full {
                self.page_regained(page);
            }
            Ok(())
        }
    }

    #[cold]
    unsafe fn page_regained(&mut self, page: *mut PageMeta) {
        let class = (*page).class as usize;
        let q = &mut self.queues[class];
        if q.head != page {
            q.remove(page);
            q.push_front(page);
        }
        self.refresh_bit(class);
    }

    #[cold]
    unsafe fn page_emptied(
        &mut self,
        seg: *mut SegmentHeader,
        page: *mut PageMeta,
        was_full: bool,
    ) -> Result<(), AllocError> {
        (*seg).live_pages -= 1;
        let class = (*page).class as usize;
        if self.queues[class].len == 1 && (*seg).live_pages > 0 {
            if was_full {
                self.refresh_bit(class);
            }
            return Ok(());
        }
        self.retire_page(seg, page);
        if (*seg).live_pages == 0 {
            // Retained empty pages would otherwise pin the segment.
            for slot in 0..(*seg).reserved_pages as usize {
                let other = SegmentHeader::page(seg, slot);
                if (*other).in_use {
                    self.retire_page(seg, other);
                }
            }
            self.segments.free_segment(&mut self.backend, seg, self.ticks)?;
        }
        Ok(())
    }

    unsafe fn retire_page(&mut self, seg: *mut SegmentHeader, page: *mut PageMeta) {
        debug_assert_eq!((*page).used, 0);
        let class = (*page).class as usize;
        self.queues[class].remove(page);
        self.refresh_bit(class);
        if self.checked {
            self.live_bits.remove(&(page as usize));
        }
        self.segments.release_slot(seg, (*page).slot as usize);
    }

    unsafe fn free_huge(&mut self, seg: *mut SegmentHeader) -> Result<(), AllocError> {
        let page = &mut *SegmentHeader::page(seg, 0);
        self.stats.bytes_live -= page.block_size;
        page.used = 0;
        (*seg).used_pages = 0;
        (*seg).live_pages = 0;
        self.segments.free_segment(&mut self.backend, seg, self.ticks)
    }

    /// Allocates `count * size` zeroed bytes.
    pub fn allocate_zeroed(&mut self, count: usize, size: usize) -> Result<NonNull<u8>, AllocError> {
        let total = count.checked_mul(size).ok_or(AllocError::ArithmeticOverflow)?;
        if self.checked {
            self.check_owner()?;
        }
        self.last_fresh = false;
        let block = self.alloc_inner(total)?;
        self.stats.allocs += 1;
        // SAFETY: the block holds at least `total` bytes (and at least one word).
        unsafe {
            if self.last_fresh {
                // Never-used committed memory is zero apart from the free-list link.
                block.as_ptr().cast::<usize>().write(0);
            } else {
                ptr::write_bytes(block.as_ptr(), 0, total);
            }
        }
        Ok(block)
    }

    /// Resizes a block, in place when the size class does not change.
    ///
    /// # Safety
    /// As for [`Heap::deallocate`]. On error the original block stays valid.
    pub unsafe fn reallocate(&mut self, ptr: *mut u8, new_size: usize) -> Result<NonNull<u8>, AllocError> {
        if ptr.is_null() {
            return self.allocate(new_size);
        }
        let old = self.usable_size(ptr)?;
        let new_block = self.rounded_size(new_size)?;
        self.stats.reallocs += 1;
        if new_block == old {
            return Ok(NonNull::new_unchecked(ptr));
        }
        let fresh = self.alloc_inner(new_size)?;
        ptr::copy_nonoverlapping(ptr, fresh.as_ptr(), old.min(new_size));
        if self.checked {
            self.unmark_live(ptr as usize)?;
        }
        self.free_inner(NonNull::new_unchecked(ptr), false)?;
        Ok(fresh)
    }

    /// Block size a request of `size` bytes would receive.
    pub fn rounded_size(&self, size: usize) -> Result<usize, AllocError> {
        let size = size.max(1);
        if size <= LARGE_MAX_BLOCK {
            Ok(block_size_of_class(class_index(size)))
        } else if size <= MAX_ALLOC_SIZE {
            Ok(huge_block_size(size, self.segments.os_page))
        } else {
            Err(AllocError::AllocTooLarge { size })
        }
    }

    /// Usable bytes of a live block.
    ///
    /// # Safety
    /// Unless the heap is checked, `ptr` must be a live block of this heap.
    pub unsafe fn usable_size(&self, ptr: *const u8) -> Result<usize, AllocError> {
        let addr = ptr as usize;
        if self.checked {
            self.check_owner()?;
            self.locate_checked(addr)?;
        }
        if let Some(seg) = self.segments.huge_segment_of(addr) {
            return Ok((*SegmentHeader::page(seg, 0)).block_size);
        }
        let seg = (addr & !SEGMENT_MASK) as *mut SegmentHeader;
        Ok((*SegmentHeader::page_of_addr(seg, addr)).block_size)
    }

    /// Whether `addr` lies in a live segment of this heap. Does not say
    /// whether it names a live block.
    pub fn owns(&self, addr: usize) -> bool {
        self.segments.huge_segment_of(addr).is_some() || self.segments.live.contains(&(addr & !SEGMENT_MASK))
    }

    /// Decommits the data pages of cached segments now instead of after the
    /// purge delay.
    pub fn purge_cache(&mut self) -> Result<(), AllocError> {
        self.segments.purge_cached(&mut self.backend, self.ticks, true)
    }
}

impl<B: OsBackend> Drop for Heap<B> {
    fn drop(&mut self) {
        self.segments.release_all(&mut self.backend);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SimBackend;
    use crate::segment::header_bytes;
    use crate::size_classes::{SEGMENT_SIZE, SMALL_PAGE_SIZE};

    fn heap() -> Heap<SimBackend> {
        Heap::with_config(SimBackend::new(), HeapConfig::default().with_checked(true)).unwrap()
    }

    #[test]
    fn first_alloc_commits_header_and_one_page() {
        let mut h = heap();
        let p = h.allocate(16).unwrap();
        let c = h.backend().counters();
        assert_eq!(c.reserve_count, 1);
        assert_eq!(c.committed_bytes, round_up(header_bytes(PageType::Small), 4096) + SMALL_PAGE_SIZE);
        assert_eq!(p.as_ptr() as usize % SEGMENT_SIZE, SMALL_PAGE_SIZE);
    }

    #[test]
    fn eager_policy_commits_whole_segment() {
        let cfg = HeapConfig::default().with_deferred_commit(false);
        let mut h = Heap::with_config(SimBackend::new(), cfg).unwrap();
        h.allocate(16).unwrap();
        assert_eq!(h.backend().counters().committed_bytes, SEGMENT_SIZE);
    }

    #[test]
    fn lifo_reuse() {
        let mut h = heap();
        let _keep = h.allocate(48).unwrap();
        let a = h.allocate(48).unwrap();
        unsafe { h.deallocate(a.as_ptr()).unwrap() };
        assert_eq!(h.allocate(48).unwrap(), a);
    }

    #[test]
    fn zero_size_is_one_byte() {
        let mut h = heap();
        let p = h.allocate(0).unwrap();
        assert_eq!(unsafe { h.usable_size(p.as_ptr()) }, Ok(8));
    }

    #[test]
    fn warm_fast_path_makes_no_backend_calls() {
        let mut h = heap();
        let keep = h.allocate(64).unwrap();
        let before = h.backend().counters();
        for _ in 0..10_000 {
            let p = h.allocate(64).unwrap();
            unsafe { h.deallocate(p.as_ptr()).unwrap() };
        }
        assert_eq!(h.backend().counters(), before);
        unsafe { h.deallocate(keep.as_ptr()).unwrap() };
    }

    #[test]
    fn checked_errors() {
        let mut h = heap();
        let a = h.allocate(32).unwrap();
        let b = h.allocate(32).unwrap();
        unsafe {
            h.deallocate(a.as_ptr()).unwrap();
            assert_eq!(h.deallocate(a.as_ptr()), Err(AllocError::DoubleFree { addr: a.as_ptr() as usize }));
            let inner = b.as_ptr().add(4);
            assert_eq!(h.deallocate(inner), Err(AllocError::HeapCorruption { addr: inner as usize }));
            let mut local = 0u64;
            let foreign = &mut local as *mut u64 as *mut u8;
            assert_eq!(h.deallocate(foreign), Err(AllocError::ForeignPointer { addr: foreign as usize }));
            let header = (b.as_ptr() as usize & !SEGMENT_MASK) + 64;
            assert_eq!(h.deallocate(header as *mut u8), Err(AllocError::HeapCorruption { addr: header }));
        }
    }

    #[cfg(feature = "std")]
    #[test]
    fn foreign_thread_is_rejected() {
        extern crate std;
        let mut h = heap();
        let p = h.allocate(8).unwrap().as_ptr() as usize;
        struct Moved<T>(T);
        unsafe impl<T> Send for Moved<T> {}
        let moved = Moved(h);
        let (r, back) = std::thread::spawn(move || {
            let mut m = moved;
            let r = (m.0.allocate(8).map(|_| ()), unsafe { m.0.deallocate(p as *mut u8) });
            (r, m)
        })
        .join()
        .unwrap();
        assert_eq!(r, (Err(AllocError::OwnershipViolation), Err(AllocError::OwnershipViolation)));
        drop(back);
    }

    #[test]
    fn calloc_and_overflow() {
        let mut h = heap();
        let _keep = h.allocate(8).unwrap();
        let p = h.allocate(64).unwrap();
        unsafe {
            ptr::write_bytes(p.as_ptr(), 0xAB, 64);
            h.deallocate(p.as_ptr()).unwrap();
        }
        let z = h.allocate_zeroed(8, 8).unwrap();
        assert_eq!(z, p);
        let bytes = unsafe { core::slice::from_raw_parts(z.as_ptr(), 64) };
        assert!(bytes.iter().all(|&b| b == 0));
        assert_eq!(h.allocate_zeroed(1 << 63, 16), Err(AllocError::ArithmeticOverflow));
    }

    #[test]
    fn realloc_in_place_and_moving() {
        let mut h = heap();
        unsafe {
            let p = h.allocate(40).unwrap();
            assert_eq!(h.reallocate(p.as_ptr(), 38), Ok(p));
            ptr::write_bytes(p.as_ptr(), 0x5A, 40);
            let q = h.reallocate(p.as_ptr(), 200).unwrap();
            assert_ne!(q, p);
            assert!(core::slice::from_raw_parts(q.as_ptr(), 40).iter().all(|&b| b == 0x5A));
            assert_eq!(h.usable_size(q.as_ptr()), Ok(200));
            let r = h.reallocate(ptr::null_mut(), 16).unwrap();
            assert_eq!(h.usable_size(r.as_ptr()), Ok(16));
        }
    }

    #[test]
    fn huge_roundtrip() {
        let mut h = heap();
        let size = 5 * 1024 * 1024;
        let p = h.allocate(size).unwrap();
        assert_eq!(unsafe { h.usable_size(p.as_ptr()) }, Ok(size));
        let before = h.backend().counters().release_count;
        unsafe { h.deallocate(p.as_ptr()).unwrap() };
        assert_eq!(h.backend().counters().release_count, before + 1);
        assert_eq!(h.allocate(MAX_ALLOC_SIZE + 1), Err(AllocError::AllocTooLarge { size: MAX_ALLOC_SIZE + 1 }));
    }

    #[test]
    fn drained_segment_goes_to_cache() {
        let mut h = heap();
        let blocks: Vec<_> = (0..5000).map(|_| h.allocate(256).unwrap()).collect();
        for b in blocks {
            unsafe { h.deallocate(b.as_ptr()).unwrap() };
        }
        assert_eq!(h.segments.cached_count(PageType::Small), 1);
        assert!(h.segments.live.is_empty());
        assert_eq!(h.stats.bytes_live, 0);
    }

    #[test]
    fn oom_is_reported() {
        let mut sim = SimBackend::new();
        sim.set_reserve_limit(Some(SEGMENT_SIZE));
        let mut h = Heap::with_config(sim, HeapConfig::default()).unwrap();
        h.allocate(16).unwrap();
        assert_eq!(h.allocate(100_000), Err(AllocError::OutOfMemory));
        assert_eq!(h.allocate(5 << 20), Err(AllocError::OutOfMemory));
    }
}
