//! Per-page block management.
//!
//! Free blocks are linked through their first word. Under the default
//! [`FreeListPolicy::Single`] a page keeps one list that serves both frees and
//! allocations, so the most recently freed block is handed out next. The
//! [`FreeListPolicy::TripleEmulated`] policy reproduces the free / local-free /
//! shared-free arrangement of multi-threaded allocators for comparison.

use core::ptr::{self, NonNull};

/// Blocks linked per carve step.
pub const CARVE_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FreeListPolicy {
    /// One free list per page; frees are immediately reusable.
    #[default]
    Single,
    /// Frees park on a local list that only migrates once the free list runs dry.
    TripleEmulated,
}

#[repr(C)]
pub(crate) struct Block {
    pub(crate) next: *mut Block,
}

/// Metadata of one page slot, stored inside the segment header.
#[repr(C)]
pub struct PageMeta {
    pub(crate) free: *mut Block,
    pub(crate) used: u32,
    pub(crate) carved: u32,
    pub(crate) capacity: u32,
    /// Blocks whose memory is committed; carving stops here.
    pub(crate) carve_limit: u32,
    pub(crate) block_size: usize,
    /// First byte of the block area.
    pub(crate) start: usize,
    pub(crate) local_free: *mut Block,
    pub(crate) shared_free: *mut Block,
    pub(crate) prev: *mut PageMeta,
    pub(crate) next: *mut PageMeta,
    /// Bytes of the slot committed, counted from `start`.
    pub(crate) committed: usize,
    pub(crate) class: u16,
    pub(crate) slot: u16,
    pub(crate) in_use: bool,
    /// Memory past the carve frontier is known to be zero.
    pub(crate) fresh: bool,
    /// The slot has held blocks since its memory was last committed.
    pub(crate) dirty: bool,
}

impl PageMeta {
    pub(crate) const fn unused(slot: u16) -> PageMeta {
        PageMeta {
            free: ptr::null_mut(),
            used: 0,
            carved: 0,
            capacity: 0,
            carve_limit: 0,
            block_size: 0,
            start: 0,
            local_free: ptr::null_mut(),
            shared_free: ptr::null_mut(),
            prev: ptr::null_mut(),
            next: ptr::null_mut(),
            committed: 0,
            class: 0,
            slot,
            in_use: false,
            fresh: false,
            dirty: false,
        }
    }

    /// Prepares an empty page for `block_size` blocks over `len` bytes at `start`.
    pub(crate) fn init(&mut self, class: u16, block_size: usize, start: usize, len: usize) {
        self.free = ptr::null_mut();
        self.local_free = ptr::null_mut();
        self.shared_free = ptr::null_mut();
        self.used = 0;
        self.carved = 0;
        self.block_size = block_size;
        self.start = start;
        self.capacity = (len / block_size) as u32;
        self.class = class;
        self.in_use = true;
        self.update_carve_limit();
    }

    pub(crate) fn update_carve_limit(&mut self) {
        self.carve_limit = ((self.committed / self.block_size) as u32).min(self.capacity);
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity as usize
    }

    #[inline]
    pub fn used(&self) -> usize {
        self.used as usize
    }

    #[inline]
    pub fn carved(&self) -> usize {
        self.carved as usize
    }

    #[inline]
    pub fn start(&self) -> usize {
        self.start
    }

    #[inline]
    pub fn class_index(&self) -> usize {
        self.class as usize
    }

    /// Address one past the last block.
    #[inline]
    pub fn end(&self) -> usize {
        self.start + self.capacity as usize * self.block_size
    }

    /// Whether any block can be handed out without a new page.
    #[inline]
    pub fn has_space(&self) -> bool {
        !self.free.is_null()
            || self.carved < self.capacity
            || !self.local_free.is_null()
            || !self.shared_free.is_null()
    }

    /// Pops the free list only; `None` when it is empty.
    #[inline(always)]
    pub(crate) unsafe fn pop_free(&mut self) -> Option<NonNull<u8>> {
        let block = self.free;
        if block.is_null() {
            return None;
        }
        self.free = (*block).next;
        self.used += 1;
        Some(NonNull::new_unchecked(block.cast()))
    }

    /// Links up to `max_blocks` uncarved blocks, lowest address first, in
    /// front of the free list. Carving never passes the committed limit.
    ///
    /// # Safety
    /// The page must be initialized and its blocks up to `carve_limit` committed.
    pub unsafe fn carve(&mut self, max_blocks: usize) {
        let n = max_blocks.min((self.carve_limit - self.carved) as usize);
        if n == 0 {
            return;
        }
        let first = self.carved as usize;
        let mut next = self.free;
        for i in (first..first + n).rev() {
            let block = (self.start + i * self.block_size) as *mut Block;
            (*block).next = next;
            next = block;
        }
        self.free = next;
        self.carved += n as u32;
    }

    /// Takes one block under `policy`, carving or migrating lists as needed.
    /// `None` means the page cannot serve without more committed memory or at all.
    ///
    /// # Safety
    /// The page must be initialized and every linked block must belong to it.
    pub unsafe fn alloc_block(&mut self, policy: FreeListPolicy) -> Option<NonNull<u8>> {
        if let Some(b) = self.pop_free() {
            return Some(b);
        }
        if policy == FreeListPolicy::TripleEmulated {
            if !self.local_free.is_null() {
                self.free = core::mem::replace(&mut self.local_free, ptr::null_mut());
                return self.pop_free();
            }
            if !self.shared_free.is_null() {
                self.free = core::mem::replace(&mut self.shared_free, ptr::null_mut());
                return self.pop_free();
            }
        }
        if self.carved < self.carve_limit {
            self.carve(CARVE_CHUNK);
            return self.pop_free();
        }
        None
    }

    /// Returns a live block to the page.
    ///
    /// # Safety
    /// `block` must be a live block of this page.
    #[inline(always)]
    pub unsafe fn free_block(&mut self, block: NonNull<u8>, policy: FreeListPolicy) {
        let block = block.as_ptr().cast::<Block>();
        match policy {
            FreeListPolicy::Single => {
                (*block).next = self.free;
                self.free = block;
            }
            FreeListPolicy::TripleEmulated => {
                (*block).next = self.local_free;
                self.local_free = block;
            }
        }
        self.used -= 1;
    }

    /// Pushes onto the shared list, standing in for a free from another thread.
    ///
    /// # Safety
    /// As for [`PageMeta::free_block`].
    pub unsafe fn free_block_shared(&mut self, block: NonNull<u8>) {
        let block = block.as_ptr().cast::<Block>();
        (*block).next = self.shared_free;
        self.shared_free = block;
        self.used -= 1;
    }

    /// Heads of the free, local-free and shared-free lists.
    pub(crate) fn list_heads(&self) -> [*mut Block; 3] {
        [self.free, self.local_free, self.shared_free]
    }
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;
    use std::collections::BTreeSet;
    use std::vec;
    use std::vec::Vec;

    struct TestPage {
        _mem: Vec<u64>,
        meta: PageMeta,
    }

    fn page(block_size: usize, bytes: usize) -> TestPage {
        let mut mem = vec![0u64; bytes / 8];
        let mut meta = PageMeta::unused(0);
        meta.committed = bytes;
        meta.init(0, block_size, mem.as_mut_ptr() as usize, bytes);
        TestPage { _mem: mem, meta }
    }

    unsafe fn list(mut b: *mut Block) -> Vec<usize> {
        let mut out = Vec::new();
        while !b.is_null() {
            out.push(b as usize);
            b = (*b).next;
        }
        out
    }

    #[test]
    fn carve_links_ascending() {
        let mut p = page(8, 4096);
        let s = p.meta.start;
        unsafe {
            p.meta.carve(4);
            assert_eq!(list(p.meta.free), vec![s, s + 8, s + 16, s + 24]);
        }
        assert_eq!(p.meta.carved(), 4);
    }

    #[test]
    fn carve_clamps_and_drains_to_capacity() {
        let mut p = page(1000, 4096);
        assert_eq!(p.meta.capacity(), 4);
        unsafe {
            p.meta.carve(100);
            assert_eq!(p.meta.carved(), 4);
            let mut got = 0;
            while p.meta.alloc_block(FreeListPolicy::Single).is_some() {
                got += 1;
            }
            assert_eq!(got, 4);
        }
        assert_eq!(p.meta.carved(), p.meta.capacity());
        assert!(!p.meta.has_space());
    }

    #[test]
    fn first_alloc_is_page_start_and_lifo_reuse() {
        let mut p = page(16, 4096);
        unsafe {
            let a = p.meta.alloc_block(FreeListPolicy::Single).unwrap();
            assert_eq!(a.as_ptr() as usize, p.meta.start);
            let b = p.meta.alloc_block(FreeListPolicy::Single).unwrap();
            p.meta.free_block(b, FreeListPolicy::Single);
            assert_eq!(p.meta.used(), 1);
            assert_eq!(p.meta.alloc_block(FreeListPolicy::Single), Some(b));
        }
    }

    #[test]
    fn triple_defers_reuse_until_free_list_drains() {
        let policy = FreeListPolicy::TripleEmulated;
        let mut p = page(16, 4096);
        unsafe {
            let a = p.meta.alloc_block(policy).unwrap();
            p.meta.free_block(a, policy);
            let b = p.meta.alloc_block(policy).unwrap();
            assert_ne!(a, b);
            // Drain the carved chunk; `a` only comes back after migration.
            let mut seen = BTreeSet::new();
            for _ in 0..CARVE_CHUNK - 2 {
                seen.insert(p.meta.alloc_block(policy).unwrap());
            }
            assert!(!seen.contains(&a));
            assert_eq!(p.meta.alloc_block(policy), Some(a));
        }
    }

    #[test]
    fn triple_migrates_shared_list_last() {
        let policy = FreeListPolicy::TripleEmulated;
        let mut p = page(512, 1024);
        unsafe {
            let a = p.meta.alloc_block(policy).unwrap();
            let b = p.meta.alloc_block(policy).unwrap();
            p.meta.free_block_shared(a);
            p.meta.free_block(b, policy);
            assert_eq!(p.meta.alloc_block(policy), Some(b));
            assert_eq!(p.meta.alloc_block(policy), Some(a));
            assert_eq!(p.meta.alloc_block(policy), None);
        }
    }

    #[test]
    fn carve_limit_stops_at_committed_bytes() {
        let mut p = page(1024, 8192);
        p.meta.committed = 2048;
        p.meta.update_carve_limit();
        unsafe {
            assert!(p.meta.alloc_block(FreeListPolicy::Single).is_some());
            assert!(p.meta.alloc_block(FreeListPolicy::Single).is_some());
            assert!(p.meta.alloc_block(FreeListPolicy::Single).is_none());
        }
        assert!(p.meta.has_space());
    }

    /// Random alloc/free against a shadow set: list length equals
    /// carved - used after every step, with no duplicates.
    #[test]
    fn accounting_holds_under_random_ops() {
        use rand::{Rng, SeedableRng};
        for policy in [FreeListPolicy::Single, FreeListPolicy::TripleEmulated] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let mut p = page(24, 24 * 200);
            let mut live: Vec<NonNull<u8>> = Vec::new();
            for _ in 0..10_000 {
                if live.is_empty() || (rng.random_bool(0.55) && p.meta.has_space()) {
                    if let Some(b) = unsafe { p.meta.alloc_block(policy) } {
                        assert!(!live.contains(&b));
                        live.push(b);
                    }
                } else {
                    let i = rng.random_range(0..live.len());
                    let b = live.swap_remove(i);
                    unsafe { p.meta.free_block(b, policy) };
                }
                let mut all = BTreeSet::new();
                let mut total = 0;
                for head in p.meta.list_heads() {
                    for b in unsafe { list(head) } {
                        assert!(b >= p.meta.start && b < p.meta.end());
                        assert_eq!((b - p.meta.start) % 24, 0);
                        assert!(all.insert(b));
                        total += 1;
                    }
                }
                assert_eq!(total, p.meta.carved() - p.meta.used());
                assert_eq!(p.meta.used(), live.len());
            }
        }
    }
}
