//! A `GlobalAlloc` front end over one process-wide stalloc heap.
//!
//! Requests with alignment up to 16 go to the heap (rounded up to the
//! alignment so the block size class provides it); anything else, and any
//! request made while the heap itself is busy, goes to [`System`]. Frees are
//! routed by asking the heap whether it owns the address.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::{Cell, UnsafeCell};
use std::sync::atomic::{AtomicBool, Ordering};

use stalloc::{Heap, HeapConfig};

use crate::os::MmapBackend;

const HEAP_MAX_ALIGN: usize = 16;

thread_local! {
    /// Set while this thread is inside the heap, so the heap's own metadata
    /// allocations fall through to the system allocator.
    static IN_HEAP: Cell<bool> = const { Cell::new(false) };
}

pub struct StallocGlobal {
    lock: AtomicBool,
    heap: UnsafeCell<Option<Heap<MmapBackend>>>,
}

// SAFETY: all access to `heap` happens under `lock`.
unsafe impl Sync for StallocGlobal {}

impl StallocGlobal {
    pub const fn new() -> Self {
        StallocGlobal { lock: AtomicBool::new(false), heap: UnsafeCell::new(None) }
    }

    /// Runs `f` on the heap if the lock is free and this is not a reentrant call.
    fn try_with<R>(&self, f: impl FnOnce(&mut Heap<MmapBackend>) -> R) -> Option<R> {
        if IN_HEAP.get() || self.lock.compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed).is_err() {
            return None;
        }
        IN_HEAP.set(true);
        // SAFETY: the lock is held.
        let slot = unsafe { &mut *self.heap.get() };
        if slot.is_none() {
            // Unchecked: checked mode records thread ownership, which does not
            // fit a heap shared across threads behind a lock.
            let config = HeapConfig::default().with_checked(false);
            *slot = Heap::with_config(MmapBackend::new(), config).ok();
        }
        let out = slot.as_mut().map(f);
        IN_HEAP.set(false);
        self.lock.store(false, Ordering::Release);
        out
    }

    /// Like `try_with` but waits for another thread to release the lock.
    fn with<R>(&self, f: impl FnOnce(&mut Heap<MmapBackend>) -> R) -> Option<R> {
        if IN_HEAP.get() {
            return None;
        }
        let mut f = Some(f);
        loop {
            if let Some(r) = self.try_with(|h| (f.take().expect("called once"))(h)) {
                return Some(r);
            }
            std::hint::spin_loop();
        }
    }
}

impl Default for StallocGlobal {
    fn default() -> Self {
        Self::new()
    }
}

unsafe impl GlobalAlloc for StallocGlobal {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if layout.align() <= HEAP_MAX_ALIGN {
            let size = layout.size().max(1).next_multiple_of(layout.align());
            if let Some(Ok(p)) = self.try_with(|h| h.allocate(size)) {
                return p.as_ptr();
            }
        }
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        if layout.align() <= HEAP_MAX_ALIGN {
            let freed = self.with(|h| {
                let owned = h.owns(ptr as usize);
                if owned {
                    // A heap-owned block must never reach `System`; on error it leaks.
                    let _ = h.deallocate(ptr);
                }
                owned
            });
            if freed == Some(true) {
                return;
            }
        }
        System.dealloc(ptr, layout);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new_layout = Layout::from_size_align_unchecked(new_size, layout.align());
        let new = self.alloc(new_layout);
        if !new.is_null() {
            std::ptr::copy_nonoverlapping(ptr, new, layout.size().min(new_size));
            self.dealloc(ptr, layout);
        }
        new
    }
}
