use alloc::vec::Vec;

use crate::backend::{BackendCounters, OsBackend};
use crate::heap::Heap;
use crate::size_classes::{block_size_of_class, PageType, NUM_CLASSES};

/// Pages currently assigned to one size class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassPages {
    pub class: usize,
    pub block_size: usize,
    pub pages: usize,
    pub used_blocks: usize,
    pub carved_blocks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PageTypeStats {
    pub page_type: PageType,
    pub live_segments: usize,
    pub cached_segments: usize,
    pub committed_bytes: usize,
    pub reserved_bytes: usize,
}

/// Snapshot of heap counters and gauges.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeapStats {
    pub alloc_ops: u64,
    pub free_ops: u64,
    pub realloc_ops: u64,
    /// Block-size-rounded bytes of live allocations.
    pub bytes_live: usize,
    pub peak_live: usize,
    pub committed_bytes: usize,
    pub reserved_bytes: usize,
    pub peak_committed: usize,
    /// `committed_bytes / max(bytes_live, 1)`.
    pub fragmentation_ratio: f64,
    /// Classes with at least one page.
    pub class_pages: Vec<ClassPages>,
    pub page_types: Vec<PageTypeStats>,
    pub backend: BackendCounters,
}

impl<B: OsBackend> Heap<B> {
    pub fn bytes_live(&self) -> usize {
        self.stats.bytes_live
    }

    pub fn stats(&self) -> HeapStats {
        let backend = self.backend.counters();
        let mut class_pages = Vec::new();
        for class in 0..NUM_CLASSES {
            let q = self.queues[class];
            if q.len == 0 {
                continue;
            }
            let mut entry =
                ClassPages { class, block_size: block_size_of_class(class), pages: 0, used_blocks: 0, carved_blocks: 0 };
            let mut page = q.head;
            while !page.is_null() {
                // SAFETY: queued pages are initialized metadata in live segments.
                let p = unsafe { &*page };
                entry.pages += 1;
                entry.used_blocks += p.used();
                entry.carved_blocks += p.carved();
                page = p.next;
            }
            class_pages.push(entry);
        }
        let page_types = PageType::ALL
            .iter()
            .map(|&t| {
                let mut s = PageTypeStats {
                    page_type: t,
                    live_segments: self.segments.live_count[t.index()],
                    cached_segments: self.segments.cached_count(t),
                    committed_bytes: 0,
                    reserved_bytes: 0,
                };
                for seg in self.segments.all_segments() {
                    // SAFETY: every listed segment has its header committed.
                    let seg = unsafe { &*seg };
                    if seg.page_type() == t {
                        s.committed_bytes += seg.committed_bytes();
                        s.reserved_bytes += seg.segment_size();
                    }
                }
                s
            })
            .collect();
        HeapStats {
            alloc_ops: self.stats.allocs,
            free_ops: self.stats.frees,
            realloc_ops: self.stats.reallocs,
            bytes_live: self.stats.bytes_live,
            peak_live: self.stats.peak_live,
            committed_bytes: backend.committed_bytes,
            reserved_bytes: backend.reserved_bytes,
            peak_committed: self.stats.peak_committed.max(backend.committed_bytes),
            fragmentation_ratio: backend.committed_bytes as f64 / self.stats.bytes_live.max(1) as f64,
            class_pages,
            page_types,
            backend,
        }
    }
}
