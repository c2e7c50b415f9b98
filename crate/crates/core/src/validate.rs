//! Full consistency walk over segments, pages, free lists and queues.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::backend::OsBackend;
use crate::heap::Heap;
use crate::page::{Block, FreeListPolicy, PageMeta};
use crate::segment::{SegmentHeader, SEGMENT_MAGIC};
use crate::size_classes::{block_size_of_class, PageType, NUM_CLASSES, SEGMENT_MASK};

/// First inconsistency found, with its location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub segment: Option<usize>,
    pub page: Option<usize>,
    pub block: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)?;
        if let Some(s) = self.segment {
            write!(f, " (segment {s:#x}")?;
            if let Some(p) = self.page {
                write!(f, ", page {p}")?;
            }
            if let Some(b) = self.block {
                write!(f, ", block {b:#x}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violation: Option<Violation>,
    pub segments_checked: usize,
    pub pages_checked: usize,
    pub free_blocks_checked: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

struct Fail(Violation);

type Check = Result<(), Fail>;

fn fail(segment: Option<usize>, page: Option<usize>, block: Option<usize>, message: String) -> Fail {
    Fail(Violation { segment, page, block, message })
}

macro_rules! ensure {
    ($cond:expr, $seg:expr, $page:expr, $block:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(fail($seg, $page, $block, format!($($msg)+)));
        }
    };
}

impl<B: OsBackend> Heap<B> {
    /// Walks every structure and reports the first broken invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Err(Fail(v)) = self.validate_inner(&mut report) {
            report.violation = Some(v);
        }
        report
    }

    fn validate_inner(&self, report: &mut ValidationReport) -> Check {
        let mut in_use_pages = BTreeSet::new();
        let mut bytes_live = 0usize;
        let mut committed = 0usize;

        for &base in &self.segments.live {
            let seg = base as *mut SegmentHeader;
            report.segments_checked += 1;
            ensure!(base & SEGMENT_MASK == 0, Some(base), None, None, "segment not 4 MiB aligned");
            // SAFETY: live segments keep their header committed.
            let s = unsafe { &*seg };
            ensure!(s.magic == SEGMENT_MAGIC, Some(base), None, None, "bad segment magic");
            ensure!(!s.cached, Some(base), None, None, "live segment marked cached");
            ensure!(s.page_type != PageType::Huge, Some(base), None, None, "huge segment in live set");
            self.check_segment(seg, report, &mut in_use_pages, &mut bytes_live)?;
            committed += s.committed_bytes();
        }

        for (t, &seg) in self.segments.cache.iter().enumerate() {
            if seg.is_null() {
                continue;
            }
            report.segments_checked += 1;
            let base = seg as usize;
            // SAFETY: cached segments keep their header committed.
            let s = unsafe { &*seg };
            ensure!(s.magic == SEGMENT_MAGIC, Some(base), None, None, "bad magic on cached segment");
            ensure!(s.cached && s.page_type.index() == t, Some(base), None, None, "cache slot mismatch");
            ensure!(s.used_pages == 0 && s.live_pages == 0, Some(base), None, None, "cached segment has pages in use");
            ensure!(!self.segments.live.contains(&base), Some(base), None, None, "cached segment also live");
            for slot in 0..s.reserved_pages as usize {
                // SAFETY: the page array follows the header.
                let p = unsafe { &*SegmentHeader::page(seg, slot) };
                ensure!(!p.in_use, Some(base), Some(slot), None, "cached segment has an in-use page");
            }
            committed += s.committed_bytes();
        }

        for (&base, &len) in &self.segments.huge {
            report.segments_checked += 1;
            let seg = base as *mut SegmentHeader;
            // SAFETY: huge segments are fully committed while live.
            let s = unsafe { &*seg };
            ensure!(s.magic == SEGMENT_MAGIC, Some(base), None, None, "bad magic on huge segment");
            ensure!(s.page_type == PageType::Huge, Some(base), None, None, "huge table entry is not huge");
            ensure!(s.segment_size == len, Some(base), None, None, "huge length mismatch");
            let p = unsafe { &*SegmentHeader::page(seg, 0) };
            ensure!(p.used == 1 && p.in_use, Some(base), Some(0), None, "huge page not live");
            ensure!(
                p.start == base + s.first_page_offset && p.start + p.block_size <= base + len,
                Some(base),
                Some(0),
                None,
                "huge block outside its segment"
            );
            bytes_live += p.block_size;
            committed += s.committed_bytes();
        }

        let backend_committed = self.backend.counters().committed_bytes;
        ensure!(
            committed == backend_committed,
            None,
            None,
            None,
            "segments account for {committed} committed bytes, backend reports {backend_committed}"
        );
        ensure!(
            bytes_live == self.stats.bytes_live,
            None,
            None,
            None,
            "pages hold {bytes_live} live bytes, counter says {}",
            self.stats.bytes_live
        );

        self.check_queues(&in_use_pages)?;
        self.check_slot_lists()
    }

    fn check_segment(
        &self,
        seg: *mut SegmentHeader,
        report: &mut ValidationReport,
        in_use_pages: &mut BTreeSet<usize>,
        bytes_live: &mut usize,
    ) -> Check {
        let base = seg as usize;
        // SAFETY: caller checked the header.
        let s = unsafe { &*seg };
        let (mut used, mut live, mut free_mask) = (0u32, 0u32, 0u64);
        for slot in 0..s.reserved_pages as usize {
            let page = unsafe { SegmentHeader::page(seg, slot) };
            let p = unsafe { &*page };
            let (start, len) = s.slot_range(slot);
            ensure!(p.slot as usize == slot, Some(base), Some(slot), None, "slot index mismatch");
            ensure!(p.committed <= len, Some(base), Some(slot), None, "page committed beyond its slot");
            if !p.in_use {
                if len > 0 {
                    free_mask |= 1 << slot;
                }
                continue;
            }
            report.pages_checked += 1;
            used += 1;
            if p.used > 0 {
                live += 1;
            }
            in_use_pages.insert(page as usize);
            ensure!(p.start == start, Some(base), Some(slot), None, "page start mismatch");
            self.check_page(base, slot, page, len, report)?;
            *bytes_live += p.used as usize * p.block_size;
        }
        ensure!(s.used_pages == used, Some(base), None, None, "used_pages {} but {used} pages in use", s.used_pages);
        ensure!(s.live_pages == live, Some(base), None, None, "live_pages {} but {live} pages hold blocks", s.live_pages);
        ensure!(s.free_slots == free_mask, Some(base), None, None, "free slot bitmap out of sync");
        Ok(())
    }

    fn check_page(
        &self,
        base: usize,
        slot: usize,
        page: *mut PageMeta,
        slot_len: usize,
        report: &mut ValidationReport,
    ) -> Check {
        // SAFETY: in-use pages are initialized.
        let p = unsafe { &*page };
        let at = |block: Option<usize>, msg: String| fail(Some(base), Some(slot), block, msg);
        let class = p.class as usize;
        ensure!(class < NUM_CLASSES, Some(base), Some(slot), None, "class {class} out of range");
        ensure!(p.block_size == block_size_of_class(class), Some(base), Some(slot), None, "block size mismatch");
        ensure!(p.capacity as usize == slot_len / p.block_size, Some(base), Some(slot), None, "capacity mismatch");
        ensure!(
            p.used <= p.carved && p.carved <= p.carve_limit && p.carve_limit <= p.capacity,
            Some(base),
            Some(slot),
            None,
            "counts out of order: used {} carved {} limit {} capacity {}",
            p.used,
            p.carved,
            p.carve_limit,
            p.capacity
        );
        ensure!(
            p.carve_limit as usize * p.block_size <= p.committed,
            Some(base),
            Some(slot),
            None,
            "carve limit past committed memory"
        );
        if self.policy == FreeListPolicy::Single {
            ensure!(
                p.local_free.is_null() && p.shared_free.is_null(),
                Some(base),
                Some(slot),
                None,
                "single policy page has deferred lists"
            );
        }
        let carved = p.carved as usize;
        let mut seen = vec![0u64; carved.div_ceil(64).max(1)];
        let mut listed = 0usize;
        for head in p.list_heads() {
            let mut b = head;
            while !b.is_null() {
                let addr = b as usize;
                let off = addr.wrapping_sub(p.start);
                if addr < p.start || off >= carved * p.block_size {
                    return Err(at(Some(addr), String::from("free-list link outside the carved blocks")));
                }
                if off % p.block_size != 0 {
                    return Err(at(Some(addr), String::from("misaligned free-list link")));
                }
                let idx = off / p.block_size;
                if seen[idx / 64] & (1 << (idx % 64)) != 0 {
                    return Err(at(Some(addr), String::from("block listed twice")));
                }
                seen[idx / 64] |= 1 << (idx % 64);
                listed += 1;
                if let Some(bits) = self.live_bits.get(&(page as usize)) {
                    if bits[idx / 64] & (1 << (idx % 64)) != 0 {
                        return Err(at(Some(addr), String::from("live block on a free list")));
                    }
                }
                // SAFETY: `b` is a carved, committed block of this page.
                b = unsafe { (*b.cast::<Block>()).next };
            }
        }
        report.free_blocks_checked += listed;
        ensure!(
            listed == carved - p.used as usize,
            Some(base),
            Some(slot),
            None,
            "free lists hold {listed} blocks, expected {}",
            carved - p.used as usize
        );
        if self.checked {
            let Some(bits) = self.live_bits.get(&(page as usize)) else {
                return Err(at(None, String::from("no liveness bitmap for page")));
            };
            let live = bits.iter().map(|w| w.count_ones() as usize).sum::<usize>();
            ensure!(live == p.used as usize, Some(base), Some(slot), None, "{live} live bits for {} used", p.used);
        }
        Ok(())
    }

    fn check_queues(&self, in_use_pages: &BTreeSet<usize>) -> Check {
        let mut queued = 0usize;
        for class in 0..NUM_CLASSES {
            let q = self.queues[class];
            let mut page = q.head;
            let mut prev: *mut PageMeta = core::ptr::null_mut();
            let mut count = 0usize;
            let mut exhausted_seen = false;
            let mut any_space = false;
            while !page.is_null() {
                let addr = page as usize;
                let seg = addr & !SEGMENT_MASK;
                ensure!(in_use_pages.contains(&addr), Some(seg), None, None, "class {class} queue holds a page that is not in use");
                ensure!(count < q.len, Some(seg), None, None, "class {class} queue longer than its length");
                // SAFETY: membership in `in_use_pages` proves it is live metadata.
                let p = unsafe { &*page };
                let slot = Some(p.slot as usize);
                ensure!(p.class as usize == class, Some(seg), slot, None, "page queued under class {class}");
                ensure!(p.prev == prev, Some(seg), slot, None, "broken queue back-link");
                let space = p.has_space();
                ensure!(!(space && exhausted_seen), Some(seg), slot, None, "page with space behind an exhausted page");
                exhausted_seen |= !space;
                any_space |= space;
                if p.used == 0 {
                    // SAFETY: segment of a live page.
                    let live = unsafe { (*(seg as *mut SegmentHeader)).live_pages };
                    ensure!(q.len == 1 && live > 0, Some(seg), slot, None, "empty page retained needlessly");
                }
                prev = page;
                page = p.next;
                count += 1;
            }
            ensure!(count == q.len, None, None, None, "class {class} queue length {} but {count} pages", q.len);
            ensure!(q.tail == prev, None, None, None, "class {class} queue tail mismatch");
            ensure!(
                self.class_has_space(class) == any_space,
                None,
                None,
                None,
                "nonempty bit for class {class} disagrees with its queue"
            );
            queued += count;
        }
        ensure!(queued == in_use_pages.len(), None, None, None, "{} in-use pages but {queued} queued", in_use_pages.len());
        Ok(())
    }

    fn check_slot_lists(&self) -> Check {
        let mut listed = Vec::new();
        for t in [PageType::Small, PageType::Medium, PageType::Large] {
            let mut seg = self.segments.segment_with_free_slot(t).unwrap_or(core::ptr::null_mut());
            let mut steps = 0usize;
            while !seg.is_null() {
                let base = seg as usize;
                ensure!(self.segments.live.contains(&base), Some(base), None, None, "slot list holds a non-live segment");
                ensure!(steps <= self.segments.live.len(), Some(base), None, None, "slot list cycle");
                // SAFETY: live segment.
                let s = unsafe { &*seg };
                ensure!(s.page_type == t && s.in_slot_list, Some(base), None, None, "slot list type mismatch");
                ensure!(s.free_slots != 0, Some(base), None, None, "full segment on slot list");
                listed.push(base);
                seg = s.next_free;
                steps += 1;
            }
        }
        for &base in &self.segments.live {
            // SAFETY: live segment.
            let s = unsafe { &*(base as *mut SegmentHeader) };
            let expect = s.free_slots != 0;
            ensure!(listed.contains(&base) == expect, Some(base), None, None, "slot list membership out of sync");
        }
        Ok(())
    }
}
