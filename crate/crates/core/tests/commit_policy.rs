use stalloc::backend::SimFault;
use stalloc::segment::header_bytes;
use stalloc::size_classes::{LARGE_MAX_BLOCK, MEDIUM_MAX_BLOCK, SEGMENT_SIZE, SMALL_PAGE_SIZE};
use stalloc::{Heap, HeapConfig, OsBackend, PageType, SimBackend};

fn round_up_to(v: usize, a: usize) -> usize {
    v.div_ceil(a) * a
}

fn heap(cfg: HeapConfig) -> Heap<SimBackend> {
    Heap::with_config(SimBackend::new(), cfg.with_checked(true)).unwrap()
}

#[test]
fn one_small_allocation_commits_header_and_one_page() {
    let mut h = heap(HeapConfig::default());
    h.allocate(16).unwrap();
    let c = h.backend().counters();
    assert_eq!(c.reserve_count, 1);
    assert_eq!(c.committed_bytes, round_up_to(header_bytes(PageType::Small), 4096) + SMALL_PAGE_SIZE);
    assert!(c.committed_bytes <= round_up_to(header_bytes(PageType::Small), 65536) + 65536);

    let mut eager = heap(HeapConfig::default().with_deferred_commit(false));
    eager.allocate(16).unwrap();
    assert_eq!(eager.backend().counters().committed_bytes, SEGMENT_SIZE);
}

#[test]
fn deferred_segment_pages_are_uncommitted_until_used() {
    let mut h = heap(HeapConfig::default());
    let p = h.allocate(16).unwrap().as_ptr() as usize;
    let seg = p & !(SEGMENT_SIZE - 1);
    let next_page = seg + 2 * SMALL_PAGE_SIZE;
    assert_eq!(h.backend().read_u8(next_page), Err(SimFault::Uncommitted { addr: next_page }));
    assert_eq!(h.backend().read_u8(p + 8), Ok(0));
}

#[test]
fn only_the_first_segment_per_type_is_deferred() {
    let mut h = heap(HeapConfig::default());
    // 63 pages of 8 KiB blocks, 8 per page, fill the first small segment.
    let blocks: Vec<_> = (0..63 * 8 + 1).map(|_| h.allocate(8192).unwrap()).collect();
    let c = h.backend().counters();
    assert_eq!(c.reserve_count, 2);
    let header = round_up_to(header_bytes(PageType::Small), 4096);
    assert_eq!(c.committed_bytes, header + 63 * SMALL_PAGE_SIZE + SEGMENT_SIZE);
    h.allocate(20_000).unwrap();
    let c = h.backend().counters();
    assert_eq!(c.reserve_count, 3);
    assert!(h.validate().is_ok());
    drop(blocks);
}

fn fill_and_drain(h: &mut Heap<SimBackend>) {
    let per_segment = 63 * (SMALL_PAGE_SIZE / 1024);
    let blocks: Vec<_> = (0..per_segment).map(|_| h.allocate(1024).unwrap()).collect();
    for b in blocks {
        unsafe { h.deallocate(b.as_ptr()).unwrap() };
    }
}

#[test]
fn cache_turns_refills_into_zero_reserves() {
    let mut h = heap(HeapConfig::default());
    for _ in 0..100 {
        fill_and_drain(&mut h);
    }
    assert_eq!(h.backend().counters().reserve_count, 1);
    assert!(h.validate().is_ok());

    let mut uncached = heap(HeapConfig::default().with_segment_cache(false));
    for _ in 0..100 {
        fill_and_drain(&mut uncached);
    }
    let c = uncached.backend().counters();
    assert_eq!((c.reserve_count, c.release_count), (100, 100));
}

#[test]
fn cached_segment_is_purged_after_delay_or_on_request() {
    let mut h = heap(HeapConfig::default());
    fill_and_drain(&mut h);
    let header = round_up_to(header_bytes(PageType::Small), 4096);
    assert!(h.backend().counters().committed_bytes > header);
    h.purge_cache().unwrap();
    assert_eq!(h.backend().counters().committed_bytes, header);
    assert!(h.validate().is_ok());

    fill_and_drain(&mut h);
    assert!(h.stats().page_types[PageType::Small.index()].committed_bytes > header);
    // Slow-path traffic in another page type ages the cached segment out.
    for _ in 0..300 {
        let p = h.allocate(MEDIUM_MAX_BLOCK + 8).unwrap();
        unsafe { h.deallocate(p.as_ptr()).unwrap() };
    }
    assert_eq!(h.stats().page_types[PageType::Small.index()].committed_bytes, header);
    assert!(h.validate().is_ok());
}

#[test]
fn large_commit_stays_within_two_mib_of_request() {
    let header = round_up_to(header_bytes(PageType::Large), 4096);
    let mut size = MEDIUM_MAX_BLOCK + 8;
    while size <= LARGE_MAX_BLOCK {
        let mut h = heap(HeapConfig::default());
        h.allocate(size).unwrap();
        let committed = h.backend().counters().committed_bytes;
        assert!(committed - size <= (2 << 20) + header, "size {size}: committed {committed}");
        size += 4093;
    }
}

#[test]
fn recycled_large_slot_is_trimmed() {
    let mut h = heap(HeapConfig::default());
    let big = h.allocate(LARGE_MAX_BLOCK).unwrap();
    unsafe { h.deallocate(big.as_ptr()).unwrap() };
    h.allocate(MEDIUM_MAX_BLOCK + 8).unwrap();
    let header = round_up_to(header_bytes(PageType::Large), 4096);
    let committed = h.stats().page_types[PageType::Large.index()].committed_bytes;
    assert!(committed - (MEDIUM_MAX_BLOCK + 8) <= (2 << 20) + header);
    assert_eq!(h.backend().counters().reserve_count, 1);
    assert!(h.validate().is_ok());
}

#[test]
fn huge_reservation_is_exact() {
    let mut h = heap(HeapConfig::default());
    let size = 5 * 1024 * 1024 + 1;
    let p = h.allocate(size).unwrap();
    let header = round_up_to(header_bytes(PageType::Huge), 4096);
    let c = h.backend().counters();
    assert_eq!(c.reserved_bytes, header + round_up_to(size, 4096));
    assert_eq!(c.committed_bytes, c.reserved_bytes);
    assert_eq!(unsafe { h.usable_size(p.as_ptr()) }, Ok(round_up_to(size, 4096)));
    unsafe { h.deallocate(p.as_ptr()).unwrap() };
    let c = h.backend().counters();
    assert_eq!((c.release_count, c.reserved_bytes, c.committed_bytes), (1, 0, 0));
}

#[test]
fn fresh_calloc_blocks_skip_zeroing_but_read_zero() {
    let mut h = heap(HeapConfig::default());
    let a = h.allocate_zeroed(16, 64).unwrap();
    let bytes = unsafe { std::slice::from_raw_parts(a.as_ptr(), 1024) };
    assert!(bytes.iter().all(|&b| b == 0));
    unsafe {
        std::ptr::write_bytes(a.as_ptr(), 0xEE, 1024);
        let keep = h.allocate(1024).unwrap();
        h.deallocate(a.as_ptr()).unwrap();
        let b = h.allocate_zeroed(1, 1024).unwrap();
        assert_eq!(a, b);
        assert!(std::slice::from_raw_parts(b.as_ptr(), 1024).iter().all(|&x| x == 0));
        h.deallocate(keep.as_ptr()).unwrap();
    }
}

#[test]
fn stats_track_live_and_peaks() {
    let mut h = heap(HeapConfig::default());
    assert_eq!(h.stats().bytes_live, 0);
    let a = h.allocate(8).unwrap();
    assert_eq!(h.stats().bytes_live, 8);
    let b = h.allocate(1000).unwrap();
    unsafe {
        h.deallocate(a.as_ptr()).unwrap();
        h.deallocate(b.as_ptr()).unwrap();
    }
    let s = h.stats();
    assert_eq!((s.alloc_ops, s.free_ops, s.bytes_live, s.peak_live), (2, 2, 0, 1008));
    assert!(s.peak_live <= s.peak_committed);
    assert_eq!(s.backend.reserve_count, h.backend().counters().reserve_count);
}
