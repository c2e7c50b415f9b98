//! The class table against a brute-force model built from first principles:
//! 8-byte steps to 1 KiB, then eight evenly spaced classes per doubling.

use stalloc::size_classes::{LARGE_MAX_BLOCK, MEDIUM_MAX_BLOCK, SMALL_MAX_BLOCK};
use stalloc::{class_of, class_table, AllocError, Heap, HeapConfig, PageType, SimBackend};

fn oracle_classes() -> Vec<usize> {
    let mut classes: Vec<usize> = (1..=128).map(|k| k * 8).collect();
    let mut base = 1024usize;
    'outer: loop {
        for m in 1..=8 {
            let c = base + base * m / 8;
            if c >= LARGE_MAX_BLOCK {
                classes.push(LARGE_MAX_BLOCK);
                break 'outer;
            }
            classes.push(c);
        }
        base *= 2;
    }
    classes
}

fn oracle_block(size: usize, classes: &[usize]) -> usize {
    *classes.iter().find(|&&c| c >= size.max(1)).unwrap()
}

#[test]
fn table_matches_oracle() {
    let oracle = oracle_classes();
    let table: Vec<usize> = class_table().iter().map(|c| c.block_size).collect();
    assert_eq!(table, oracle);
    assert_eq!(table.len(), 224);
}

#[test]
fn frozen_anchors() {
    let cases = [
        (0, 8),
        (1, 8),
        (8, 8),
        (9, 16),
        (33, 40),
        (1024, 1024),
        (1025, 1152),
        (1500, 1536),
        (8192, 8192),
        (8193, 9216),
        (65536, 65536),
        (65537, 73728),
        (2 << 20, 2 << 20),
        ((2 << 20) + 1, 2_359_296),
        (LARGE_MAX_BLOCK, 4_128_768),
    ];
    for (size, block) in cases {
        assert_eq!(class_of(size).unwrap().block_size, block, "size {size}");
    }
    assert_eq!(class_of(LARGE_MAX_BLOCK + 1).unwrap().page_type, PageType::Huge);
    assert_eq!(class_of(5 << 20).unwrap().block_size, 5 << 20);
    assert_eq!(class_of(usize::MAX), Err(AllocError::AllocTooLarge { size: usize::MAX }));
}

#[test]
fn exhaustive_mapping_up_to_large_max() {
    let oracle = oracle_classes();
    let mut idx = 0;
    for size in 1..=LARGE_MAX_BLOCK {
        while oracle[idx] < size {
            idx += 1;
        }
        let c = class_of(size).unwrap();
        assert_eq!(c.block_size, oracle[idx], "size {size}");
        assert_eq!(c.index, idx);
        let expect_type = if c.block_size <= SMALL_MAX_BLOCK {
            PageType::Small
        } else if c.block_size <= MEDIUM_MAX_BLOCK {
            PageType::Medium
        } else {
            PageType::Large
        };
        assert_eq!(c.page_type, expect_type);
        if size <= 1024 {
            assert!(c.block_size - size < 8);
        } else {
            assert!(c.block_size as f64 / size as f64 <= 1.125);
        }
    }
    assert_eq!(oracle_block(33, &oracle), 40);
}

#[test]
fn addresses_are_aligned_to_block_size_power_of_two() {
    let mut heap = Heap::with_config(SimBackend::new().without_log(), HeapConfig::default()).unwrap();
    for c in class_table() {
        let p = heap.allocate(c.block_size).unwrap().as_ptr() as usize;
        let q = heap.allocate(c.block_size).unwrap().as_ptr() as usize;
        let align = (1usize << c.block_size.trailing_zeros()).min(4096);
        assert_eq!(p % align, 0, "class {}", c.block_size);
        assert_eq!(q % align, 0, "class {}", c.block_size);
        assert!(p.is_multiple_of(8) && q.is_multiple_of(8));
    }
}
