//! Mapping between request sizes, size-class indices, block sizes and page types.
//!
//! Block sizes grow in 8-byte steps up to 1 KiB, then geometrically with eight
//! classes per power of two (at most 12.5% apart) up to the largest block a
//! single-page segment can hold. Anything bigger gets its own huge segment.

use alloc::vec::Vec;

use crate::error::AllocError;

pub const SEGMENT_SHIFT: u32 = 22;
/// Every non-huge segment is this large and aligned to it.
pub const SEGMENT_SIZE: usize = 1 << SEGMENT_SHIFT;
pub const SEGMENT_MASK: usize = SEGMENT_SIZE - 1;

pub const SMALL_PAGE_SHIFT: u32 = 16;
pub const MEDIUM_PAGE_SHIFT: u32 = 19;
pub const SMALL_PAGE_SIZE: usize = 1 << SMALL_PAGE_SHIFT;
pub const MEDIUM_PAGE_SIZE: usize = 1 << MEDIUM_PAGE_SHIFT;

/// Largest OS page size the layout supports. Segment headers of medium and
/// large segments always fit below this offset.
pub const MAX_OS_PAGE_SIZE: usize = 64 * 1024;
/// Granularity used by [`class_of`] when rounding huge requests.
pub const MIN_OS_PAGE_SIZE: usize = 4096;

pub const LINEAR_STEP: usize = 8;
pub const LINEAR_MAX: usize = 1024;
const LINEAR_CLASSES: usize = LINEAR_MAX / LINEAR_STEP;
pub const CLASSES_PER_DOUBLING: usize = 8;
const CLASS_BITS: u32 = CLASSES_PER_DOUBLING.trailing_zeros();

pub const SMALL_MAX_BLOCK: usize = 8 * 1024;
pub const MEDIUM_MAX_BLOCK: usize = 64 * 1024;
pub const LARGE_MAX_BLOCK: usize = SEGMENT_SIZE - MAX_OS_PAGE_SIZE;

/// Requests above this are rejected with [`AllocError::AllocTooLarge`].
#[cfg(target_pointer_width = "64")]
pub const MAX_ALLOC_SIZE: usize = 1 << 46;
#[cfg(not(target_pointer_width = "64"))]
pub const MAX_ALLOC_SIZE: usize = 1 << 30;

const LINEAR_EXP: u32 = LINEAR_MAX.trailing_zeros();
const LAST_EXP: u32 = SEGMENT_SHIFT - 1;

/// Number of non-huge size classes.
pub const NUM_CLASSES: usize =
    LINEAR_CLASSES + (LAST_EXP - LINEAR_EXP + 1) as usize * CLASSES_PER_DOUBLING;
/// Pseudo class index reported for huge requests.
pub const HUGE_CLASS: usize = NUM_CLASSES;

const fn geometric_block(exp: u32, mantissa: usize) -> usize {
    let block = (1usize << exp) + (mantissa + 1) * (1usize << (exp - CLASS_BITS));
    if block > LARGE_MAX_BLOCK {
        LARGE_MAX_BLOCK
    } else {
        block
    }
}

const fn build_block_sizes() -> [u32; NUM_CLASSES] {
    let mut table = [0u32; NUM_CLASSES];
    let mut i = 0;
    while i < LINEAR_CLASSES {
        table[i] = ((i + 1) * LINEAR_STEP) as u32;
        i += 1;
    }
    while i < NUM_CLASSES {
        let g = i - LINEAR_CLASSES;
        let exp = LINEAR_EXP + (g / CLASSES_PER_DOUBLING) as u32;
        table[i] = geometric_block(exp, g % CLASSES_PER_DOUBLING) as u32;
        i += 1;
    }
    table
}

static BLOCK_SIZES: [u32; NUM_CLASSES] = build_block_sizes();

const _: () = assert!(NUM_CLASSES == 224);
const _: () = assert!(build_block_sizes()[NUM_CLASSES - 1] as usize == LARGE_MAX_BLOCK);
const _: () = assert!(LARGE_MAX_BLOCK.is_multiple_of(LINEAR_STEP));
// Small pages hold at least 8 blocks of their largest class.
const _: () = assert!(SMALL_PAGE_SIZE / SMALL_MAX_BLOCK >= 8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PageType {
    Small,
    Medium,
    Large,
    Huge,
}

impl PageType {
    pub const ALL: [PageType; 4] = [PageType::Small, PageType::Medium, PageType::Large, PageType::Huge];

    /// Dense index, usable for per-type arrays.
    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn params(self) -> PageTypeParams {
        match self {
            PageType::Small => PageTypeParams {
                page_type: self,
                pages_per_segment: 64,
                page_size: SMALL_PAGE_SIZE,
                max_block_size: SMALL_MAX_BLOCK,
            },
            PageType::Medium => PageTypeParams {
                page_type: self,
                pages_per_segment: 8,
                page_size: MEDIUM_PAGE_SIZE,
                max_block_size: MEDIUM_MAX_BLOCK,
            },
            PageType::Large => PageTypeParams {
                page_type: self,
                pages_per_segment: 1,
                page_size: SEGMENT_SIZE,
                max_block_size: LARGE_MAX_BLOCK,
            },
            // One page whose size equals the (rounded) object.
            PageType::Huge => PageTypeParams {
                page_type: self,
                pages_per_segment: 1,
                page_size: 0,
                max_block_size: MAX_ALLOC_SIZE,
            },
        }
    }

    #[inline]
    pub const fn page_shift(self) -> u32 {
        match self {
            PageType::Small => SMALL_PAGE_SHIFT,
            PageType::Medium => MEDIUM_PAGE_SHIFT,
            PageType::Large | PageType::Huge => SEGMENT_SHIFT,
        }
    }

    pub const fn for_block_size(block_size: usize) -> PageType {
        if block_size <= SMALL_MAX_BLOCK {
            PageType::Small
        } else if block_size <= MEDIUM_MAX_BLOCK {
            PageType::Medium
        } else if block_size <= LARGE_MAX_BLOCK {
            PageType::Large
        } else {
            PageType::Huge
        }
    }
}

/// Static layout parameters of one page type. `page_size` is 0 for huge pages,
/// whose size is the rounded object size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PageTypeParams {
    pub page_type: PageType,
    pub pages_per_segment: usize,
    pub page_size: usize,
    pub max_block_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeClass {
    pub index: usize,
    pub block_size: usize,
    pub page_type: PageType,
}

/// Class index for a non-huge size. `size` must be in `1..=LARGE_MAX_BLOCK`.
#[inline(always)]
pub(crate) fn class_index(size: usize) -> usize {
    debug_assert!((1..=LARGE_MAX_BLOCK).contains(&size));
    if size <= LINEAR_MAX {
        size.div_ceil(LINEAR_STEP) - 1
    } else {
        let x = size - 1;
        let exp = usize::BITS - 1 - x.leading_zeros();
        let mantissa = (x >> (exp - CLASS_BITS)) & (CLASSES_PER_DOUBLING - 1);
        LINEAR_CLASSES + (exp - LINEAR_EXP) as usize * CLASSES_PER_DOUBLING + mantissa
    }
}

#[inline(always)]
pub(crate) fn block_size_of_class(index: usize) -> usize {
    BLOCK_SIZES[index] as usize
}

#[inline]
pub(crate) const fn round_up(value: usize, align: usize) -> usize {
    (value + align - 1) & !(align - 1)
}

/// Block size of a huge allocation for the given OS page size.
#[inline]
pub fn huge_block_size(size: usize, os_page_size: usize) -> usize {
    round_up(size.max(1), os_page_size)
}

/// Maps a request to its size class. A zero-byte request is treated as one byte.
pub fn class_of(size: usize) -> Result<SizeClass, AllocError> {
    let size = size.max(1);
    if size > MAX_ALLOC_SIZE {
        return Err(AllocError::AllocTooLarge { size });
    }
    if size > LARGE_MAX_BLOCK {
        return Ok(SizeClass {
            index: HUGE_CLASS,
            block_size: huge_block_size(size, MIN_OS_PAGE_SIZE),
            page_type: PageType::Huge,
        });
    }
    let index = class_index(size);
    let block_size = block_size_of_class(index);
    Ok(SizeClass { index, block_size, page_type: PageType::for_block_size(block_size) })
}

/// Class descriptor by index. Panics if `index >= NUM_CLASSES`.
pub fn class_at(index: usize) -> SizeClass {
    let block_size = block_size_of_class(index);
    SizeClass { index, block_size, page_type: PageType::for_block_size(block_size) }
}

/// The full monotone class table.
pub fn class_table() -> Vec<SizeClass> {
    (0..NUM_CLASSES).map(class_at).collect()
}

/// Index of the block containing `addr` in a page starting at `page_start`.
/// Fails with `HeapCorruption` if `addr` is not on a block boundary.
#[inline]
pub fn block_index_in_page(
    page_start: usize,
    block_size: usize,
    addr: usize,
) -> Result<usize, AllocError> {
    let offset = addr.checked_sub(page_start).ok_or(AllocError::HeapCorruption { addr })?;
    if offset % block_size != 0 {
        return Err(AllocError::HeapCorruption { addr });
    }
    Ok(offset / block_size)
}

#[inline]
pub fn block_address(page_start: usize, block_size: usize, index: usize) -> usize {
    page_start + index * block_size
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let one = class_of(1).unwrap();
        assert_eq!((one.index, one.block_size, one.page_type), (0, 8, PageType::Small));
        assert_eq!(class_of(8).unwrap().block_size, 8);
        assert_eq!(class_of(9).unwrap().block_size, 16);
        assert_eq!(class_of(33).unwrap().block_size, 40);
        assert_eq!(class_of(0).unwrap(), class_of(1).unwrap());
    }

    #[test]
    fn huge_rounds_to_os_page() {
        let c = class_of(5 * 1024 * 1024).unwrap();
        assert_eq!(c.page_type, PageType::Huge);
        assert_eq!(c.block_size, 5 * 1024 * 1024);
        assert_eq!(class_of(LARGE_MAX_BLOCK + 1).unwrap().block_size, LARGE_MAX_BLOCK + 4096);
        assert_eq!(class_of(LARGE_MAX_BLOCK).unwrap().page_type, PageType::Large);
    }

    #[test]
    fn too_large_is_rejected() {
        assert_eq!(
            class_of(MAX_ALLOC_SIZE + 1),
            Err(AllocError::AllocTooLarge { size: MAX_ALLOC_SIZE + 1 })
        );
    }

    #[test]
    fn thresholds() {
        assert_eq!(class_of(SMALL_MAX_BLOCK).unwrap().page_type, PageType::Small);
        assert_eq!(class_of(SMALL_MAX_BLOCK + 1).unwrap().page_type, PageType::Medium);
        assert_eq!(class_of(MEDIUM_MAX_BLOCK).unwrap().page_type, PageType::Medium);
        assert_eq!(class_of(MEDIUM_MAX_BLOCK + 8).unwrap().page_type, PageType::Large);
    }

    #[test]
    fn table_shape() {
        let table = class_table();
        assert_eq!(table.len(), NUM_CLASSES);
        assert_eq!(table[0], SizeClass { index: 0, block_size: 8, page_type: PageType::Small });
        for pair in table.windows(2) {
            assert!(pair[0].block_size < pair[1].block_size);
            assert_eq!(pair[1].block_size % 8, 0);
        }
    }

    #[test]
    fn block_index_examples() {
        let base = 0x10_0000;
        assert_eq!(block_index_in_page(base, 8, base), Ok(0));
        assert_eq!(block_index_in_page(base, 8, base + 16), Ok(2));
        assert_eq!(
            block_index_in_page(base, 8, base + 12),
            Err(AllocError::HeapCorruption { addr: base + 12 })
        );
        assert!(block_index_in_page(base, 8, base - 8).is_err());
    }
}
