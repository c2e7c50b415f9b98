//! A single-threaded segment/page heap allocator.
//!
//! Memory comes from an [`OsBackend`] in 4 MiB aligned segments. Each segment
//! is split into pages of one page type, and each page serves blocks of one
//! size class from a single in-band free list. The heap keeps one queue of
//! pages per class and takes a short fast path (pop the head page's free list)
//! for almost every allocation.
//!
//! ```
//! use stalloc::{Heap, HeapConfig, SimBackend};
//!
//! let mut heap = Heap::with_config(SimBackend::new(), HeapConfig::default()).unwrap();
//! let p = heap.allocate(33).unwrap();
//! assert_eq!(unsafe { heap.usable_size(p.as_ptr()) }, Ok(40));
//! unsafe { heap.deallocate(p.as_ptr()).unwrap() };
//! assert!(heap.validate().is_ok());
//! ```

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backend;
mod error;
mod heap;
pub mod page;
pub mod segment;
pub mod size_classes;
mod stats;
mod validate;

pub use backend::{AddressRange, BackendCounters, CommitLedger, OsBackend, SimBackend};
pub use error::AllocError;
pub use heap::{Heap, HeapConfig};
pub use page::FreeListPolicy;
pub use size_classes::{class_of, class_table, PageType, SizeClass};
pub use stats::{ClassPages, HeapStats, PageTypeStats};
pub use validate::{ValidationReport, Violation};
