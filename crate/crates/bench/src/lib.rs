//! Trace replay, synthetic workloads and reporting for the stalloc heap.

#[cfg(feature = "global-hook")]
pub mod global;
#[cfg(unix)]
pub mod os;
pub mod replay;
pub mod report;
pub mod shadow;
pub mod trace;
pub mod workload;

pub use replay::{class_table_json, compare, run, AllocatorKind, BackendKind, RunConfig, RunError};
pub use report::{Comparison, StatsReport};
pub use trace::{parse_trace, parse_trace_str, serialize_trace, TraceError, TraceEvent};
pub use workload::{generate_workload, WorkloadKind, WorkloadSpec};
