//! Run reports and their JSON shape. See `REPORT_SCHEMA.md` for the field list.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stalloc::{BackendCounters, FreeListPolicy};

use crate::replay::{AllocatorKind, BackendKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50_ns: f64,
    pub p99_ns: f64,
    pub samples: usize,
}

impl LatencySummary {
    /// Nearest-rank percentiles over per-op batch means.
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let rank = |p: f64| samples[((p * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1];
        LatencySummary { p50_ns: rank(0.50), p99_ns: rank(0.99), samples: samples.len() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub alloc: LatencySummary,
    pub free: LatencySummary,
    pub realloc: LatencySummary,
}

/// Wall-clock measurements; everything outside this object is deterministic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
    pub ops_per_second: f64,
    pub latency: Latency,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReuseStats {
    /// Allocations for which a block of the same class had just been freed.
    /// Only block sizes up to the Medium maximum (64 KiB) take part.
    pub candidates: u64,
    /// Of those, allocations that returned exactly that block.
    pub hits: u64,
    pub hit_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub allocator: AllocatorKind,
    pub policy: Option<FreeListPolicy>,
    pub backend: Option<BackendKind>,
    pub source: String,
    pub events: u64,
    pub alloc_events: u64,
    pub free_events: u64,
    pub realloc_events: u64,
    /// Peak of the sum of requested sizes.
    pub peak_requested: usize,
    /// Peak of live bytes as the allocator accounts them (block-rounded for stalloc).
    pub peak_live: usize,
    pub peak_committed: Option<usize>,
    /// `peak_committed / peak_live`.
    pub fragmentation_ratio: Option<f64>,
    /// Heap state after the trace and any leftover slots are freed.
    pub final_bytes_live: Option<usize>,
    pub final_live_segments: Option<usize>,
    pub final_cached_segments: Option<usize>,
    pub final_committed: Option<usize>,
    pub final_reserved: Option<usize>,
    pub backend_counters: Option<BackendCounters>,
    pub reuse: ReuseStats,
    pub validated: bool,
    pub timing: Option<Timing>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub config: String,
    /// Throughput relative to the first config.
    pub speedup: Option<f64>,
    /// Peak committed bytes relative to the first config.
    pub memory_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub configs: Vec<String>,
    pub reports: Vec<StatsReport>,
    pub ratios: Vec<Ratio>,
}

impl StatsReport {
    /// JSON with the `timing` object removed, for determinism checks.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {}{} on {}\n  events {} (alloc {}, free {}, realloc {})\n  peak live {} B, peak requested {} B\n",
            self.allocator.name(),
            self.policy.map(|p| format!("{p:?} ").to_lowercase()).unwrap_or_default(),
            self.backend.map(|b| format!("[{}]", b.name())).unwrap_or_default(),
            self.source,
            self.events,
            self.alloc_events,
            self.free_events,
            self.realloc_events,
            self.peak_live,
            self.peak_requested,
        );
        if let (Some(pc), Some(fr)) = (self.peak_committed, self.fragmentation_ratio) {
            out += &format!("  peak committed {pc} B, fragmentation {fr:.3}\n");
        }
        if let Some(c) = self.backend_counters {
            out += &format!(
                "  syscalls: reserve {} commit {} decommit {} release {}\n",
                c.reserve_count, c.commit_count, c.decommit_count, c.release_count
            );
        }
        out += &format!("  reuse hit rate {:.4} ({}/{})\n", self.reuse.hit_rate, self.reuse.hits, self.reuse.candidates);
        if let Some(t) = self.timing {
            out += &format!(
                "  {:.0} ops/s, wall {:.3} s; p50/p99 ns alloc {:.1}/{:.1} free {:.1}/{:.1} realloc {:.1}/{:.1}\n",
                t.ops_per_second,
                t.wall_time_s,
                t.latency.alloc.p50_ns,
                t.latency.alloc.p99_ns,
                t.latency.free.p50_ns,
                t.latency.free.p99_ns,
                t.latency.realloc.p50_ns,
                t.latency.realloc.p99_ns
            );
        }
        out
    }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out += &r.to_text();
        }
        out += &format!("{:<24} {:>10} {:>12}\n", "config", "speedup", "memory");
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for r in &self.ratios {
            out += &format!("{:<24} {:>10} {:>12}\n", r.config, fmt(r.speedup), fmt(r.memory_ratio));
        }
        out
    }
}

fn require<'a>(v: &'a Value, key: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("missing field {key:?}"))
}

fn require_uint(v: &Value, key: &str) -> Result<u64, String> {
    require(v, key)?.as_u64().ok_or_else(|| format!("{key:?} must be a non-negative integer"))
}

fn optional_uint(v: &Value, key: &str) -> Result<Option<u64>, String> {
    match require(v, key)? {
        Value::Null => Ok(None),
        x => x.as_u64().map(Some).ok_or_else(|| format!("{key:?} must be an integer or null")),
    }
}

/// Checks a report against the documented schema and its invariants.
pub fn validate_report_json(v: &Value) -> Result<(), String> {
    if require_uint(v, "schema_version")? != SCHEMA_VERSION as u64 {
        return Err("unsupported schema_version".into());
    }
    match require(v, "allocator")?.as_str() {
        Some("stalloc" | "system") => {}
        _ => return Err("allocator must be \"stalloc\" or \"system\"".into()),
    }
    require(v, "source")?.as_str().ok_or("source must be a string")?;
    let events = require_uint(v, "events")?;
    let parts = require_uint(v, "alloc_events")? + require_uint(v, "free_events")? + require_uint(v, "realloc_events")?;
    if parts != events {
        return Err("event counts do not add up".into());
    }
    let peak_live = require_uint(v, "peak_live")?;
    require_uint(v, "peak_requested")?;
    if let Some(pc) = optional_uint(v, "peak_committed")? {
        if peak_live > pc {
            return Err("peak_live exceeds peak_committed".into());
        }
    }
    for key in ["final_bytes_live", "final_live_segments", "final_cached_segments", "final_committed"] {
        optional_uint(v, key)?;
    }
    optional_uint(v, "final_reserved")?;
    let reuse = require(v, "reuse")?;
    let rate = require(reuse, "hit_rate")?.as_f64().ok_or("hit_rate must be a number")?;
    if !(0.0..=1.0).contains(&rate) || require_uint(reuse, "hits")? > require_uint(reuse, "candidates")? {
        return Err("reuse stats out of range".into());
    }
    require(v, "validated")?.as_bool().ok_or("validated must be a boolean")?;
    match require(v, "timing")? {
        Value::Null => {}
        t => {
            require(t, "ops_per_second")?.as_f64().ok_or("ops_per_second must be a number")?;
            require(t, "wall_time_s")?.as_f64().ok_or("wall_time_s must be a number")?;
            let lat = require(t, "latency")?;
            for op in ["alloc", "free", "realloc"] {
                let s = require(lat, op)?;
                require(s, "p50_ns")?.as_f64().ok_or("p50_ns must be a number")?;
                require(s, "p99_ns")?.as_f64().ok_or("p99_ns must be a number")?;
            }
        }
    }
    Ok(())
}

pub fn validate_comparison_json(v: &Value) -> Result<(), String> {
    if require_uint(v, "schema_version")? != SCHEMA_VERSION as u64 {
        return Err("unsupported schema_version".into());
    }
    let configs = require(v, "configs")?.as_array().ok_or("configs must be an array")?;
    let reports = require(v, "reports")?.as_array().ok_or("reports must be an array")?;
    let ratios = require(v, "ratios")?.as_array().ok_or("ratios must be an array")?;
    if configs.len() != reports.len() || ratios.len() != reports.len() || reports.len() < 2 {
        return Err("configs, reports and ratios must align and hold at least two entries".into());
    }
    for r in reports {
        validate_report_json(r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_nearest_rank() {
        let s = LatencySummary::from_samples((1..=100).map(f64::from).collect());
        assert_eq!((s.p50_ns, s.p99_ns, s.samples), (50.0, 99.0, 100));
        assert_eq!(LatencySummary::from_samples(vec![]), LatencySummary::default());
    }
}
