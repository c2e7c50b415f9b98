use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::Value;
use stalloc::{FreeListPolicy, Heap, HeapConfig, SimBackend};
use stalloc_bench::replay::{class_table_json, run, BackendKind, RunConfig};
use stalloc_bench::shadow::{check_equivalence, ClassTableData, HeapView, ShadowHeap};
use stalloc_bench::trace::{Slot, TraceEvent};
use stalloc_bench::workload::{generate_workload, WorkloadKind, WorkloadSpec};

fn op() -> impl Strategy<Value = (u8, Slot, usize)> {
    let size = prop_oneof![8 => 0usize..=1024, 3 => 1025usize..=70_000, 1 => 70_000usize..=5_000_000];
    (0u8..3, 0..64 as Slot, size)
}

/// Turns raw ops into a legal trace: an op on a dead slot becomes an alloc.
fn legalize(ops: &[(u8, Slot, usize)]) -> Vec<TraceEvent> {
    let mut live = BTreeMap::new();
    let mut events = Vec::new();
    for &(kind, slot, size) in ops {
        let event = match (live.contains_key(&slot), kind) {
            (false, _) => TraceEvent::Alloc { slot, size },
            (true, 0) => TraceEvent::Free { slot },
            (true, _) => TraceEvent::Realloc { slot, size },
        };
        match event {
            TraceEvent::Free { .. } => live.remove(&slot),
            _ => live.insert(slot, ()),
        };
        events.push(event);
    }
    events
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heap_agrees_with_shadow_after_every_event(ops in prop::collection::vec(op(), 1..300), triple in any::<bool>()) {
        let table = ClassTableData::from_json(&class_table_json()).unwrap();
        let policy = if triple { FreeListPolicy::TripleEmulated } else { FreeListPolicy::Single };
        let mut h = Heap::with_config(SimBackend::new(), HeapConfig::default().with_policy(policy).with_checked(true)).unwrap();
        let mut shadow = ShadowHeap::new();
        let mut addrs: BTreeMap<Slot, usize> = BTreeMap::new();
        for e in legalize(&ops) {
            shadow.apply(&e).unwrap();
            match e {
                TraceEvent::Alloc { slot, size } => {
                    addrs.insert(slot, h.allocate(size).unwrap().as_ptr() as usize);
                }
                TraceEvent::Free { slot } => unsafe { h.deallocate(addrs.remove(&slot).unwrap() as *mut u8).unwrap() },
                TraceEvent::Realloc { slot, size } => {
                    let p = addrs[&slot] as *mut u8;
                    addrs.insert(slot, unsafe { h.reallocate(p, size) }.unwrap().as_ptr() as usize);
                }
            }
            let blocks: BTreeMap<Slot, (usize, usize)> = addrs
                .iter()
                .map(|(&s, &a)| (s, (a, unsafe { h.usable_size(a as *const u8) }.unwrap())))
                .collect();
            let view = HeapView { blocks: &blocks, bytes_live: h.bytes_live() };
            prop_assert_eq!(check_equivalence(&shadow, &table, &view), Ok(()));
        }
        prop_assert!(h.validate().is_ok());
    }
}

#[test]
fn shadow_catches_an_overlapping_heap_view() {
    let table = ClassTableData::from_json(&class_table_json()).unwrap();
    let mut shadow = ShadowHeap::new();
    shadow.apply(&TraceEvent::Alloc { slot: 0, size: 100 }).unwrap();
    shadow.apply(&TraceEvent::Alloc { slot: 1, size: 100 }).unwrap();
    let blocks = BTreeMap::from([(0, (0x1000, 104)), (1, (0x1060, 104))]);
    assert!(check_equivalence(&shadow, &table, &HeapView { blocks: &blocks, bytes_live: 208 }).is_err());
}

fn without(mut v: Value, keys: &[&str]) -> Value {
    for k in keys {
        v.as_object_mut().unwrap().remove(*k);
    }
    v
}

#[test]
fn real_and_sim_backends_report_identically() {
    for spec in [
        WorkloadSpec::new(WorkloadKind::MixedSmall, 77).with_counts(3000, 8),
        WorkloadSpec::new(WorkloadKind::BatchChurn, 77).with_counts(3000, 8),
        WorkloadSpec::new(WorkloadKind::LargeBursty, 77),
    ] {
        let kind = spec.kind;
        let events = generate_workload(&spec);
        for policy in [FreeListPolicy::Single, FreeListPolicy::TripleEmulated] {
            let sim = run(&events, &RunConfig::stalloc(policy, BackendKind::Sim), "t").unwrap();
            let real = run(&events, &RunConfig::stalloc(policy, BackendKind::Real), "t").unwrap();
            let mut sim_v = without(serde_json::to_value(&sim).unwrap(), &["backend", "timing"]);
            let mut real_v = without(serde_json::to_value(&real).unwrap(), &["backend", "timing"]);
            // The platform may be unable to return pages; nothing else may differ.
            sim_v["backend_counters"].as_object_mut().unwrap().remove("decommit_effective");
            real_v["backend_counters"].as_object_mut().unwrap().remove("decommit_effective");
            assert_eq!(sim_v, real_v, "{kind:?} {policy:?}");
        }
    }
}

#[test]
fn policies_report_identical_peak_live_but_different_reuse() {
    let events = generate_workload(&WorkloadSpec::new(WorkloadKind::MixedSmall, 3).with_counts(2000, 20));
    let single = run(&events, &RunConfig::stalloc(FreeListPolicy::Single, BackendKind::Sim), "t").unwrap();
    let triple = run(&events, &RunConfig::stalloc(FreeListPolicy::TripleEmulated, BackendKind::Sim), "t").unwrap();
    assert_eq!(single.peak_live, triple.peak_live);
    assert_eq!(single.peak_requested, triple.peak_requested);
    assert!(single.reuse.hit_rate > triple.reuse.hit_rate);
}

#[test]
fn system_allocator_config_reports_throughput_only() {
    let events = generate_workload(&WorkloadSpec::new(WorkloadKind::Uniform, 1));
    let r = run(&events, &RunConfig::system().with_timing(true), "t").unwrap();
    assert!(r.peak_committed.is_none() && r.backend_counters.is_none());
    assert!(r.timing.unwrap().ops_per_second > 0.0);
    assert_eq!(r.peak_live, r.peak_requested);
}
