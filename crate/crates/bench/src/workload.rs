//! Deterministic synthetic workloads.
//!
//! Every generator ends by freeing whatever is still live, so a replay of a
//! generated trace always finishes with an empty heap.

use std::collections::BTreeSet;

use clap::ValueEnum;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{Slot, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    /// Fill `objects` same-size blocks, free them in random order, per round.
    Uniform,
    /// Random alloc/free/realloc over `objects` slots with small-skewed sizes.
    #[value(name = "mixedsmall")]
    MixedSmall,
    /// Allocate a batch of `objects`, free the whole batch, per round.
    #[value(name = "batchchurn")]
    BatchChurn,
    /// A few multi-megabyte buffers created and released per round.
    #[value(name = "largebursty")]
    LargeBursty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub objects: usize,
    pub rounds: usize,
    pub seed: u64,
    pub min_size: usize,
    pub max_size: usize,
}

/// Size buckets of the mixed-small distribution as (low, high, percent).
pub const MIXED_SMALL_BUCKETS: [(usize, usize, u32); 5] =
    [(8, 64, 50), (65, 128, 20), (129, 256, 15), (257, 512, 10), (513, 1024, 5)];

/// Probabilities of freeing and reallocating a live slot in mixed-small, in percent.
const MIXED_FREE_PERCENT: u32 = 70;

impl WorkloadSpec {
    /// Spec with the kind's default sizes and counts.
    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        let (objects, rounds, min_size, max_size) = match kind {
            WorkloadKind::Uniform => (1000, 1, 64, 64),
            WorkloadKind::MixedSmall => (10_000, 100, 8, 1024),
            WorkloadKind::BatchChurn => (10_000, 50, 16, 512),
            WorkloadKind::LargeBursty => (4, 16, 256 << 10, 4 << 20),
        };
        WorkloadSpec { kind, objects, rounds, seed, min_size, max_size }
    }

    pub fn with_counts(mut self, objects: usize, rounds: usize) -> Self {
        self.objects = objects;
        self.rounds = rounds;
        self
    }

    pub fn with_sizes(mut self, min_size: usize, max_size: usize) -> Self {
        self.min_size = min_size;
        self.max_size = max_size.max(min_size);
        self
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        format!("{:?}/seed={}/objects={}/rounds={}", self.kind, self.seed, self.objects, self.rounds).to_lowercase()
    }
}

fn mixed_small_size(rng: &mut ChaCha8Rng) -> usize {
    let mut roll = rng.random_range(0..100u32);
    for (low, high, pct) in MIXED_SMALL_BUCKETS {
        if roll < pct {
            return rng.random_range(low..=high);
        }
        roll -= pct;
    }
    unreachable!("bucket percentages sum to 100")
}

fn drain(live: BTreeSet<Slot>, events: &mut Vec<TraceEvent>) {
    events.extend(live.into_iter().map(|slot| TraceEvent::Free { slot }));
}

pub fn generate_workload(spec: &WorkloadSpec) -> Vec<TraceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.objects;
    let mut events = Vec::new();
    let sized = |rng: &mut ChaCha8Rng| rng.random_range(spec.min_size..=spec.max_size);
    match spec.kind {
        WorkloadKind::Uniform | WorkloadKind::BatchChurn | WorkloadKind::LargeBursty => {
            let mut order: Vec<Slot> = (0..n as Slot).collect();
            events.reserve(2 * n * spec.rounds);
            for _ in 0..spec.rounds {
                order.shuffle(&mut rng);
                for &slot in &order {
                    let size = match spec.kind {
                        WorkloadKind::Uniform => spec.min_size,
                        _ => sized(&mut rng),
                    };
                    events.push(TraceEvent::Alloc { slot, size });
                }
                order.shuffle(&mut rng);
                events.extend(order.iter().map(|&slot| TraceEvent::Free { slot }));
            }
        }
        WorkloadKind::MixedSmall => {
            let mut live = vec![false; n];
            let mut live_set = BTreeSet::new();
            let steps = n * spec.rounds;
            events.reserve(steps + n);
            for _ in 0..steps {
                let slot = rng.random_range(0..n);
                if !live[slot] {
                    live[slot] = true;
                    live_set.insert(slot as Slot);
                    events.push(TraceEvent::Alloc { slot: slot as Slot, size: mixed_small_size(&mut rng) });
                } else if rng.random_range(0..100u32) < MIXED_FREE_PERCENT {
                    live[slot] = false;
                    live_set.remove(&(slot as Slot));
                    events.push(TraceEvent::Free { slot: slot as Slot });
                } else {
                    events.push(TraceEvent::Realloc { slot: slot as Slot, size: mixed_small_size(&mut rng) });
                }
            }
            drain(live_set, &mut events);
        }
    }
    events
}

/// Alternating free/alloc of one size over a few live slots: the pattern
/// where immediate reuse of the freed block pays off.
pub fn reuse_heavy_trace(slots: usize, steps: usize, size: usize) -> Vec<TraceEvent> {
    let mut events: Vec<TraceEvent> = (0..slots as Slot).map(|slot| TraceEvent::Alloc { slot, size }).collect();
    for i in 0..steps {
        let slot = (i % slots) as Slot;
        events.push(TraceEvent::Free { slot });
        events.push(TraceEvent::Alloc { slot, size });
    }
    events.extend((0..slots as Slot).map(|slot| TraceEvent::Free { slot }));
    events
}
