//! Synthetic traffic and task generation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::TaskSpec;
use crate::error::{Error, Result};
use crate::forecast::TrafficSeries;
use crate::slicer::TaskProfile;

/// Per-region user counts `base + amplitude sin(2 pi h / period + phase_i) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficPattern {
    pub base: f64,
    pub amplitude: f64,
    /// Long slots per cycle.
    pub period: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl Default for TrafficPattern {
    fn default() -> Self {
        TrafficPattern {
            base: 10.0,
            amplitude: 4.0,
            period: 24.0,
            noise: 1.0,
        }
    }
}

impl TrafficPattern {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("traffic.base", self.base), ("traffic.amplitude", self.amplitude), ("traffic.noise", self.noise)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::field(name, "must be finite and non-negative"));
            }
        }
        if !self.period.is_finite() || self.period <= 0.0 {
            return Err(Error::field("traffic.period", "must be positive"));
        }
        Ok(())
    }

    /// Noise-free level of `region` (out of `regions`) at long slot `h`.
    pub fn level(&self, h: i64, region: usize, regions: usize) -> f64 {
        let phase = 2.0 * PI * region as f64 / regions.max(1) as f64;
        self.base + self.amplitude * (2.0 * PI * h as f64 / self.period + phase).sin()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi) {
            return Err(Error::field(field, "needs 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// Attribute ranges for independently drawn tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskDistribution {
    /// Bits.
    pub data_size: Range,
    /// Cycles per bit.
    pub compute_density: Range,
    /// Meters.
    pub distance: Range,
    /// Relative weights of priorities 1, 2, 3, ...
    pub priority_weights: Vec<f64>,
}

impl Default for TaskDistribution {
    fn default() -> Self {
        TaskDistribution {
            data_size: Range::new(0.5e6, 1.5e6),
            compute_density: Range::new(50.0, 150.0),
            distance: Range::new(10.0, 100.0),
            priority_weights: vec![1.0, 1.0, 1.0],
        }
    }
}

impl TaskDistribution {
    pub fn validate(&self) -> Result<()> {
        self.data_size.validate("tasks.data_size")?;
        self.compute_density.validate("tasks.compute_density")?;
        self.distance.validate("tasks.distance")?;
        if self.priority_weights.is_empty()
            || self.priority_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.priority_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::field(
                "tasks.priority_weights",
                "needs non-negative weights with a positive sum",
            ));
        }
        Ok(())
    }

    pub fn profile(&self) -> TaskProfile {
        let total: f64 = self.priority_weights.iter().sum();
        TaskProfile {
            mean_data_size: self.data_size.mean(),
            mean_compute_density: self.compute_density.mean(),
            mean_distance: self.distance.mean(),
            mean_priority: self
                .priority_weights
                .iter()
                .enumerate()
                .map(|(k, w)| (k + 1) as f64 * w)
                .sum::<f64>()
                / total,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, id: u64, arrival_slot: usize, rng: &mut R) -> TaskSpec {
        let total: f64 = self.priority_weights.iter().sum();
        let mut u = rng.random_range(0.0..total);
        let mut priority = self.priority_weights.len();
        for (k, w) in self.priority_weights.iter().enumerate() {
            if u < *w {
                priority = k + 1;
                break;
            }
            u -= w;
        }
        TaskSpec {
            id,
            data_size: self.data_size.sample(rng),
            compute_density: self.compute_density.sample(rng),
            priority: priority as f64,
            distance: self.distance.sample(rng),
            arrival_slot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub regions: usize,
    pub horizon: usize,
    pub short_slots: usize,
    pub max_users: usize,
    /// Long slots of traffic history generated before the first decision.
    pub warmup: usize,
    pub traffic: TrafficPattern,
    pub tasks: TaskDistribution,
}

/// Traffic history plus the task batches of every short slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `warmup + horizon` long slots; slot `warmup + h - 1` is long slot `h`.
    pub traffic: TrafficSeries,
    pub warmup: usize,
    /// `tasks[h][t][region]` for long slot `h + 1`, short slot `t + 1`.
    pub tasks: Vec<Vec<Vec<Vec<TaskSpec>>>>,
}

impl Scenario {
    /// Users active in `region` during long slot `h` (1-based).
    pub fn users(&self, h: usize, region: usize) -> usize {
        self.traffic.get(region, self.warmup + h - 1) as usize
    }

    /// Traffic observed before long slot `h` (1-based).
    pub fn history_before(&self, h: usize) -> TrafficSeries {
        self.traffic.prefix(self.warmup + h - 1)
    }
}

/// Rounded, clipped user counts for `len` consecutive long slots starting at
/// `first` (which may be negative for warm-up history).
pub fn user_counts<R: Rng + ?Sized>(
    pattern: &TrafficPattern,
    regions: usize,
    first: i64,
    len: usize,
    max_users: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, pattern.noise.max(0.0)).expect("finite noise");
    let mut counts = vec![Vec::with_capacity(len); regions];
    for k in 0..len {
        let h = first + k as i64;
        for (i, series) in counts.iter_mut().enumerate() {
            let raw = pattern.level(h, i, regions) + noise.sample(rng);
            series.push(raw.round().clamp(0.0, max_users as f64));
        }
    }
    counts
}

pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let mut traffic_rng = ChaCha8Rng::seed_from_u64(seed);
    traffic_rng.set_stream(1);
    let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
    task_rng.set_stream(2);
    let first = 1 - spec.warmup as i64;
    let counts = user_counts(
        &spec.traffic,
        spec.regions,
        first,
        spec.warmup + spec.horizon,
        spec.max_users,
        &mut traffic_rng,
    );
    let traffic = TrafficSeries::new(counts)?;
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(spec.horizon);
    for h in 0..spec.horizon {
        let mut slot = Vec::with_capacity(spec.short_slots);
        for t in 0..spec.short_slots {
            let batch = (0..spec.regions)
                .map(|i| {
                    let n = traffic.get(i, spec.warmup + h) as usize;
                    (0..n)
                        .map(|_| {
                            next_id += 1;
                            spec.tasks.sample(next_id, t + 1, &mut task_rng)
                        })
                        .collect()
                })
                .collect();
            slot.push(batch);
        }
        tasks.push(slot);
    }
    Ok(Scenario {
        traffic,
        warmup: spec.warmup,
        tasks,
    })
}
