use serde::{Deserialize, Serialize};

use crate::env::{AllocationAction, EconParams, RadioParams, RegionState};
use crate::error::{Error, Result};

/// Largest VM count an observation describes one by one.
pub const VM_SLOTS: usize = 8;
/// Column of the first per-VM backlog entry.
pub const BACKLOG_START: usize = 5;
/// Region-level entries: rented bandwidth, VM count, user count, upload
/// power, mean VM backlog, then the backlog of each VM zero-padded to
/// [`VM_SLOTS`]; backlogs in seconds.
pub const GLOBAL_FEATURES: usize = BACKLOG_START + VM_SLOTS;
/// Per-user entries: rate demand, compute demand, priority, mask.
pub const USER_FEATURES: usize = 4;

pub fn state_dim(max_users: usize) -> usize {
    GLOBAL_FEATURES + USER_FEATURES * max_users
}

pub fn action_dim(max_users: usize) -> usize {
    2 * max_users
}

/// Raw observation of one region, in physical units, padded to `max_users`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub max_users: usize,
    pub values: Vec<f64>,
}

impl StateVector {
    pub fn bandwidth(&self) -> f64 {
        self.values[0]
    }

    pub fn vm_count(&self) -> usize {
        self.values[1] as usize
    }

    pub fn users(&self) -> usize {
        self.values[2] as usize
    }

    fn user(&self, j: usize) -> &[f64] {
        let start = GLOBAL_FEATURES + USER_FEATURES * j;
        &self.values[start..start + USER_FEATURES]
    }

    /// Rate demand of user `j` in Hz.
    pub fn rate_demand(&self, j: usize) -> f64 {
        self.user(j)[0]
    }

    /// Compute demand of user `j` in cycles per second.
    pub fn compute_demand(&self, j: usize) -> f64 {
        self.user(j)[1]
    }

    pub fn mask(&self, j: usize) -> f64 {
        self.user(j)[3]
    }
}

/// Builds the observation: per user, the bandwidth that uploads the task
/// within the deadline (`d / (T^max log2(1 + SNR))`) and the compute rate that
/// executes it within the deadline (`d eta / T^max`).
pub fn encode_state(
    region: &RegionState,
    radio: &RadioParams,
    econ: &EconParams,
    max_users: usize,
) -> Result<StateVector> {
    let n = region.tasks.len();
    if n > max_users {
        return Err(Error::InvalidInput(format!(
            "region {} has {n} users, the agent handles at most {max_users}",
            region.region
        )));
    }
    let vms = region.vm_count();
    if vms > VM_SLOTS {
        return Err(Error::InvalidInput(format!(
            "region {} rents {vms} VMs, the agent observes at most {VM_SLOTS}",
            region.region
        )));
    }
    let backlog = if vms > 0 {
        region.queues.iter().map(|q| q.pending_work).sum::<f64>() / (vms as f64 * region.vm_frequency)
    } else {
        0.0
    };
    let mut values = vec![0.0; state_dim(max_users)];
    values[..BACKLOG_START].copy_from_slice(&[
        region.bandwidth,
        vms as f64,
        n as f64,
        radio.upload_power,
        backlog,
    ]);
    for (k, q) in region.queues.iter().enumerate() {
        values[BACKLOG_START + k] = q.pending_work / region.vm_frequency;
    }
    for (j, task) in region.tasks.iter().enumerate() {
        let start = GLOBAL_FEATURES + USER_FEATURES * j;
        values[start] = task.data_size / (econ.deadline * radio.spectral_efficiency(task.distance));
        values[start + 1] = task.work() / econ.deadline;
        values[start + 2] = task.priority;
        values[start + 3] = 1.0;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("state of region {}", region.region)));
    }
    Ok(StateVector { max_users, values })
}

/// Turns a raw action in `[0, 1]^(2 max_users)` into an allocation for the
/// first `users` users: entries `0..max_users` are bandwidth shares and
/// entries `max_users..` pick VM `floor(x V)`.
pub fn decode_action(raw: &[f64], vm_count: usize, users: usize) -> Result<AllocationAction> {
    if raw.len() % 2 != 0 || users > raw.len() / 2 {
        return Err(Error::Shape(format!(
            "raw action of length {} for {users} users",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw action".into()));
    }
    let max_users = raw.len() / 2;
    let vms = vm_count.max(1);
    let mut action = AllocationAction {
        bw_fraction: raw[..users].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        vm_index: raw[max_users..max_users + users]
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * vms as f64).floor() as usize).min(vms - 1))
            .collect(),
    };
    action.project();
    Ok(action)
}

/// Reference magnitudes that bring observations to order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    /// Hz; typically the largest rentable bandwidth.
    pub bandwidth: f64,
    /// Typically the largest rentable VM count.
    pub vms: f64,
    /// Cycles per second of one VM.
    pub vm_frequency: f64,
    pub max_priority: f64,
    pub upload_power: f64,
    /// Seconds; backlogs are measured in deadlines.
    pub deadline: f64,
}

impl FeatureScale {
    /// Network input: bandwidth, VMs and users relative to their references;
    /// rate demand as a share of the rented bandwidth; compute demand in VM
    /// equivalents; backlogs in deadlines.
    pub fn normalize(&self, s: &StateVector) -> Vec<f64> {
        let b = s.bandwidth();
        let mut out = Vec::with_capacity(s.values.len());
        out.push(b / self.bandwidth);
        out.push(s.values[1] / self.vms);
        out.push(s.values[2] / s.max_users as f64);
        out.push(s.values[3] / self.upload_power);
        for v in &s.values[BACKLOG_START - 1..GLOBAL_FEATURES] {
            out.push(v / self.deadline);
        }
        for j in 0..s.max_users {
            let u = s.user(j);
            let share = if b > 0.0 { (u[0] / b).min(4.0) } else { 4.0 * u[3] };
            out.push(share);
            out.push(u[1] / self.vm_frequency);
            out.push(u[2] / self.max_priority);
            out.push(u[3]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskSpec;

    fn region(n: usize) -> RegionState {
        let mut s = RegionState::new(0, 10e6, 4, 1e9, 1, 10);
        s.tasks = (0..n)
            .map(|i| TaskSpec::new(i as u64, 1e6, 100.0, 2.0, 10.0, 1).unwrap())
            .collect();
        s
    }

    #[test]
    fn empty_region_has_zero_user_block() {
        let s = encode_state(&region(0), &RadioParams::default(), &EconParams::default(), 4).unwrap();
        assert!(s.values[GLOBAL_FEATURES..].iter().all(|&v| v == 0.0));
        assert_eq!(s.users(), 0);
    }

    #[test]
    fn compute_demand_formula() {
        let s = encode_state(&region(1), &RadioParams::default(), &EconParams::default(), 4).unwrap();
        assert_eq!(s.compute_demand(0), 1e8);
        let expected = 1e6 / (1.0f64 + 1e3).log2();
        assert!((s.rate_demand(0) - expected).abs() < 1e-9 * expected);
        assert_eq!(s.mask(0), 1.0);
        assert_eq!(s.mask(1), 0.0);
    }

    #[test]
    fn dimension_is_fixed() {
        let radio = RadioParams::default();
        let econ = EconParams::default();
        let one = encode_state(&region(1), &radio, &econ, 6).unwrap();
        let full = encode_state(&region(6), &radio, &econ, 6).unwrap();
        assert_eq!(one.values.len(), full.values.len());
        assert!(encode_state(&region(7), &radio, &econ, 6).is_err());
    }

    #[test]
    fn backlog_is_listed_per_vm() {
        let mut r = region(0);
        r.queues[1].pending_work = 5e8;
        r.queues[3].pending_work = 1e9;
        let s = encode_state(&r, &RadioParams::default(), &EconParams::default(), 2).unwrap();
        assert_eq!(s.values[BACKLOG_START - 1], 0.375);
        assert_eq!(&s.values[BACKLOG_START..BACKLOG_START + 5], &[0.0, 0.5, 0.0, 1.0, 0.0]);
        let crowded = RegionState::new(0, 1e6, VM_SLOTS + 1, 1e9, 1, 1);
        assert!(encode_state(&crowded, &RadioParams::default(), &EconParams::default(), 2).is_err());
    }

    #[test]
    fn decoded_random_actions_fit_budget_and_vms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let users = rng.random_range(0..=6);
            let vms = rng.random_range(1..=4);
            let raw: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..1.5)).collect();
            let a = decode_action(&raw, vms, users).unwrap();
            assert_eq!(a.len(), users);
            a.check(vms).unwrap();
        }
    }

    #[test]
    fn decode_examples() {
        let a = decode_action(&[0.25, 0.25, 0.0, 0.99], 4, 2).unwrap();
        assert_eq!(a.bw_fraction, vec![0.25, 0.25]);
        assert_eq!(a.bw_fraction.iter().map(|f| f * 10e6).collect::<Vec<_>>(), vec![2.5e6, 2.5e6]);
        assert_eq!(a.vm_index, vec![0, 3]);
        let a = decode_action(&[1.0, 1.0, 1.0, 1.0], 4, 2).unwrap();
        assert_eq!(a.bw_fraction, vec![0.5, 0.5]);
        assert_eq!(a.vm_index, vec![3, 3]);
        let a = decode_action(&[-1.0, 0.5, 0.9, 0.9, 0.0, 0.0], 2, 1).unwrap();
        assert_eq!(a.bw_fraction, vec![0.0]);
        assert_eq!(a.len(), 1);
    }
}
