use serde::{Deserialize, Serialize};

use super::{TaskSpec, VmQueueState};
use crate::error::{Error, Result};

/// Uplink radio constants shared by all users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Transmit power in watts.
    pub upload_power: f64,
    /// Noise power in watts.
    pub noise_power: f64,
    /// Channel gain at 1 m.
    pub pathloss_ref: f64,
    pub pathloss_exp: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            upload_power: 0.1,
            noise_power: 1e-9,
            pathloss_ref: 1e-3,
            pathloss_exp: 2.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("upload_power", self.upload_power),
            ("noise_power", self.noise_power),
            ("pathloss_ref", self.pathloss_ref),
            ("pathloss_exp", self.pathloss_exp),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::field(
                    format!("radio.{name}"),
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Channel power gain `beta0 * l^-theta`.
    pub fn channel_gain(&self, distance: f64) -> f64 {
        self.pathloss_ref * distance.powf(-self.pathloss_exp)
    }

    /// Bits per second per hertz at `distance`: `log2(1 + p g / sigma^2)`.
    pub fn spectral_efficiency(&self, distance: f64) -> f64 {
        (1.0 + self.upload_power * self.channel_gain(distance) / self.noise_power).log2()
    }
}

/// Revenue and deadline parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconParams {
    /// Revenue for one on-time task of priority 1.
    pub reward_per_task: f64,
    /// Maximum tolerable completion time in seconds.
    pub deadline: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        EconParams {
            reward_per_task: 10.0,
            deadline: 1.0,
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reward_per_task", self.reward_per_task),
            ("deadline", self.deadline),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::field(
                    format!("econ.{name}"),
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Shannon uplink rate in bits/s for `bw` hertz at `distance` meters.
pub fn uplink_rate(bw: f64, radio: &RadioParams, distance: f64) -> Result<f64> {
    if !bw.is_finite() || !distance.is_finite() {
        return Err(Error::NonFinite("uplink_rate inputs".into()));
    }
    if bw < 0.0 {
        return Err(Error::InvalidInput(format!("bandwidth must be >= 0, got {bw}")));
    }
    if distance <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "distance must be > 0, got {distance}"
        )));
    }
    Ok(bw * radio.spectral_efficiency(distance))
}

/// Completion-time components of one offloaded task, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub upload: f64,
    pub queueing: f64,
    pub execution: f64,
    pub total: f64,
}

/// Upload, queueing and execution time of `task` when it gets `bw` hertz and
/// joins a VM whose backlog is `queue`. Result return time is not modeled.
pub fn task_timing(
    task: &TaskSpec,
    bw: f64,
    queue: &VmQueueState,
    vm_frequency: f64,
    radio: &RadioParams,
) -> Result<TimingBreakdown> {
    if !vm_frequency.is_finite() || vm_frequency <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "VM frequency must be positive, got {vm_frequency}"
        )));
    }
    let rate = uplink_rate(bw, radio, task.distance)?;
    if rate <= 0.0 {
        return Err(Error::InfeasibleUpload {
            task_id: task.id,
            data_size: task.data_size,
        });
    }
    let upload = task.data_size / rate;
    let queueing = queue.pending_work / vm_frequency;
    let execution = task.work() / vm_frequency;
    Ok(TimingBreakdown {
        upload,
        queueing,
        execution,
        total: upload + queueing + execution,
    })
}

/// Revenue earned by a task: `reward * priority` if it finishes by the
/// deadline (inclusive), otherwise nothing.
pub fn settle(timing: &TimingBreakdown, econ: &EconParams, priority: f64) -> f64 {
    if timing.total <= econ.deadline {
        econ.reward_per_task * priority
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(d: f64, eta: f64) -> TaskSpec {
        TaskSpec::new(0, d, eta, 1.0, 10.0, 0).unwrap()
    }

    #[test]
    fn rate_with_snr_three_doubles_bandwidth() {
        // p g / sigma^2 = 3 at l = 1 with beta0 = 3, p = 1, sigma^2 = 1.
        let radio = RadioParams {
            upload_power: 1.0,
            noise_power: 1.0,
            pathloss_ref: 3.0,
            pathloss_exp: 2.0,
        };
        assert_eq!(uplink_rate(1e6, &radio, 1.0).unwrap(), 2e6);
    }

    #[test]
    fn zero_bandwidth_gives_zero_rate() {
        assert_eq!(uplink_rate(0.0, &RadioParams::default(), 50.0).unwrap(), 0.0);
    }

    #[test]
    fn default_radio_at_ten_meters() {
        // SNR = 0.1 * 1e-3 * 10^-2 / 1e-9 = 1e3.
        let expected = 1e6 * (1.0f64 + 1e3).log2();
        let got = uplink_rate(1e6, &RadioParams::default(), 10.0).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        assert!(uplink_rate(f64::NAN, &RadioParams::default(), 1.0).is_err());
        assert!(uplink_rate(1.0, &RadioParams::default(), f64::INFINITY).is_err());
        assert!(uplink_rate(1.0, &RadioParams::default(), 0.0).is_err());
    }

    #[test]
    fn timing_components() {
        let radio = RadioParams {
            upload_power: 1.0,
            noise_power: 1.0,
            pathloss_ref: 1.0,
            pathloss_exp: 1.0,
        };
        // distance 1 -> SNR 1 -> log2(2) = 1 -> rate == bw.
        let mut t = task(2e6, 1.0);
        t.distance = 1.0;
        let timing = task_timing(&t, 1e6, &VmQueueState::default(), 1e9, &radio).unwrap();
        assert_eq!(timing.upload, 2.0);
        assert_eq!(timing.queueing, 0.0);

        let mut t = task(1e6, 500.0);
        t.distance = 1.0;
        let queue = VmQueueState { pending_work: 5e8 };
        let timing = task_timing(&t, 1e6, &queue, 1e9, &radio).unwrap();
        assert_eq!(timing.queueing, 0.5);
        assert_eq!(timing.execution, 0.5);
        assert_eq!(timing.total, timing.upload + 1.0);
    }

    #[test]
    fn zero_bandwidth_upload_is_infeasible() {
        let err = task_timing(
            &task(1e6, 1.0),
            0.0,
            &VmQueueState::default(),
            1e9,
            &RadioParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InfeasibleUpload { .. }));
    }

    #[test]
    fn settlement_boundary_is_inclusive() {
        let econ = EconParams {
            reward_per_task: 10.0,
            deadline: 5.0,
        };
        let at = |total: f64| TimingBreakdown {
            upload: total,
            queueing: 0.0,
            execution: 0.0,
            total,
        };
        assert_eq!(settle(&at(4.0), &econ, 2.0), 20.0);
        assert_eq!(settle(&at(6.0), &econ, 2.0), 0.0);
        assert_eq!(settle(&at(5.0), &econ, 1.0), 10.0);
    }
}
