use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, EnvSpec};
use crate::env::{BandwidthOption, EconParams, RadioParams, RegionCatalog, ResourceCatalog, VmOption};
use crate::error::{Error, Result};
use crate::forecast::ForecastConfig;
use crate::scenario::{ScenarioSpec, TaskDistribution, TrafficPattern};
use crate::slicer::DeadlineSplit;

/// Episode distribution for offloading-agent training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Users per training episode are drawn from `min_users..=max_users`.
    pub min_users: usize,
    pub max_users: usize,
    /// Relative error of the user count each training slice is rented for.
    pub provision_error: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            min_users: 2,
            max_users: 16,
            provision_error: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub regions: usize,
    /// Long slots per run.
    pub horizon: usize,
    /// Short slots per long slot.
    pub short_slots: usize,
    /// Largest user count per region; traffic is clipped to it.
    pub max_users: usize,
    /// Seconds per short slot.
    pub slot_duration: f64,
    /// Long slots of traffic generated before the first decision.
    pub warmup: usize,
    pub traffic: TrafficPattern,
    pub tasks: TaskDistribution,
    /// One entry applies to every region; otherwise one entry per region.
    /// Absent means [`default_region_catalog`].
    pub catalog: Option<Vec<RegionCatalog>>,
    pub radio: RadioParams,
    pub econ: EconParams,
    pub split: DeadlineSplit,
    pub forecast: ForecastConfig,
    pub agent: AgentConfig,
    pub training: TrainingConfig,
    /// Seed of forecaster and agent training data.
    pub seed: u64,
    /// Directory holding checkpoints written by `train`. When absent, models
    /// are trained in-process.
    pub checkpoints: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            regions: 3,
            horizon: 20,
            short_slots: 10,
            max_users: 16,
            slot_duration: 1.0,
            warmup: 64,
            traffic: TrafficPattern::default(),
            tasks: TaskDistribution::default(),
            catalog: None,
            radio: RadioParams::default(),
            econ: EconParams::default(),
            split: DeadlineSplit::default(),
            forecast: ForecastConfig::default(),
            agent: AgentConfig::default(),
            training: TrainingConfig::default(),
            seed: 1,
            checkpoints: None,
        }
    }
}

/// Four bandwidth and four VM tiers with mildly rising unit prices. With the
/// default traffic the cheapest slice serves about five users, well under the
/// peak of roughly sixteen.
pub fn default_region_catalog() -> RegionCatalog {
    RegionCatalog {
        bandwidth: [(2e6, 200.0), (4e6, 420.0), (6e6, 660.0), (8e6, 920.0)]
            .into_iter()
            .map(|(capacity, cost)| BandwidthOption { capacity, cost })
            .collect(),
        vms: [(1, 150.0), (2, 320.0), (3, 510.0), (4, 720.0)]
            .into_iter()
            .map(|(count, cost)| VmOption { count, cost })
            .collect(),
        vm_frequency: 1e9,
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("regions", self.regions),
            ("horizon", self.horizon),
            ("short_slots", self.short_slots),
            ("max_users", self.max_users),
        ] {
            if v == 0 {
                return Err(Error::field(name, "must be at least 1"));
            }
        }
        if !self.slot_duration.is_finite() || self.slot_duration <= 0.0 {
            return Err(Error::field("slot_duration", "must be positive"));
        }
        self.traffic.validate()?;
        self.tasks.validate()?;
        self.radio.validate()?;
        self.econ.validate()?;
        self.split.validate()?;
        self.forecast.validate()?;
        self.agent.validate()?;
        if let Some(c) = &self.catalog {
            if c.len() != 1 && c.len() != self.regions {
                return Err(Error::field(
                    "catalog",
                    format!("needs 1 or {} entries, got {}", self.regions, c.len()),
                ));
            }
        }
        self.catalog().validate()?;
        let t = &self.training;
        if t.min_users > t.max_users || t.max_users > self.max_users {
            return Err(Error::field(
                "training.max_users",
                format!("need min_users <= max_users <= {}", self.max_users),
            ));
        }
        if !(0.0..1.0).contains(&t.provision_error) {
            return Err(Error::field("training.provision_error", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn catalog(&self) -> ResourceCatalog {
        match &self.catalog {
            None => ResourceCatalog::uniform(default_region_catalog(), self.regions),
            Some(c) if c.len() == 1 => ResourceCatalog::uniform(c[0].clone(), self.regions),
            Some(c) => ResourceCatalog { regions: c.clone() },
        }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            regions: self.regions,
            horizon: self.horizon,
            short_slots: self.short_slots,
            max_users: self.max_users,
            warmup: self.warmup,
            traffic: self.traffic.clone(),
            tasks: self.tasks.clone(),
        }
    }

    /// Training environment of the offloading agents.
    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec {
            catalog: self.catalog(),
            tasks: self.tasks.clone(),
            min_users: self.training.min_users,
            max_users_per_episode: self.training.max_users,
            max_users: self.max_users,
            short_slots: self.short_slots,
            slot_duration: self.slot_duration,
            econ: self.econ,
            radio: self.radio,
            split: self.split,
            provision_error: self.training.provision_error,
        }
    }
}

/// Parses a JSON config, fills defaults and validates it.
pub fn parse_config(text: &str) -> Result<Config> {
    let config: Config = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    // Relative checkpoint paths are taken from the config's directory.
    if let (Some(ckpt), Some(dir)) = (&config.checkpoints, path.parent()) {
        if ckpt.is_relative() {
            config.checkpoints = Some(dir.join(ckpt));
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_config(r#"{"regions": 2}"#).unwrap();
        assert_eq!(c.regions, 2);
        assert_eq!(c.horizon, 20);
        assert_eq!(c.catalog().regions.len(), 2);
    }

    #[test]
    fn malformed_document_reports_position() {
        match parse_config("{\n  \"regions\": 2,\n  oops\n}") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_horizon_names_the_field() {
        match parse_config(r#"{"horizon": 0}"#) {
            Err(Error::ConfigField { field, .. }) => assert_eq!(field, "horizon"),
            other => panic!("expected a field error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(parse_config(r#"{"horizn": 3}"#), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn catalog_length_must_match_regions() {
        let one = serde_json::to_string(&default_region_catalog()).unwrap();
        let text = format!(r#"{{"regions": 3, "catalog": [{one}, {one}]}}"#);
        assert!(matches!(parse_config(&text), Err(Error::ConfigField { .. })));
        let text = format!(r#"{{"regions": 3, "catalog": [{one}]}}"#);
        assert_eq!(parse_config(&text).unwrap().catalog().regions.len(), 3);
    }

    #[test]
    fn cheapest_default_slice_is_short_of_peak() {
        let c = Config::default();
        let cat = default_region_catalog();
        let peak = c.traffic.base + c.traffic.amplitude;
        let per_user_compute = c.tasks.profile().mean_data_size * c.tasks.profile().mean_compute_density
            / (c.econ.deadline * c.split.kappa_exe);
        assert!(cat.vm_capacity(0) < peak * per_user_compute);
    }
}
