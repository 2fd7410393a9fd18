//! Configuration, the slot-level run loop, experiment orchestration and
//! report files.

mod config;
mod io;
mod models;
mod oracle;
mod registry;
mod run;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{default_region_catalog, load_config, parse_config, Config, TrainingConfig};
pub use io::{csv_bytes, json_bytes, write_atomic};
pub use models::{
    forecast_holdout, forecaster_training_series, load_models, obtain_models, save_models, train_forecaster, train_models,
    TrainedModels, AGENTS_FILE, CURVES_FILE, FORECASTER_FILE, FORECAST_LOSS_FILE,
};
pub use oracle::{
    agent_near_oracle, compare_offload, offload_instances, oracle_check, slicing_gap, slicing_instance, OffloadComparison,
    OracleSummary,
};
pub use registry::{PolicyFactory, PolicyInputs, PolicyRegistry, PredictorFactory, PredictorInputs, PredictorRegistry};
pub use run::{run_scenario, MetricsReport, MetricsRow, Totals, METRICS_HEADER};

use crate::baselines::PolicyContext;
use crate::error::Result;
use crate::scenario::generate_scenario;

/// Window of the `moving_average` predictor, in long slots.
const MOVING_AVERAGE_WINDOW: usize = 3;

/// A config plus the policy and predictor registries and, once needed, the
/// trained models.
pub struct Experiment {
    pub config: Config,
    pub policies: PolicyRegistry,
    pub predictors: PredictorRegistry,
    models: Option<Arc<TrainedModels>>,
}

impl Experiment {
    pub fn new(config: Config) -> Self {
        Experiment {
            config,
            policies: PolicyRegistry::default(),
            predictors: PredictorRegistry::default(),
            models: None,
        }
    }

    pub fn with_models(mut self, models: Arc<TrainedModels>) -> Self {
        self.models = Some(models);
        self
    }

    pub fn models(&self) -> Option<&Arc<TrainedModels>> {
        self.models.as_ref()
    }

    /// Loads or trains models if any of `tags` needs them.
    pub fn prepare(&mut self, tags: &[String]) -> Result<()> {
        for tag in tags {
            let needs = self.policies.needs_models(tag)?
                || self.policies.predictor_for(tag)? == "attention";
            if needs && self.models.is_none() {
                self.models = Some(Arc::new(obtain_models(&self.config)?));
            }
        }
        Ok(())
    }

    /// One run of policy `tag` on the scenario generated from `seed`.
    pub fn run(&mut self, tag: &str, seed: u64) -> Result<MetricsReport> {
        self.prepare(&[tag.to_string()])?;
        let config = &self.config;
        let scenario = generate_scenario(&config.scenario_spec(), seed)?;
        let inputs = PolicyInputs {
            ctx: PolicyContext {
                econ: config.econ,
                radio: config.radio,
                split: config.split,
            },
            spec: config.env_spec(),
            slot_duration: config.slot_duration,
            seed,
            models: self.models.clone(),
        };
        let mut policy = self.policies.build(tag, &inputs)?;
        let predictor = self.predictors.build(
            self.policies.predictor_for(tag)?,
            &PredictorInputs {
                truth: &scenario.traffic,
                moving_average_window: MOVING_AVERAGE_WINDOW,
                models: self.models.as_deref(),
            },
        )?;
        log::info!("running {tag} with {} slicing, seed {seed}", predictor.name());
        let mut report = run_scenario(config, &scenario, policy.as_mut(), predictor.as_ref(), seed)?;
        report.policy = tag.to_string();
        Ok(report)
    }

    /// Every policy on every seed, in the given order.
    pub fn compare(&mut self, tags: &[String], seeds: &[u64]) -> Result<Comparison> {
        self.prepare(tags)?;
        let mut runs = Vec::with_capacity(tags.len() * seeds.len());
        for tag in tags {
            for &seed in seeds {
                runs.push(self.run(tag, seed)?);
            }
        }
        let summary = tags
            .iter()
            .map(|tag| PolicySummary::of(tag, runs.iter().filter(|r| &r.policy == tag)))
            .collect();
        Ok(Comparison { runs, summary })
    }
}

/// Totals of one policy averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub predictor: String,
    pub seeds: Vec<u64>,
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
    pub offloaded: f64,
    pub hit_rate: f64,
    pub bw_util: f64,
    pub vm_util: f64,
    /// Profit of each seed's run, in seed order.
    pub profits: Vec<f64>,
    pub violations: u64,
    pub policy_errors: u64,
}

impl PolicySummary {
    fn of<'a>(tag: &str, runs: impl Iterator<Item = &'a MetricsReport>) -> Self {
        let runs: Vec<&MetricsReport> = runs.collect();
        let n = runs.len().max(1) as f64;
        let mean = |f: fn(&Totals) -> f64| runs.iter().map(|r| f(&r.totals)).sum::<f64>() / n;
        PolicySummary {
            policy: tag.to_string(),
            predictor: runs.first().map(|r| r.predictor.clone()).unwrap_or_default(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            revenue: mean(|t| t.revenue),
            cost: mean(|t| t.cost),
            profit: mean(|t| t.profit),
            offloaded: mean(|t| t.offloaded as f64),
            hit_rate: mean(|t| t.hit_rate),
            bw_util: mean(|t| t.bw_util),
            vm_util: mean(|t| t.vm_util),
            profits: runs.iter().map(|r| r.totals.profit).collect(),
            violations: runs.iter().map(|r| r.violations).sum(),
            policy_errors: runs.iter().map(|r| r.policy_errors).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<MetricsReport>,
    pub summary: Vec<PolicySummary>,
}

impl Comparison {
    pub fn policy(&self, tag: &str) -> Option<&PolicySummary> {
        self.summary.iter().find(|s| s.policy == tag)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    policy: &'a str,
    predictor: &'a str,
    seed: u64,
    totals: &'a Totals,
    violations: u64,
    policy_errors: u64,
}

/// Writes `metrics.csv` and `summary.json` for one run.
pub fn report(metrics: &MetricsReport, out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join("metrics.csv"), &csv_bytes(&METRICS_HEADER, &metrics.rows)?)?;
    let summary = RunSummary {
        policy: &metrics.policy,
        predictor: &metrics.predictor,
        seed: metrics.seed,
        totals: &metrics.totals,
        violations: metrics.violations,
        policy_errors: metrics.policy_errors,
    };
    write_atomic(&out_dir.join("summary.json"), &json_bytes(&summary)?)
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "policy",
    "predictor",
    "revenue",
    "cost",
    "profit",
    "offloaded",
    "hit_rate",
    "bw_util",
    "vm_util",
];

#[derive(Serialize)]
struct ComparisonRow<'a> {
    policy: &'a str,
    predictor: &'a str,
    revenue: f64,
    cost: f64,
    profit: f64,
    offloaded: f64,
    hit_rate: f64,
    bw_util: f64,
    vm_util: f64,
}

/// Writes per-run reports under `runs/<policy>-seed<n>/`, the per-policy
/// `comparison.csv` and the combined `summary.json`.
pub fn write_comparison(comparison: &Comparison, out_dir: &Path) -> Result<()> {
    for run in &comparison.runs {
        report(run, &out_dir.join("runs").join(format!("{}-seed{}", run.policy, run.seed)))?;
    }
    let rows: Vec<ComparisonRow> = comparison
        .summary
        .iter()
        .map(|s| ComparisonRow {
            policy: &s.policy,
            predictor: &s.predictor,
            revenue: s.revenue,
            cost: s.cost,
            profit: s.profit,
            offloaded: s.offloaded,
            hit_rate: s.hit_rate,
            bw_util: s.bw_util,
            vm_util: s.vm_util,
        })
        .collect();
    write_atomic(&out_dir.join("comparison.csv"), &csv_bytes(&COMPARISON_HEADER, &rows)?)?;
    write_atomic(&out_dir.join("summary.json"), &json_bytes(&comparison.summary)?)
}
