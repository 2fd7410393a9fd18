use std::collections::BTreeMap;
use std::sync::Arc;

use super::models::TrainedModels;
use crate::agent::EnvSpec;
use crate::baselines::PolicyContext;
use crate::error::{Error, Result};
use crate::forecast::{MovingAverage, PerfectForecast, Persistence, TrafficPredictor, TrafficSeries};
use crate::policy::{AgentPolicy, Heuristic, HybridPolicy, OffloadPolicy, OraclePolicy, RandomPolicy};

/// Everything a policy factory may draw on.
pub struct PolicyInputs {
    pub ctx: PolicyContext,
    pub spec: EnvSpec,
    pub slot_duration: f64,
    /// Seed of the run, for stochastic policies.
    pub seed: u64,
    pub models: Option<Arc<TrainedModels>>,
}

impl PolicyInputs {
    fn models(&self, tag: &str) -> Result<&Arc<TrainedModels>> {
        self.models
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("policy `{tag}` needs trained models")))
    }
}

pub type PolicyFactory = Box<dyn Fn(&PolicyInputs) -> Result<Box<dyn OffloadPolicy>> + Send + Sync>;

struct PolicyEntry {
    factory: PolicyFactory,
    predictor: String,
    needs_models: bool,
}

/// Offloading policies by tag, each paired with the traffic predictor that
/// drives its slicing.
pub struct PolicyRegistry {
    entries: BTreeMap<String, PolicyEntry>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        PolicyRegistry { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, tag: &str, predictor: &str, needs_models: bool, factory: PolicyFactory) {
        self.entries.insert(
            tag.to_string(),
            PolicyEntry {
                factory,
                predictor: predictor.to_string(),
                needs_models,
            },
        );
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    fn entry(&self, tag: &str) -> Result<&PolicyEntry> {
        self.entries.get(tag).ok_or_else(|| Error::Unknown {
            kind: "policy",
            name: tag.to_string(),
        })
    }

    pub fn build(&self, tag: &str, inputs: &PolicyInputs) -> Result<Box<dyn OffloadPolicy>> {
        (self.entry(tag)?.factory)(inputs)
    }

    /// Predictor tag the policy slices with.
    pub fn predictor_for(&self, tag: &str) -> Result<&str> {
        Ok(&self.entry(tag)?.predictor)
    }

    pub fn needs_models(&self, tag: &str) -> Result<bool> {
        Ok(self.entry(tag)?.needs_models)
    }
}

impl Default for PolicyRegistry {
    /// The learned policies slice with the attention forecaster, the
    /// comparators with persistence, and the oracle with the true counts.
    fn default() -> Self {
        let mut r = PolicyRegistry::empty();
        r.register(
            "sliceoff",
            "attention",
            true,
            Box::new(|p| {
                let m = p.models("sliceoff")?;
                Ok(Box::new(AgentPolicy::new(Arc::new(m.current.clone()), p.spec.clone())))
            }),
        );
        r.register(
            "hybrid",
            "attention",
            true,
            Box::new(|p| {
                let m = p.models("hybrid")?;
                Ok(Box::new(HybridPolicy::new(
                    Arc::new(m.current.clone()),
                    Arc::new(m.peer.clone()),
                    p.spec.clone(),
                )))
            }),
        );
        r.register("greedy", "persistence", false, Box::new(|p| Ok(Box::new(Heuristic::greedy(p.ctx)))));
        r.register(
            "max_transaction",
            "persistence",
            false,
            Box::new(|p| Ok(Box::new(Heuristic::max_transaction(p.ctx)))),
        );
        r.register("auction", "persistence", false, Box::new(|p| Ok(Box::new(Heuristic::auction(p.ctx)))));
        r.register(
            "random",
            "persistence",
            false,
            Box::new(|p| Ok(Box::new(RandomPolicy::new(p.spec.max_users, p.seed ^ 0x7a4d)))),
        );
        r.register(
            "oracle",
            "perfect",
            false,
            Box::new(|p| Ok(Box::new(OraclePolicy::new(p.ctx, p.slot_duration)))),
        );
        r
    }
}

/// Everything a predictor factory may draw on.
pub struct PredictorInputs<'a> {
    /// Full traffic series of the scenario, for the perfect forecast.
    pub truth: &'a TrafficSeries,
    pub moving_average_window: usize,
    pub models: Option<&'a TrainedModels>,
}

pub type PredictorFactory =
    Box<dyn Fn(&PredictorInputs<'_>) -> Result<Box<dyn TrafficPredictor>> + Send + Sync>;

/// Traffic predictors by tag.
pub struct PredictorRegistry {
    entries: BTreeMap<String, PredictorFactory>,
}

impl PredictorRegistry {
    pub fn empty() -> Self {
        PredictorRegistry { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, tag: &str, factory: PredictorFactory) {
        self.entries.insert(tag.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, tag: &str, inputs: &PredictorInputs<'_>) -> Result<Box<dyn TrafficPredictor>> {
        let factory = self.entries.get(tag).ok_or_else(|| Error::Unknown {
            kind: "predictor",
            name: tag.to_string(),
        })?;
        factory(inputs)
    }
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        let mut r = PredictorRegistry::empty();
        r.register("persistence", Box::new(|_| Ok(Box::new(Persistence))));
        r.register(
            "moving_average",
            Box::new(|p| Ok(Box::new(MovingAverage(p.moving_average_window)))),
        );
        r.register(
            "attention",
            Box::new(|p| {
                let m = p
                    .models
                    .ok_or_else(|| Error::InvalidInput("predictor `attention` needs a trained forecaster".into()))?;
                Ok(Box::new(m.forecaster.clone()))
            }),
        );
        r.register(
            "perfect",
            Box::new(|p| Ok(Box::new(PerfectForecast { truth: p.truth.clone() }))),
        );
        r
    }
}
