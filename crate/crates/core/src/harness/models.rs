use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::Config;
use super::io::{csv_bytes, write_atomic};
use crate::agent::{load_agents, save_agents, train, AgentBundle, CurveRow};
use crate::error::{Error, Result};
use crate::forecast::{ForecastModel, TrafficSeries};
use crate::neural::checkpoint;
use crate::scenario::user_counts;

pub const FORECASTER_FILE: &str = "forecaster.ckpt";
pub const AGENTS_FILE: &str = "agents.ckpt";
pub const CURVES_FILE: &str = "curves.csv";
pub const FORECAST_LOSS_FILE: &str = "forecast_loss.csv";

/// Forecaster and agent pair used by the learned policies.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub forecaster: ForecastModel,
    pub current: AgentBundle,
    pub peer: AgentBundle,
    /// Mean training loss per forecaster epoch.
    pub forecast_losses: Vec<f64>,
    pub curves: Vec<CurveRow>,
}

/// Synthetic traffic the forecaster trains on: `train_slots` long slots that
/// end where a run's warm-up history begins, drawn from its own stream.
pub fn forecaster_training_series(config: &Config) -> Result<TrafficSeries> {
    synthetic_series(config, config.forecast.train_slots)
}

fn synthetic_series(config: &Config, len: usize) -> Result<TrafficSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(4);
    let first = 1 - (config.warmup + config.forecast.train_slots) as i64;
    let counts = user_counts(&config.traffic, config.regions, first, len, config.max_users, &mut rng);
    TrafficSeries::new(counts)
}

/// Trains a forecaster on the usual synthetic history, continues that
/// series for `holdout` more slots and returns the one-step mean squared
/// error over them of the forecaster and of persistence.
pub fn forecast_holdout(config: &Config, holdout: usize) -> Result<(f64, f64)> {
    if holdout == 0 {
        return Err(Error::InvalidInput("hold-out needs at least one slot".into()));
    }
    let train = config.forecast.train_slots;
    let series = synthetic_series(config, train + holdout)?;
    let mut model = ForecastModel::new(config.forecast.clone(), config.regions)?;
    model.fit(&series.prefix(train), config.forecast.epochs, config.forecast.lr)?;
    let (mut model_sq, mut persistence_sq) = (0.0, 0.0);
    for t in train..train + holdout {
        let history = series.prefix(t);
        let forecast = model.forecast(&history, 1)?;
        for (r, f) in forecast.iter().enumerate() {
            let truth = series.get(r, t);
            model_sq += (f[0] - truth).powi(2);
            persistence_sq += (series.get(r, t - 1) - truth).powi(2);
        }
    }
    let n = (holdout * config.regions) as f64;
    Ok((model_sq / n, persistence_sq / n))
}

pub fn train_forecaster(config: &Config) -> Result<(ForecastModel, Vec<f64>)> {
    let series = forecaster_training_series(config)?;
    let mut model = ForecastModel::new(config.forecast.clone(), config.regions)?;
    let losses = model.fit(&series, config.forecast.epochs, config.forecast.lr)?;
    Ok((model, losses))
}

/// Trains the forecaster and both agents. A diverged agent run is an error.
pub fn train_models(config: &Config) -> Result<TrainedModels> {
    let (forecaster, forecast_losses) = train_forecaster(config)?;
    log::info!("forecaster trained, final loss {:?}", forecast_losses.last());
    let outcome = train(&config.env_spec(), &config.agent)?;
    if let Some(msg) = outcome.divergence {
        return Err(Error::Divergence(msg));
    }
    Ok(TrainedModels {
        forecaster,
        current: outcome.current,
        peer: outcome.peer,
        forecast_losses,
        curves: outcome.curves,
    })
}

const CURVE_HEADER: &[&str] = &[
    "agent",
    "episode",
    "step",
    "critic1_loss",
    "critic2_loss",
    "actor_objective",
    "eval_reward",
];

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn save_models(dir: &Path, models: &TrainedModels) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&dir.join(FORECASTER_FILE), &models.forecaster.named_params())?;
    save_agents(&dir.join(AGENTS_FILE), &models.current, &models.peer)?;
    write_atomic(&dir.join(CURVES_FILE), &csv_bytes(CURVE_HEADER, &models.curves)?)?;
    let losses: Vec<LossRow> = models
        .forecast_losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| LossRow { epoch: i + 1, loss })
        .collect();
    write_atomic(&dir.join(FORECAST_LOSS_FILE), &csv_bytes(&["epoch", "loss"], &losses)?)
}

/// Rebuilds models from checkpoints; learning curves are not restored.
pub fn load_models(dir: &Path, config: &Config) -> Result<TrainedModels> {
    let mut forecaster = ForecastModel::new(config.forecast.clone(), config.regions)?;
    forecaster.load_params(&checkpoint::load(&dir.join(FORECASTER_FILE))?)?;
    let (current, peer) = load_agents(&dir.join(AGENTS_FILE), &config.env_spec(), &config.agent)?;
    Ok(TrainedModels {
        forecaster,
        current,
        peer,
        forecast_losses: Vec::new(),
        curves: Vec::new(),
    })
}

/// Loads checkpoints when the config names a directory, otherwise trains.
pub fn obtain_models(config: &Config) -> Result<TrainedModels> {
    match &config.checkpoints {
        Some(dir) => load_models(dir, config),
        None => train_models(config),
    }
}
