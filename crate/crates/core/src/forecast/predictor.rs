use super::{baseline_forecast, BaselineKind, ForecastModel, TrafficSeries};
use crate::error::{Error, Result};

/// Anything that turns a traffic history into per-region forecasts.
pub trait TrafficPredictor: Send + Sync {
    fn name(&self) -> &str;

    /// `regions x horizon` predicted user counts.
    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>>;
}

pub struct Persistence;

impl TrafficPredictor for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        baseline_forecast(history, horizon, BaselineKind::Persistence)
    }
}

pub struct MovingAverage(pub usize);

impl TrafficPredictor for MovingAverage {
    fn name(&self) -> &str {
        "moving_average"
    }

    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let w = self.0.min(history.len()).max(1);
        baseline_forecast(history, horizon, BaselineKind::MovingAverage(w))
    }
}

impl TrafficPredictor for ForecastModel {
    fn name(&self) -> &str {
        "attention"
    }

    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        if history.len() < self.config().min_history() {
            return baseline_forecast(history, horizon, BaselineKind::Persistence);
        }
        self.forecast(history, horizon)
    }
}

/// Returns the true future counts: `truth` holds the full series and the
/// forecast for a history of length `n` is `truth[n..n + horizon]`.
pub struct PerfectForecast {
    pub truth: TrafficSeries,
}

impl TrafficPredictor for PerfectForecast {
    fn name(&self) -> &str {
        "perfect"
    }

    fn predict(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let n = history.len();
        if n + horizon > self.truth.len() || history.regions() != self.truth.regions() {
            return Err(Error::InvalidInput(format!(
                "perfect forecast has no truth for slots {n}..{}",
                n + horizon
            )));
        }
        Ok((0..self.truth.regions())
            .map(|i| self.truth.region(i)[n..n + horizon].to_vec())
            .collect())
    }
}
