//! Per-region traffic forecasting: a probsparse-attention encoder-decoder
//! and simple baselines, all usable through [`TrafficPredictor`].

mod attention;
mod baseline;
mod distill;
mod model;
mod predictor;
mod series;

pub use attention::{
    probsparse_attention, probsparse_modes, query_budget, select_top_queries, sparsity_measure,
};
pub use baseline::{baseline_forecast, BaselineKind};
pub use distill::{distill_block, identity_kernel};
pub use model::{ForecastConfig, ForecastModel};
pub use predictor::{MovingAverage, PerfectForecast, Persistence, TrafficPredictor};
pub use series::{build_io, TrafficSeries, Windows};
