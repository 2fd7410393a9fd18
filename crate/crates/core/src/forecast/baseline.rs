use serde::{Deserialize, Serialize};

use super::TrafficSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Repeat the last observed value.
    Persistence,
    /// Repeat the mean of the last `w` values.
    MovingAverage(usize),
}

/// `regions x horizon` forecast that repeats a summary of the recent past.
pub fn baseline_forecast(series: &TrafficSeries, horizon: usize, kind: BaselineKind) -> Result<Vec<Vec<f64>>> {
    let n = series.len();
    if n == 0 {
        return Err(Error::InvalidInput("traffic history is empty".into()));
    }
    (0..series.regions())
        .map(|i| {
            let r = series.region(i);
            let level = match kind {
                BaselineKind::Persistence => r[n - 1],
                BaselineKind::MovingAverage(w) => {
                    if w == 0 || w > n {
                        return Err(Error::InvalidInput(format!(
                            "moving average window {w} with {n} slots of history"
                        )));
                    }
                    r[n - w..].iter().sum::<f64>() / w as f64
                }
            };
            Ok(vec![level; horizon])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistence_repeats_last() {
        let s = TrafficSeries::new(vec![vec![3.0, 5.0, 7.0]]).unwrap();
        assert_eq!(
            baseline_forecast(&s, 3, BaselineKind::Persistence).unwrap(),
            vec![vec![7.0; 3]]
        );
    }

    #[test]
    fn moving_average_of_window() {
        let s = TrafficSeries::new(vec![vec![2.0, 4.0]]).unwrap();
        assert_eq!(
            baseline_forecast(&s, 1, BaselineKind::MovingAverage(2)).unwrap(),
            vec![vec![3.0]]
        );
        assert!(baseline_forecast(&s, 1, BaselineKind::MovingAverage(3)).is_err());
    }

    #[test]
    fn empty_history_rejected() {
        assert!(baseline_forecast(&TrafficSeries::empty(1), 1, BaselineKind::Persistence).is_err());
    }
}
