use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Matrix;

/// User counts per region and long slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSeries {
    /// `counts[region][slot]`.
    counts: Vec<Vec<f64>>,
}

/// How much history feeds the encoder and the decoder's known prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub history: usize,
    pub current: usize,
}

impl Default for Windows {
    fn default() -> Self {
        Windows {
            history: 64,
            current: 8,
        }
    }
}

impl TrafficSeries {
    pub fn new(counts: Vec<Vec<f64>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidInput("traffic series needs at least one region".into()));
        }
        let len = counts[0].len();
        if counts.iter().any(|r| r.len() != len) {
            return Err(Error::Shape("regions have different series lengths".into()));
        }
        if let Some(v) = counts.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "traffic counts must be finite and >= 0, got {v}"
            )));
        }
        Ok(TrafficSeries { counts })
    }

    pub fn empty(regions: usize) -> Self {
        TrafficSeries {
            counts: vec![Vec::new(); regions.max(1)],
        }
    }

    pub fn regions(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn region(&self, i: usize) -> &[f64] {
        &self.counts[i]
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    pub fn get(&self, region: usize, slot: usize) -> f64 {
        self.counts[region][slot]
    }

    /// Appends one slot of counts (one value per region).
    pub fn push(&mut self, slot: &[f64]) -> Result<()> {
        if slot.len() != self.regions() {
            return Err(Error::Shape(format!(
                "{} counts for {} regions",
                slot.len(),
                self.regions()
            )));
        }
        if let Some(v) = slot.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("traffic count {v}")));
        }
        for (r, &v) in self.counts.iter_mut().zip(slot) {
            r.push(v);
        }
        Ok(())
    }

    /// The first `len` slots.
    pub fn prefix(&self, len: usize) -> TrafficSeries {
        TrafficSeries {
            counts: self.counts.iter().map(|r| r[..len].to_vec()).collect(),
        }
    }

    /// Slots `start..start + len` as a `len x regions` matrix.
    pub fn window_matrix(&self, start: usize, len: usize) -> Matrix {
        let r = self.regions();
        let mut m = Matrix::zeros(len, r);
        for t in 0..len {
            for i in 0..r {
                m[(t, i)] = self.counts[i][start + t];
            }
        }
        m
    }
}

/// Encoder input (the last `windows.history` slots) and decoder input (the
/// last `windows.current` slots followed by `horizon` zero rows).
pub fn build_io(series: &TrafficSeries, horizon: usize, windows: Windows) -> Result<(Matrix, Matrix)> {
    if horizon == 0 {
        return Err(Error::InvalidInput("forecast horizon must be positive".into()));
    }
    let n = series.len();
    if n == 0 {
        return Err(Error::InvalidInput("traffic history is empty".into()));
    }
    let his = windows.history.clamp(1, n);
    let cur = windows.current.clamp(1, n);
    let x_en = series.window_matrix(n - his, his);
    let prefix = series.window_matrix(n - cur, cur);
    let mut x_de = Matrix::zeros(cur + horizon, series.regions());
    for t in 0..cur {
        x_de.row_mut(t).copy_from_slice(prefix.row(t));
    }
    Ok((x_en, x_de))
}
