//! Encoder-decoder traffic forecaster.
//!
//! Encoder: input projection plus positional encoding, then `encoder_layers`
//! residual probsparse self-attention layers with a distilling block
//! (conv → ELU → max-pool) between consecutive layers. Decoder: the known
//! recent window followed by zero placeholders, one causal self-attention
//! layer and one cross-attention layer over the encoder output. A two-layer
//! MLP maps the placeholder rows to per-region counts.
//!
//! Inputs are standardized per region with the encoder window's mean and
//! spread (spread floored at 1) and predictions are mapped back.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{probsparse_modes, query_budget, select_top_queries, sparsity_measure};
use super::{build_io, TrafficSeries, Windows};
use crate::error::{Error, Result};
use crate::neural::tape::{RowMode, Tape, Var};
use crate::neural::{find, Activation, Adam, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub width: usize,
    pub encoder_layers: usize,
    /// `c` in the query budget `ceil(c ln L)`.
    pub top_u_factor: f64,
    pub history_window: usize,
    pub current_window: usize,
    /// Horizon used for training windows.
    pub horizon: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Length of the synthetic history generated for training.
    pub train_slots: usize,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            width: 32,
            encoder_layers: 2,
            top_u_factor: 5.0,
            history_window: 64,
            current_window: 8,
            horizon: 1,
            epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            train_slots: 240,
            seed: 7,
        }
    }
}

impl ForecastConfig {
    pub fn windows(&self) -> Windows {
        Windows {
            history: self.history_window,
            current: self.current_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("forecaster.width", self.width),
            ("forecaster.encoder_layers", self.encoder_layers),
            ("forecaster.history_window", self.history_window),
            ("forecaster.current_window", self.current_window),
            ("forecaster.horizon", self.horizon),
            ("forecaster.batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::field(name, "must be positive"));
            }
        }
        if !(self.top_u_factor > 0.0) {
            return Err(Error::field("forecaster.top_u_factor", "must be positive"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::field("forecaster.lr", "must be non-negative"));
        }
        Ok(())
    }

    /// Shortest history the encoder accepts: every distilling block needs at
    /// least two rows.
    pub fn min_history(&self) -> usize {
        1usize << (self.encoder_layers - 1).min(16)
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnParams {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    embed_en: (usize, usize),
    embed_de: (usize, usize),
    encoder: Vec<AttnParams>,
    conv: Vec<(usize, usize)>,
    dec_self: AttnParams,
    dec_cross: AttnParams,
    head_hidden: (usize, usize),
    head_out: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
enum AttnKind {
    ProbSparse(f64),
    Causal,
    Dense,
}

/// Per-region standardization of one window.
#[derive(Debug, Clone)]
struct Scaling {
    mean: Vec<f64>,
    spread: Vec<f64>,
}

impl Scaling {
    fn fit(x: &Matrix) -> Self {
        let (l, r) = x.shape();
        let mut mean = vec![0.0; r];
        let mut spread = vec![0.0; r];
        for i in 0..r {
            let m = (0..l).map(|t| x[(t, i)]).sum::<f64>() / l as f64;
            let var = (0..l).map(|t| (x[(t, i)] - m).powi(2)).sum::<f64>() / l as f64;
            mean[i] = m;
            spread[i] = var.sqrt().max(1.0);
        }
        Scaling { mean, spread }
    }

    fn apply(&self, x: &Matrix, rows: usize) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for t in 0..rows {
            for i in 0..x.cols() {
                out[(t, i)] = (x[(t, i)] - self.mean[i]) / self.spread[i];
            }
        }
        out
    }

    fn invert(&self, y: &Matrix) -> Matrix {
        let mut out = y.clone();
        for t in 0..y.rows() {
            for i in 0..y.cols() {
                out[(t, i)] = self.mean[i] + self.spread[i] * y[(t, i)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    config: ForecastConfig,
    regions: usize,
    params: Vec<(String, Matrix)>,
    optimizer: Adam,
}

fn sinusoidal_positions(positions: impl Iterator<Item = usize>, width: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = positions
        .map(|pos| {
            (0..width)
                .map(|j| {
                    let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / width as f64);
                    let angle = pos as f64 * freq;
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, width))
}

impl ForecastModel {
    pub fn new(config: ForecastConfig, regions: usize) -> Result<Self> {
        config.validate()?;
        if regions == 0 {
            return Err(Error::InvalidInput("forecaster needs at least one region".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.width;
        let mut params = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
            params.push((name, Matrix::from_vec(rows, cols, values).expect("sized")));
        };
        let attn = |prefix: &str, add: &mut dyn FnMut(String, usize, usize, &mut ChaCha8Rng), rng: &mut ChaCha8Rng| {
            for p in ["q", "k", "v", "o"] {
                add(format!("{prefix}.w{p}"), d, d, rng);
            }
        };
        add("embed_en.weight".into(), regions, d, &mut rng);
        add("embed_en.bias".into(), 1, d, &mut rng);
        add("embed_de.weight".into(), regions, d, &mut rng);
        add("embed_de.bias".into(), 1, d, &mut rng);
        for l in 0..config.encoder_layers {
            attn(&format!("encoder{l}.attn"), &mut add, &mut rng);
            if l + 1 < config.encoder_layers {
                add(format!("encoder{l}.conv.weight"), 3 * d, d, &mut rng);
                add(format!("encoder{l}.conv.bias"), 1, d, &mut rng);
            }
        }
        attn("decoder.self_attn", &mut add, &mut rng);
        attn("decoder.cross_attn", &mut add, &mut rng);
        add("head.hidden.weight".into(), d, d, &mut rng);
        add("head.hidden.bias".into(), 1, d, &mut rng);
        add("head.out.weight".into(), d, regions, &mut rng);
        add("head.out.bias".into(), 1, regions, &mut rng);
        Ok(ForecastModel {
            config,
            regions,
            params,
            optimizer: Adam::default(),
        })
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn params(&self) -> &[(String, Matrix)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Matrix)] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, m)| m.is_finite())
    }

    pub fn named_params(&self) -> Vec<(String, Matrix)> {
        self.params.clone()
    }

    pub fn load_params(&mut self, params: &[(String, Matrix)]) -> Result<()> {
        for (name, m) in &mut self.params {
            let src = find(params, name)?;
            if src.shape() != m.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            *m = src.clone();
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let idx = |name: &str| {
            self.params
                .iter()
                .position(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("parameter `{name}` missing from layout"))
        };
        let attn = |prefix: &str| AttnParams {
            q: idx(&format!("{prefix}.wq")),
            k: idx(&format!("{prefix}.wk")),
            v: idx(&format!("{prefix}.wv")),
            o: idx(&format!("{prefix}.wo")),
        };
        let layers = self.config.encoder_layers;
        Layout {
            embed_en: (idx("embed_en.weight"), idx("embed_en.bias")),
            embed_de: (idx("embed_de.weight"), idx("embed_de.bias")),
            encoder: (0..layers).map(|l| attn(&format!("encoder{l}.attn"))).collect(),
            conv: (0..layers.saturating_sub(1))
                .map(|l| {
                    (
                        idx(&format!("encoder{l}.conv.weight")),
                        idx(&format!("encoder{l}.conv.bias")),
                    )
                })
                .collect(),
            dec_self: attn("decoder.self_attn"),
            dec_cross: attn("decoder.cross_attn"),
            head_hidden: (idx("head.hidden.weight"), idx("head.hidden.bias")),
            head_out: (idx("head.out.weight"), idx("head.out.bias")),
        }
    }

    fn attention(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_q: Var,
        x_kv: Var,
        p: AttnParams,
        kind: AttnKind,
    ) -> Result<Var> {
        let q = tape.matmul(x_q, vars[p.q])?;
        let k = tape.matmul(x_kv, vars[p.k])?;
        let v = tape.matmul(x_kv, vars[p.v])?;
        let raw = tape.matmul_t(q, k)?;
        let scores = tape.scale(raw, 1.0 / (self.config.width as f64).sqrt());
        let (lq, lk) = tape.value(scores).shape();
        let modes = match kind {
            AttnKind::ProbSparse(factor) => {
                let u = query_budget(factor, lq);
                let selected = select_top_queries(&sparsity_measure(tape.value(scores)), u);
                probsparse_modes(&selected, lq, lk)
            }
            AttnKind::Causal => (0..lq)
                .map(|i| RowMode::Softmax { keys: (i + 1).min(lk) })
                .collect(),
            AttnKind::Dense => vec![RowMode::Softmax { keys: lk }; lq],
        };
        let w = tape.attention_weights(scores, modes)?;
        let mixed = tape.matmul(w, v)?;
        tape.matmul(mixed, vars[p.o])
    }

    /// Builds the forward pass on `tape` from standardized inputs and returns
    /// the standardized `horizon x regions` prediction node.
    fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_en: &Matrix,
        x_de: &Matrix,
        horizon: usize,
    ) -> Result<Var> {
        let layout = self.layout();
        let d = self.config.width;
        let l_en = x_en.rows();
        let l_de = x_de.rows();
        let known = l_de - horizon;

        let x = tape.leaf(x_en.clone());
        let h = tape.matmul(x, vars[layout.embed_en.0])?;
        let h = tape.add_row(h, vars[layout.embed_en.1])?;
        let pe = tape.leaf(sinusoidal_positions(0..l_en, d));
        let mut h = tape.add(h, pe)?;
        for (l, attn) in layout.encoder.iter().enumerate() {
            let a = self.attention(
                tape,
                vars,
                h,
                h,
                *attn,
                AttnKind::ProbSparse(self.config.top_u_factor),
            )?;
            h = tape.add(h, a)?;
            if let Some(&(w, b)) = layout.conv.get(l) {
                if tape.value(h).rows() < 2 {
                    return Err(Error::InvalidInput(
                        "history too short for the distilling layers".into(),
                    ));
                }
                let n = tape.neighbors3(h);
                let c = tape.matmul(n, vars[w])?;
                let c = tape.add_row(c, vars[b])?;
                let c = tape.activate(c, Activation::Elu);
                h = tape.max_pool2(c);
            }
        }
        let encoded = h;

        let y = tape.leaf(x_de.clone());
        let g = tape.matmul(y, vars[layout.embed_de.0])?;
        let g = tape.add_row(g, vars[layout.embed_de.1])?;
        let start = l_en - known;
        let pe = tape.leaf(sinusoidal_positions(start..start + l_de, d));
        let g = tape.add(g, pe)?;
        let a = self.attention(tape, vars, g, g, layout.dec_self, AttnKind::Causal)?;
        let g = tape.add(g, a)?;
        let c = self.attention(tape, vars, g, encoded, layout.dec_cross, AttnKind::Dense)?;
        let g = tape.add(g, c)?;

        let tail = tape.rows(g, known, horizon)?;
        let z = tape.matmul(tail, vars[layout.head_hidden.0])?;
        let z = tape.add_row(z, vars[layout.head_hidden.1])?;
        let z = tape.activate(z, Activation::Elu);
        let out = tape.matmul(z, vars[layout.head_out.0])?;
        tape.add_row(out, vars[layout.head_out.1])
    }

    fn prepare(&self, history: &TrafficSeries, horizon: usize) -> Result<(Matrix, Matrix, Scaling)> {
        if history.regions() != self.regions {
            return Err(Error::Shape(format!(
                "model expects {} regions, series has {}",
                self.regions,
                history.regions()
            )));
        }
        let (x_en, x_de) = build_io(history, horizon, self.config.windows())?;
        if x_en.rows() < self.config.min_history() {
            return Err(Error::InvalidInput(format!(
                "forecaster needs at least {} slots of history",
                self.config.min_history()
            )));
        }
        let scaling = Scaling::fit(&x_en);
        let known = x_de.rows() - horizon;
        let en = scaling.apply(&x_en, x_en.rows());
        let de = scaling.apply(&x_de, known);
        Ok((en, de, scaling))
    }

    /// Predicted counts, `regions x horizon`, clamped at zero.
    pub fn forecast(&self, history: &TrafficSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let (en, de, scaling) = self.prepare(history, horizon)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|(_, m)| tape.leaf(m.clone())).collect();
        let out = self.forward_tape(&mut tape, &vars, &en, &de, horizon)?;
        let pred = scaling.invert(tape.value(out));
        if !pred.is_finite() {
            return Err(Error::Divergence("forecast produced non-finite values".into()));
        }
        Ok((0..self.regions)
            .map(|i| (0..horizon).map(|t| pred[(t, i)].max(0.0)).collect())
            .collect())
    }

    /// Standardized squared-error loss of predicting `target`
    /// (`horizon x regions`, raw counts) from `history`, with its gradients
    /// for every parameter in `params()` order.
    pub fn window_gradients(&self, history: &TrafficSeries, target: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        let horizon = target.rows();
        let (en, de, scaling) = self.prepare(history, horizon)?;
        let mut scaled_target = target.clone();
        for t in 0..horizon {
            for i in 0..self.regions {
                scaled_target[(t, i)] = (target[(t, i)] - scaling.mean[i]) / scaling.spread[i];
            }
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|(_, m)| tape.leaf(m.clone())).collect();
        let out = self.forward_tape(&mut tape, &vars, &en, &de, horizon)?;
        let loss_var = tape.mse(out, scaled_target)?;
        let loss = tape.value(loss_var)[(0, 0)];
        let grads = tape.backward(loss_var)?;
        let g = vars
            .iter()
            .zip(&self.params)
            .map(|(v, (_, m))| grads.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        Ok((loss, g))
    }

    pub fn window_loss(&self, history: &TrafficSeries, target: &Matrix) -> Result<f64> {
        Ok(self.window_gradients(history, target)?.0)
    }

    /// Trains on every window of `series` (history prefix → next `horizon`
    /// slots) with mini-batch Adam. Returns the mean loss of each epoch.
    pub fn fit(&mut self, series: &TrafficSeries, epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let horizon = self.config.horizon;
        let min_ctx = self.config.min_history().max(self.config.current_window).max(2);
        if series.len() < min_ctx + horizon {
            return Err(Error::InvalidInput(format!(
                "training series of {} slots is shorter than {} + horizon {horizon}",
                series.len(),
                min_ctx
            )));
        }
        let ends: Vec<usize> = (min_ctx..=series.len() - horizon).collect();
        let mut order = ends.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_f17);
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let mut acc: Vec<Matrix> = self
                    .params
                    .iter()
                    .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
                    .collect();
                for &end in batch {
                    let history = series.prefix(end);
                    let target = series.window_matrix(end, horizon);
                    let (loss, g) = self.window_gradients(&history, &target)?;
                    if !loss.is_finite() {
                        return Err(Error::Divergence(format!(
                            "forecaster loss became non-finite in epoch {epoch}"
                        )));
                    }
                    total += loss;
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        a.add_assign(gi)?;
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                acc.iter_mut().for_each(|a| a.scale(scale));
                let mut params: Vec<&mut [f64]> =
                    self.params.iter_mut().map(|(_, m)| m.data_mut()).collect();
                let grads: Vec<&[f64]> = acc.iter().map(Matrix::data).collect();
                self.optimizer.step(&mut params, &grads, lr)?;
            }
            let mean = total / ends.len() as f64;
            log::debug!("forecaster epoch {epoch}: loss {mean:.6}");
            trace.push(mean);
        }
        Ok(trace)
    }
}
