use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Elu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Elu,
        Activation::Sigmoid,
        Activation::Identity,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer computing `act(x W + b)`, with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Feed-forward stack of dense layers plus its optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    optimizer: Adam,
}

/// Intermediate values from a batched forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Parameter gradients (summed over the batch) and the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.scale(factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
        self.input.scale(factor);
    }
}

impl Network {
    /// Builds a network with `input` features and one layer per `(width,
    /// activation)` entry, initialized uniformly in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        layers: &[(usize, Activation)],
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || layers.is_empty() || layers.iter().any(|(w, _)| *w == 0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        let mut fan_in = input;
        let mut built = Vec::with_capacity(layers.len());
        for &(width, activation) in layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..fan_in * width)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bias = (0..width).map(|_| rng.random_range(-bound..=bound)).collect();
            built.push(Dense {
                weights: Matrix::from_vec(fan_in, width, weights)?,
                bias,
                activation,
            });
            fan_in = width;
        }
        Ok(Network {
            layers: built,
            optimizer: Adam::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.cols())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(x))?.into_data())
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = Self::affine(layer, &h)?.map(|v| layer.activation.apply(v));
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = Self::affine(layer, &h)?;
            let next = z.map(|v| layer.activation.apply(v));
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: h,
        })
    }

    /// Reverse-mode pass: gradients of `sum(upstream .* output)` with respect
    /// to every parameter and to the input batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Gradients> {
        if cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.cols() != l.weights.rows())
        {
            return Err(Error::Shape("forward cache does not belong to this network".into()));
        }
        if upstream.shape() != cache.output.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut delta = upstream.clone();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let out = if k + 1 < n {
                &cache.inputs[k + 1]
            } else {
                &cache.output
            };
            let pre = &cache.pre[k];
            for ((d, &x), &y) in delta.data_mut().iter_mut().zip(pre.data()).zip(out.data()) {
                *d *= layer.activation.derivative(x, y);
            }
            weights[k] = cache.inputs[k].t_matmul(&delta)?;
            biases[k] = delta.column_sums().into_data();
            delta = delta.matmul_t(&layer.weights)?;
        }
        Ok(Gradients {
            weights,
            biases,
            input: delta,
        })
    }

    /// Adaptive-moment step along `-grads`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        let mut params: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            params.push(layer.weights.data_mut());
            params.push(&mut layer.bias);
        }
        let g: Vec<&[f64]> = grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect();
        self.optimizer.step(&mut params, &g, lr)
    }

    /// Polyak averaging `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update(&mut self, online: &Network, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(Error::Shape("soft update between different architectures".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (a, b) in t.weights.data_mut().iter_mut().zip(o.weights.data()) {
                *a = tau * b + (1.0 - tau) * *a;
            }
            for (a, b) in t.bias.iter_mut().zip(&o.bias) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.shape() == b.weights.shape() && a.activation == b.activation
            })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Named parameter arrays, `layer{k}.weight` (`in x out`) and `layer{k}.bias` (`1 x out`).
    pub fn named_params(&self) -> Vec<(String, Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("layer{k}.weight"), l.weights.clone()),
                    (format!("layer{k}.bias"), Matrix::row_vector(&l.bias)),
                ]
            })
            .collect()
    }

    /// Overwrites parameters from `named_params`-style entries under `prefix`.
    pub fn load_params(&mut self, prefix: &str, params: &[(String, Matrix)]) -> Result<()> {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let w = find(params, &format!("{prefix}layer{k}.weight"))?;
            let b = find(params, &format!("{prefix}layer{k}.bias"))?;
            if w.shape() != layer.weights.shape() || b.shape() != (1, layer.bias.len()) {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {prefix}layer{k}"
                )));
            }
            layer.weights = w.clone();
            layer.bias = b.data().to_vec();
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Dense, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&layer.weights)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

pub(crate) fn find<'a>(params: &'a [(String, Matrix)], name: &str) -> Result<&'a Matrix> {
    params
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
}
