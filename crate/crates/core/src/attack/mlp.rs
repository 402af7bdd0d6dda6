//! Fully connected binary classifier: ReLU hidden layers, logistic output,
//! binary cross-entropy, trained with Adam on shuffled mini-batches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AttackDataset;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::seed::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![64, 32, 16],
            epochs: 300,
            lr: 0.005,
            batch_size: 32,
        }
    }
}

impl MlpConfig {
    /// Four hidden layers, for corpora with many classes.
    pub fn deep() -> Self {
        MlpConfig {
            hidden_layers: vec![64, 64, 32, 16],
            ..Default::default()
        }
    }
}

/// `weights[l]` is row-major `out × in` for layer `l`. Inputs are
/// standardized with `input_mean` / `input_scale` before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

struct Tape {
    /// Activations per layer; `acts[0]` is the standardized input.
    acts: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden_layers", "widths must be at least 1"));
        }
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let mut rng = derived_rng(seed, "mlp-init");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            layer_sizes,
            weights,
            biases,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "attack features",
                expected: self.input_dim(),
                actual: x.len(),
            })
        }
    }

    fn forward(&self, x: &[f64]) -> (f64, Tape) {
        let input: Vec<f64> = x
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut acts = vec![input];
        let last = self.weights.len() - 1;
        let mut logit = 0.0;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = &acts[l];
            let n_in = a.len();
            let mut z: Vec<f64> = b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l == last {
                logit = z[0];
            } else {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
                acts.push(z);
            }
        }
        (logit, Tape { acts })
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward(x).0
    }

    /// Accumulates `dlogit`-weighted gradients into `gw` / `gb`.
    fn backward(&self, tape: &Tape, dlogit: f64, gw: &mut [Vec<f64>], gb: &mut [Vec<f64>]) {
        let mut delta = vec![dlogit];
        for l in (0..self.weights.len()).rev() {
            let a = &tape.acts[l];
            let n_in = a.len();
            let w = &self.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                gb[l][o] += d;
                let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                for (g, &ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            // ReLU derivative: active units have positive activation
            for (p, &ai) in prev.iter_mut().zip(a) {
                if ai <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    fn zeros_like(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        )
    }
}

/// Mean binary cross-entropy over `(features, labels)` and its gradient.
pub fn mlp_loss_grad(
    params: &MlpParams,
    features: &[Vec<f64>],
    labels: &[bool],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid("batch", "features and labels must be non-empty and aligned"));
    }
    let (mut gw, mut gb) = params.zeros_like();
    let scale = 1.0 / features.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        params.check_input(x)?;
        let (z, tape) = params.forward(x);
        let y = if y { 1.0 } else { 0.0 };
        // softplus(z) - y·z
        loss += (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z) * scale;
        params.backward(&tape, (sigmoid(z) - y) * scale, &mut gw, &mut gb);
    }
    Ok((loss, gw, gb))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[Vec<f64>]) -> Self {
        Adam {
            m: shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
            v: shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (j, (pj, &gj)) in p.iter_mut().zip(g.iter()).enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gj;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gj * gj;
                *pj -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

pub fn mlp_train(data: &AttackDataset, cfg: &MlpConfig, seed: u64) -> Result<MlpParams> {
    let features = data.features();
    let labels = data.labels();
    mlp_train_arrays(&features, &labels, cfg, seed)
}

pub fn mlp_train_arrays(
    features: &[Vec<f64>],
    labels: &[bool],
    cfg: &MlpConfig,
    seed: u64,
) -> Result<MlpParams> {
    if features.is_empty() {
        return Err(Error::EmptyInput { what: "attack data" });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid("lr", "must be positive"));
    }
    let dim = features[0].len();
    let mut params = MlpParams::init(dim, &cfg.hidden_layers, seed)?;
    for x in features {
        params.check_input(x)?;
    }
    let n = features.len() as f64;
    for j in 0..dim {
        let mean = features.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = features.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        params.input_mean[j] = mean;
        params.input_scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }

    let all_shapes: Vec<Vec<f64>> = params
        .weights
        .iter()
        .chain(&params.biases)
        .cloned()
        .collect();
    let mut adam = Adam::new(&all_shapes);
    let mut rng = derived_rng(seed, "mlp-shuffle");
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(features[i].clone());
                batch_y.push(labels[i]);
            }
            let (loss, gw, gb) = mlp_loss_grad(&params, &batch_x, &batch_y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            let grads: Vec<&Vec<f64>> = gw.iter().chain(&gb).collect();
            let MlpParams {
                weights, biases, ..
            } = &mut params;
            let mut slots: Vec<&mut Vec<f64>> = weights.iter_mut().chain(biases.iter_mut()).collect();
            adam.step(&mut slots, &grads, cfg.lr);
        }
    }
    Ok(params)
}

/// Member probability.
pub fn mlp_predict(params: &MlpParams, features: &[f64]) -> Result<f64> {
    params.check_input(features)?;
    Ok(sigmoid(params.logit(features)))
}

pub fn mlp_predict_labels(params: &MlpParams, features: &[Vec<f64>]) -> Result<Vec<bool>> {
    features
        .iter()
        .map(|x| mlp_predict(params, x).map(|p| p > 0.5))
        .collect()
}
