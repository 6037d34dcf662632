use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::lm::{AdamW, TrainConfig};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable log(1 + e^z).
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_xy(x: ArrayView2<f64>, y: &[bool]) -> Result<(), BaselineError> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(BaselineError::Input(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::Input("non-finite feature value".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogregConfig {
    fn default() -> Self {
        Self { l2: 1e-3, max_iter: 2000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: LogregConfig,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let w = Array1::from(self.weights.clone());
        x.dot(&w).iter().map(|z| sigmoid(z + self.bias)).collect()
    }
}

/// Mean log-loss plus (l2/2)·‖w‖², with gradients in w and b (bias unpenalized).
pub fn logreg_objective(x: ArrayView2<f64>, y: &[bool], w: &Array1<f64>, b: f64, l2: f64) -> (f64, Array1<f64>, f64) {
    let n = y.len() as f64;
    let z = x.dot(w);
    let mut loss = 0.0;
    let mut r = Array1::zeros(y.len());
    for i in 0..y.len() {
        let zi = z[i] + b;
        loss += if y[i] { softplus(-zi) } else { softplus(zi) };
        r[i] = (sigmoid(zi) - if y[i] { 1.0 } else { 0.0 }) / n;
    }
    let gw = x.t().dot(&r) + &(w * l2);
    (loss / n + 0.5 * l2 * w.dot(w), gw, r.sum())
}

/// Full-batch gradient descent with Armijo backtracking. Stops when the
/// gradient norm drops below `tol` or after `max_iter` iterations.
pub fn train_logreg(x: ArrayView2<f64>, y: &[bool], config: &LogregConfig) -> Result<LinearModel, BaselineError> {
    if !(config.l2 >= 0.0) {
        return Err(BaselineError::Config(format!("l2 = {} must be non-negative", config.l2)));
    }
    check_xy(x, y)?;
    let mut w = Array1::zeros(x.ncols());
    let mut b = 0.0;
    let mut step: f64 = 1.0;
    let (mut loss, mut gw, mut gb) = logreg_objective(x, y, &w, b, config.l2);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let g2 = gw.dot(&gw) + gb * gb;
        if g2.sqrt() < config.tol {
            converged = true;
            break;
        }
        step = (step * 2.0).min(1e3);
        loop {
            let w2 = &w - &(&gw * step);
            let b2 = b - gb * step;
            let (l2v, gw2, gb2) = logreg_objective(x, y, &w2, b2, config.l2);
            if l2v <= loss - 0.5 * step * g2 || step < 1e-12 {
                w = w2;
                b = b2;
                loss = l2v;
                gw = gw2;
                gb = gb2;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
    }
    if !loss.is_finite() {
        return Err(BaselineError::NonFinite("logistic loss".into()));
    }
    Ok(LinearModel { weights: w.to_vec(), bias: b, config: config.clone(), iterations, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    /// Hidden layer widths; ReLU between layers, sigmoid output.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], lr: 1e-3, epochs: 30, batch_size: 64, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub sizes: Vec<usize>,
    /// (W [in, out], b [out]) per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub seed: u64,
    pub epoch_loss: Vec<f64>,
}

impl MlpModel {
    fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(w) + b;
            if k + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let acts = self.forward(x);
        acts.last().expect("output layer").iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Mini-batch AdamW on mean log-loss; He-normal init from `seed`.
pub fn train_mlp(x: ArrayView2<f64>, y: &[bool], config: &MlpConfig, seed: u64) -> Result<MlpModel, BaselineError> {
    if config.hidden.is_empty() {
        return Err(BaselineError::Config("an MLP needs at least one hidden layer; use logistic regression".into()));
    }
    if config.hidden.contains(&0) || config.batch_size == 0 || config.epochs == 0 {
        return Err(BaselineError::Config("layer widths, batch size and epochs must be positive".into()));
    }
    check_xy(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![x.ncols()];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let layers = sizes
        .windows(2)
        .map(|p| {
            let normal = Normal::new(0.0, (2.0 / p[0] as f64).sqrt()).expect("positive std");
            (Array2::from_shape_simple_fn((p[0], p[1]), || normal.sample(&mut rng)), Array1::zeros(p[1]))
        })
        .collect();
    let mut model = MlpModel { sizes, layers, seed, epoch_loss: Vec::new() };
    let tc = TrainConfig { weight_decay: config.weight_decay, ..TrainConfig::default() };
    let shapes: Vec<usize> = model.layers.iter().flat_map(|(w, b)| [w.len(), b.len()]).collect();
    let mut opt = AdamW::<f64>::new(&tc, &shapes);
    let mut order: Vec<usize> = (0..y.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let acts = model.forward(xb.view());
            let n = batch.len() as f64;
            let out = acts.last().expect("output layer");
            let mut delta = Array2::zeros(out.raw_dim());
            for (r, &i) in batch.iter().enumerate() {
                let z = out[[r, 0]];
                total += if y[i] { softplus(-z) } else { softplus(z) };
                delta[[r, 0]] = (sigmoid(z) - if y[i] { 1.0 } else { 0.0 }) / n;
            }
            let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
            for k in (0..model.layers.len()).rev() {
                let gw = acts[k].t().dot(&delta).as_standard_layout().into_owned();
                let gb = delta.sum_axis(Axis(0));
                if k > 0 {
                    let mut d = delta.dot(&model.layers[k].0.t());
                    d.zip_mut_with(&acts[k], |g, &a| {
                        if a <= 0.0 {
                            *g = 0.0
                        }
                    });
                    delta = d;
                }
                grads.push((gw, gb));
            }
            grads.reverse();
            let gs: Vec<&[f64]> = grads
                .iter()
                .flat_map(|(w, b)| [w.as_slice().expect("contiguous"), b.as_slice().expect("contiguous")])
                .collect();
            let ps: Vec<&mut [f64]> = model
                .layers
                .iter_mut()
                .flat_map(|(w, b)| [w.as_slice_mut().expect("contiguous"), b.as_slice_mut().expect("contiguous")])
                .collect();
            opt.step(ps, &gs, config.lr);
        }
        let mean = total / y.len() as f64;
        if !mean.is_finite() {
            return Err(BaselineError::NonFinite(format!("MLP loss at epoch {}", model.epoch_loss.len())));
        }
        model.epoch_loss.push(mean);
    }
    Ok(model)
}
