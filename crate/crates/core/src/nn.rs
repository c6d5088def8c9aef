//! Small dense-network engine with reverse-mode gradients and Adam/AdamW.
//!
//! Networks are plain feed-forward stacks: ReLU hidden layers and a linear
//! output. Optionally the first layer carries batch normalization and
//! dropout. Parameters and gradients are exposed as ordered flat slices so
//! optimizers and finite-difference checks can treat them uniformly.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain * (2.0 / n_in as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        Dense {
            weight: Array2::from_shape_simple_fn((n_out, n_in), || normal.sample(rng)),
            bias: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(n: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Applied to the first layer's pre-activation.
    pub batch_norm: Option<BatchNorm>,
    /// Dropout rate after the first hidden activation (training only).
    pub dropout: f64,
}

/// Training-time behaviour of a forward pass.
pub enum Mode<'a, R: Rng> {
    Eval,
    /// Batch statistics for batch norm; dropout masks drawn from `rng` when
    /// given.
    Train { rng: Option<&'a mut R> },
}

/// Intermediate values kept for the backward pass.
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    bn: Option<BnCache>,
    dropout_mask: Option<Array2<f64>>,
    pub output: Array2<f64>,
}

struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    train: bool,
}

/// Gradients in the same order as [`Mlp::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub bn: Option<(Array1<f64>, Array1<f64>)>,
}

impl Grads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in &self.layers {
            out.push(w.as_slice().unwrap());
            out.push(b.as_slice().unwrap());
        }
        if let Some((g, b)) = &self.bn {
            out.push(g.as_slice().unwrap());
            out.push(b.as_slice().unwrap());
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
        if let Some((g, b)) = &mut self.bn {
            *g *= s;
            *b *= s;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }
}

impl Mlp {
    /// `sizes = [n_in, hidden..., n_out]`. `output_gain` scales the initial
    /// output-layer weights.
    pub fn new<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i == n - 1 { output_gain } else { 1.0 };
                Dense::init(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Mlp {
            layers,
            batch_norm: None,
            dropout: 0.0,
        }
    }

    /// Adds batch normalization and dropout to the first hidden layer.
    pub fn with_first_layer_regularization(mut self, dropout: f64) -> Self {
        if self.layers.len() > 1 {
            self.batch_norm = Some(BatchNorm::new(self.layers[0].n_out()));
            self.dropout = dropout;
        }
        self
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().unwrap().n_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_inputs()];
        s.extend(self.layers.iter().map(Dense::n_out));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>()
            + self.batch_norm.as_ref().map_or(0, |b| 2 * b.gamma.len())
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        if let Some(bn) = &mut self.batch_norm {
            out.push(bn.gamma.as_slice_mut().unwrap());
            out.push(bn.beta.as_slice_mut().unwrap());
        }
        out
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        if let Some(bn) = &self.batch_norm {
            out.extend(bn.gamma.iter());
            out.extend(bn.beta.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.n_inputs() {
            return Err(Error::Shape {
                expected: self.n_inputs(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Inference forward pass on a batch (rows are samples).
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(x, Mode::Eval).output)
    }

    /// Inference on a single sample.
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut a = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.dot(&a) + &layer.bias;
            if i == 0 {
                if let Some(bn) = &self.batch_norm {
                    z = (z - &bn.running_mean) / bn.running_var.mapv(|v| (v + bn.eps).sqrt()) * &bn.gamma
                        + &bn.beta;
                }
            }
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    pub fn forward<R: Rng>(&self, x: &ArrayView2<f64>, mode: Mode<'_, R>) -> Cache {
        let (train, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train { rng } => (true, rng),
        };
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut bn_cache = None;
        let mut dropout_mask = None;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&a.view());
            inputs.push(a);
            if i == 0 {
                if let Some(bn) = &self.batch_norm {
                    let (mean, var) = if train {
                        let mean = z.mean_axis(Axis(0)).unwrap();
                        let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                        (mean, var)
                    } else {
                        (bn.running_mean.clone(), bn.running_var.clone())
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let x_hat = (&z - &mean) * &inv_std;
                    z = &x_hat * &bn.gamma + &bn.beta;
                    bn_cache = Some(BnCache {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                        train,
                    });
                }
            }
            pre.push(z.clone());
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
                if i == 0 && train && self.dropout > 0.0 {
                    if let Some(rng) = rng.as_deref_mut() {
                        let keep = 1.0 - self.dropout;
                        let mask = Array2::from_shape_simple_fn(z.raw_dim(), || {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        z *= &mask;
                        dropout_mask = Some(mask);
                    }
                }
            }
            a = z;
        }
        Cache {
            inputs,
            pre,
            bn: bn_cache,
            dropout_mask,
            output: a,
        }
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics used at inference.
    pub fn update_running_stats(&mut self, cache: &Cache) {
        if let (Some(bn), Some(c)) = (self.batch_norm.as_mut(), cache.bn.as_ref()) {
            if c.train {
                let m = bn.momentum;
                bn.running_mean = &bn.running_mean * (1.0 - m) + &c.batch_mean * m;
                bn.running_var = &bn.running_var * (1.0 - m) + &c.batch_var * m;
            }
        }
    }

    /// Gradients of a scalar loss given `d_out = dL/d(output)`.
    pub fn backward(&self, cache: &Cache, d_out: &Array2<f64>) -> Grads {
        let last = self.layers.len() - 1;
        let mut layers = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        let mut bn_grads = None;
        let mut delta = d_out.clone();
        for i in (0..=last).rev() {
            if i < last {
                // Through dropout and ReLU of layer i.
                if i == 0 {
                    if let Some(mask) = &cache.dropout_mask {
                        delta *= mask;
                    }
                }
                let z = &cache.pre[i];
                ndarray::Zip::from(&mut delta).and(z).for_each(|d, &zv| {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            if i == 0 {
                if let (Some(bn), Some(c)) = (&self.batch_norm, &cache.bn) {
                    let d_gamma = (&delta * &c.x_hat).sum_axis(Axis(0));
                    let d_beta = delta.sum_axis(Axis(0));
                    let d_xhat = &delta * &bn.gamma;
                    delta = if c.train {
                        let mean_d = d_xhat.mean_axis(Axis(0)).unwrap();
                        let mean_dx = (&d_xhat * &c.x_hat).mean_axis(Axis(0)).unwrap();
                        (&d_xhat - &mean_d - &(&c.x_hat * &mean_dx)) * &c.inv_std
                    } else {
                        d_xhat * &c.inv_std
                    };
                    bn_grads = Some((d_gamma, d_beta));
                }
            }
            let a_prev = &cache.inputs[i];
            let d_w = delta.t().dot(a_prev);
            let d_b = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight);
            }
            layers[i] = (d_w, d_b);
        }
        Grads {
            layers,
            bn: bn_grads,
        }
    }
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut Grads], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        for g in grads.iter_mut() {
            g.scale(max_norm / norm);
        }
    }
    norm
}

/// Adam with optional decoupled weight decay (AdamW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Adam {
            weight_decay,
            ..Adam::new(lr)
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &Grads) {
        let grads = grads.slices();
        assert_eq!(params.len(), grads.len(), "parameter/gradient layout mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * self.weight_decay * p[i];
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
