//! Feed-forward network regression model for one-step dynamics.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{model_inputs, Dynamics};
use crate::data::DayDataset;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, Mode};
use crate::state::{Action, GreenhouseState, Temps};
use crate::util::{rng_from, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_norm: bool,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64, 32, 16],
            dropout: 0.1,
            batch_norm: true,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            batch_size: 256,
            max_epochs: 300,
            patience: 20,
            val_fraction: 0.2,
            seed: 48,
        }
    }
}

impl MlpConfig {
    /// Hidden sizes of the full-size network.
    pub fn full_scale() -> Self {
        MlpConfig {
            hidden: vec![256, 128, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errs.push("env_model.mlp.hidden must be non-empty positive sizes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push("env_model.mlp.dropout must be in [0, 1)".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push("env_model.mlp.learning_rate must be > 0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            errs.push("env_model.mlp.lr_decay must be in (0, 1]".into());
        }
        if self.batch_size == 0 {
            errs.push("env_model.mlp.batch_size must be > 0".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            errs.push("env_model.mlp.val_fraction must be in (0, 1)".into());
        }
        errs
    }
}

/// Network plus the standardization of its inputs and outputs. When
/// `residual` is set the outputs are increments added to the current
/// temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub net: Mlp,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainReport {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    /// Per-epoch mean squared error in standardized units, evaluated without
    /// dropout.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Best validation MSE per output in original units.
    pub val_mse: Vec<f64>,
    pub warning: Option<String>,
}

impl MlpModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_mean.len() {
            return Err(Error::Shape {
                expected: self.input_mean.len(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model input".into()));
        }
        let z: Vec<f64> = x
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let out = self.net.predict_one(&z)?;
        Ok(out
            .iter()
            .zip(&self.output_mean)
            .zip(&self.output_std)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    fn standardize_x(&self, x: &[Vec<f64>]) -> Array2<f64> {
        standardize(x, &self.input_mean, &self.input_std)
    }

    fn standardize_y(&self, y: &[Vec<f64>]) -> Array2<f64> {
        standardize(y, &self.output_mean, &self.output_std)
    }

    /// Mean squared error per output in original units.
    pub fn mse(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Vec<f64>> {
        let pred = self.net.predict(&self.standardize_x(x).view())?;
        let diff = pred - self.standardize_y(y);
        let per = diff.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        Ok(per.iter().zip(&self.output_std).map(|(v, s)| v * s * s).collect())
    }
}

impl Dynamics for MlpModel {
    fn predict_temps(&self, state: &GreenhouseState, action: Action) -> Result<Temps> {
        let y = self.predict(&model_inputs(state, action))?;
        if y.len() != 4 {
            return Err(Error::Shape {
                expected: 4,
                got: y.len(),
            });
        }
        let base = if self.residual { state.temps() } else { [0.0; 4] };
        Ok([0, 1, 2, 3].map(|k| base[k] + y[k]))
    }
}

fn standardize(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), mean.len()), |(r, c)| (rows[r][c] - mean[c]) / std[c])
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    // Constant columns pass through unscaled.
    let std = std.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// Trains a regression network on explicit train/validation sets and
/// returns the weights of the best validation epoch.
pub fn train_mlp_xy(
    x_train: &[Vec<f64>],
    y_train: &[Vec<f64>],
    x_val: &[Vec<f64>],
    y_val: &[Vec<f64>],
    config: &MlpConfig,
) -> Result<(MlpModel, MlpTrainReport)> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if x_train.is_empty() || x_val.is_empty() || x_train.len() != y_train.len() || x_val.len() != y_val.len() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty and aligned".into()));
    }
    let n_in = x_train[0].len();
    let n_out = y_train[0].len();
    let (input_mean, input_std) = column_stats(x_train);
    let (output_mean, output_std) = column_stats(y_train);
    let mut rng: Rng = rng_from(config.seed, &[0x3e7]);
    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden);
    sizes.push(n_out);
    let mut net = Mlp::new(&sizes, 1.0, &mut rng);
    if config.batch_norm || config.dropout > 0.0 {
        net = net.with_first_layer_regularization(config.dropout);
        if !config.batch_norm {
            net.batch_norm = None;
        }
    }
    let mut model = MlpModel {
        net,
        input_mean,
        input_std,
        output_mean,
        output_std,
        residual: false,
    };
    let xt = model.standardize_x(x_train);
    let yt = model.standardize_y(y_train);
    let xv = model.standardize_x(x_val);
    let yv = model.standardize_y(y_val);
    let mse = |net: &Mlp, x: &Array2<f64>, y: &Array2<f64>| -> f64 {
        let pred = net.predict(&x.view()).expect("shape checked");
        (pred - y).mapv(|v| v * v).mean().unwrap()
    };

    let mut report = MlpTrainReport {
        epochs_run: 0,
        best_epoch: None,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_mse: Vec::new(),
        warning: None,
    };
    if config.max_epochs == 0 {
        report.warning = Some("zero epoch budget: returning initial weights".into());
        report.val_mse = model.mse(x_val, y_val)?;
        return Ok((model, report));
    }

    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..xt.nrows()).collect();
    let mut best = (f64::INFINITY, model.net.clone());
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            // Batch statistics are undefined for a single sample.
            if chunk.len() < 2 && model.net.batch_norm.is_some() {
                continue;
            }
            let xb = xt.select(Axis(0), chunk);
            let yb = yt.select(Axis(0), chunk);
            let cache = model.net.forward(&xb.view(), Mode::Train { rng: Some(&mut rng) });
            let d = (&cache.output - &yb) * (2.0 / yb.len() as f64);
            let grads = model.net.backward(&cache, &d);
            model.net.update_running_stats(&cache);
            opt.update(model.net.params_mut(), &grads);
        }
        opt.lr *= config.lr_decay;
        let tl = mse(&model.net, &xt, &yt);
        let vl = mse(&model.net, &xv, &yv);
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("train loss {tl}, validation loss {vl}"),
            });
        }
        report.train_loss.push(tl);
        report.val_loss.push(vl);
        report.epochs_run = epoch + 1;
        if vl < best.0 {
            best = (vl, model.net.clone());
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.net = best.1;
    report.val_mse = model.mse(x_val, y_val)?;
    Ok((model, report))
}

/// Inputs and one-step temperature increments of every transition.
pub fn dynamics_samples(ds: &DayDataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    ds.transitions()
        .into_iter()
        .map(|(s, opening, next)| {
            let x = model_inputs(&s, Action::nearest(opening)).to_vec();
            let cur = s.temps();
            let y = (0..4).map(|k| next[k] - cur[k]).collect();
            (x, y)
        })
        .unzip()
}

/// Fits the residual dynamics network. Whole days are split into training
/// and validation parts by `config.val_fraction`.
pub fn train_mlp(train: &DayDataset, config: &MlpConfig) -> Result<(MlpModel, MlpTrainReport)> {
    let n_days = train.days.len();
    if n_days < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training days for a validation split, got {n_days}"
        )));
    }
    let mut idx: Vec<usize> = (0..n_days).collect();
    idx.shuffle(&mut rng_from(config.seed, &[0x5a1]));
    let n_val = ((n_days as f64 * config.val_fraction).round() as usize).clamp(1, n_days - 1);
    let pick = |ids: &[usize]| DayDataset {
        days: ids.iter().map(|&i| train.days[i].clone()).collect(),
        split: train.split,
    };
    let (xv, yv) = dynamics_samples(&pick(&idx[..n_val]));
    let (xt, yt) = dynamics_samples(&pick(&idx[n_val..]));
    let (mut model, report) = train_mlp_xy(&xt, &yt, &xv, &yv, config)?;
    model.residual = true;
    Ok((model, report))
}
