//! Quadratic transition model fitted by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{model_inputs, Dynamics};
use crate::data::DayDataset;
use crate::error::{Error, Result};
use crate::state::{Action, GreenhouseState, Temps, TEMP_BOUNDS};

/// Length of the expanded feature vector for `n` inputs.
pub fn n_poly_features(n: usize) -> usize {
    n * (n + 1) / 2 + n + 1
}

/// `[x_i x_j for i <= j] ++ x ++ [1]`.
pub fn poly_features(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n_poly_features(n));
    for i in 0..n {
        for j in i..n {
            out.push(x[i] * x[j]);
        }
    }
    out.extend_from_slice(x);
    out.push(1.0);
    out
}

/// One coefficient vector per output, laid out like [`poly_features`].
/// Inputs are the normalized model inputs; outputs are temperatures scaled
/// by the admissible temperature range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub n_inputs: usize,
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFitReport {
    pub n_samples: usize,
    pub rank: usize,
    /// Ridge strength actually used; zero when the design had full rank.
    pub ridge: f64,
    pub train_mse: Vec<f64>,
}

impl PolynomialModel {
    /// A model with every coefficient zero.
    pub fn zeros(n_inputs: usize, n_outputs: usize) -> Self {
        PolynomialModel {
            n_inputs,
            coefficients: vec![vec![0.0; n_poly_features(n_inputs)]; n_outputs],
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.len()
    }

    fn index_of_pair(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Rows before i hold n, n-1, ..., n-i+1 entries.
        i * self.n_inputs - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Quadratic coefficient of `x_i x_j` (`i <= j`) for output `out`.
    pub fn theta(&self, out: usize, i: usize, j: usize) -> f64 {
        self.coefficients[out][self.index_of_pair(i, j)]
    }

    pub fn beta(&self, out: usize, k: usize) -> f64 {
        let n = self.n_inputs;
        self.coefficients[out][n * (n + 1) / 2 + k]
    }

    pub fn gamma(&self, out: usize) -> f64 {
        *self.coefficients[out].last().unwrap()
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::Unfitted);
        }
        if len != self.n_inputs {
            return Err(Error::Shape {
                expected: self.n_inputs,
                got: len,
            });
        }
        Ok(())
    }

    /// Evaluates every output on raw input `x`.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let phi = poly_features(x);
        Ok(self
            .coefficients
            .iter()
            .map(|c| c.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl Dynamics for PolynomialModel {
    fn predict_temps(&self, state: &GreenhouseState, action: Action) -> Result<Temps> {
        if !self.coefficients.is_empty() && self.n_outputs() != 4 {
            return Err(Error::Shape {
                expected: 4,
                got: self.n_outputs(),
            });
        }
        let y = self.predict_raw(&model_inputs(state, action))?;
        let (lo, hi) = TEMP_BOUNDS;
        Ok([0, 1, 2, 3].map(|k| lo + y[k] * (hi - lo)))
    }
}

/// Least-squares fit of the quadratic map `x -> y`. When the design matrix is
/// rank-deficient the ridge solution with strength `ridge` is returned.
pub fn fit_least_squares(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    ridge: f64,
) -> Result<(PolynomialModel, PolyFitReport)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty inputs and targets, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x[0].len();
    let n_out = y[0].len();
    let p = n_poly_features(n);
    if x.len() < 2 * p {
        return Err(Error::InvalidArgument(format!(
            "{} samples for {p} coefficients; need at least {}",
            x.len(),
            2 * p
        )));
    }
    let m = x.len();
    let mut design = DMatrix::<f64>::zeros(m, p);
    for (r, row) in x.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: row.len(),
            });
        }
        for (c, v) in poly_features(row).into_iter().enumerate() {
            design[(r, c)] = v;
        }
    }
    let targets = DMatrix::<f64>::from_fn(m, n_out, |r, c| y[r][c]);
    let svd = design.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * 1e-10 * (m.max(p) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let lambda = if rank < p { ridge.max(f64::MIN_POSITIVE) } else { 0.0 };
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let shrink = DVector::from_iterator(
        p,
        svd.singular_values.iter().map(|&s| {
            if lambda > 0.0 {
                s / (s * s + lambda)
            } else {
                1.0 / s
            }
        }),
    );
    let ut_y = u.transpose() * &targets;
    let scaled = DMatrix::from_fn(p, n_out, |r, c| ut_y[(r, c)] * shrink[r]);
    let coef = v_t.transpose() * scaled;
    let coefficients: Vec<Vec<f64>> = (0..n_out).map(|c| coef.column(c).iter().copied().collect()).collect();
    let resid = &design * &coef - &targets;
    let train_mse = (0..n_out)
        .map(|c| resid.column(c).iter().map(|v| v * v).sum::<f64>() / m as f64)
        .collect();
    Ok((
        PolynomialModel {
            n_inputs: n,
            coefficients,
        },
        PolyFitReport {
            n_samples: m,
            rank,
            ridge: lambda,
            train_mse,
        },
    ))
}

/// Fits the one-step temperature model on all transitions of `train`.
/// The reported MSE is in °C² per temperature channel.
pub fn fit_polynomial(train: &DayDataset, ridge: f64) -> Result<(PolynomialModel, PolyFitReport)> {
    let (x, y) = transition_matrix(train);
    let (model, mut report) = fit_least_squares(&x, &y, ridge)?;
    let scale = (TEMP_BOUNDS.1 - TEMP_BOUNDS.0).powi(2);
    for v in &mut report.train_mse {
        *v *= scale;
    }
    Ok((model, report))
}

fn transition_matrix(ds: &DayDataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (lo, hi) = TEMP_BOUNDS;
    ds.transitions()
        .into_iter()
        .map(|(s, opening, next)| {
            let x = model_inputs(&s, Action::nearest(opening)).to_vec();
            let y = next.iter().map(|t| (t - lo) / (hi - lo)).collect();
            (x, y)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_for_two_inputs() {
        assert_eq!(poly_features(&[2.0, 3.0]), vec![4.0, 6.0, 9.0, 2.0, 3.0, 1.0]);
        assert_eq!(n_poly_features(10), 66);
        assert_eq!(poly_features(&[0.0; 10]).len(), 66);
        let z = poly_features(&[0.0; 4]);
        assert_eq!(z.last(), Some(&1.0));
        assert!(z[..z.len() - 1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn structured_accessors_follow_layout() {
        let n = 4;
        let mut m = PolynomialModel::zeros(n, 1);
        for (k, c) in m.coefficients[0].iter_mut().enumerate() {
            *c = k as f64;
        }
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(m.theta(0, i, j), k as f64);
                assert_eq!(m.theta(0, j, i), k as f64);
                k += 1;
            }
        }
        for i in 0..n {
            assert_eq!(m.beta(0, i), (k + i) as f64);
        }
        assert_eq!(m.gamma(0), (k + n) as f64);
    }

    #[test]
    fn unfitted_and_mismatched() {
        let m = PolynomialModel {
            n_inputs: 3,
            coefficients: vec![],
        };
        assert!(matches!(m.predict_raw(&[0.0; 3]), Err(Error::Unfitted)));
        let m = PolynomialModel::zeros(3, 2);
        assert!(matches!(m.predict_raw(&[0.0; 2]), Err(Error::Shape { .. })));
    }
}
