use serde::{Deserialize, Serialize};

use super::{Channel, RawRecord};
use crate::error::{Error, Result};
use crate::util::median;

/// Plausible closed interval per channel; anything outside is treated as a
/// sensor fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSpec {
    pub t_air: (f64, f64),
    pub t_water: (f64, f64),
    pub t_soil: (f64, f64),
    pub t_wall: (f64, f64),
    pub alpha_vent: (f64, f64),
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            t_air: (-5.0, 50.0),
            t_water: (0.0, 80.0),
            t_soil: (0.0, 50.0),
            t_wall: (0.0, 40.0),
            alpha_vent: (0.0, 100.0),
        }
    }
}

impl ThresholdSpec {
    pub fn bounds(&self, channel: Channel) -> (f64, f64) {
        match channel {
            Channel::TAir => self.t_air,
            Channel::TWater => self.t_water,
            Channel::TSoil => self.t_soil,
            Channel::TWall => self.t_wall,
            Channel::AlphaVent => self.alpha_vent,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        Channel::ALL
            .iter()
            .filter(|c| {
                let (lo, hi) = self.bounds(**c);
                !(lo < hi)
            })
            .map(|c| format!("data.thresholds.{}: lower bound must be below upper", c.name()))
            .collect()
    }
}

/// Marks out-of-range values as missing. Returns the filtered records and the
/// number of values flagged.
pub fn threshold_filter(records: &[RawRecord], spec: &ThresholdSpec) -> (Vec<RawRecord>, usize) {
    let mut flagged = 0;
    let out = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for c in Channel::ALL {
                let (lo, hi) = spec.bounds(c);
                if let Some(v) = r.values[c.index()] {
                    if !(v >= lo && v <= hi) {
                        r.values[c.index()] = None;
                        flagged += 1;
                    }
                }
            }
            r
        })
        .collect();
    (out, flagged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianConfig {
    pub window: usize,
    /// Replace a sample only when it deviates from the window median by more
    /// than this many window MADs.
    pub mad_multiple: f64,
    /// Deviations at or below this absolute size are never spikes.
    pub min_deviation: f64,
    /// When false every sample is replaced by its window median.
    pub spikes_only: bool,
}

impl Default for MedianConfig {
    fn default() -> Self {
        MedianConfig {
            window: 5,
            mad_multiple: 3.0,
            min_deviation: 0.5,
            spikes_only: true,
        }
    }
}

/// Sliding median filter. Edge samples use the largest symmetric window that
/// fits, so the first and last samples always pass through.
pub fn median_filter(series: &[f64], config: &MedianConfig) -> Result<Vec<f64>> {
    let w = config.window;
    if w < 3 || w % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and >= 3, got {w}"
        )));
    }
    if series.len() < w {
        return Err(Error::InvalidArgument(format!(
            "series of length {} shorter than window {w}",
            series.len()
        )));
    }
    let n = series.len();
    let mut buf = Vec::with_capacity(w);
    let mut dev = Vec::with_capacity(w);
    Ok((0..n)
        .map(|i| {
            let half = (w / 2).min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&series[i - half..=i + half]);
            let med = median(&mut buf);
            let x = series[i];
            if !config.spikes_only {
                return med;
            }
            dev.clear();
            dev.extend(series[i - half..=i + half].iter().map(|v| (v - med).abs()));
            let mad = median(&mut dev);
            let d = (x - med).abs();
            if d > config.mad_multiple * mad && d > config.min_deviation {
                med
            } else {
                x
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Spectral density of the random acceleration driving the level.
    pub process_noise: f64,
    pub measurement_noise: f64,
    /// Longest run of consecutive missing values accepted.
    pub max_gap: usize,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise: 0.01,
            measurement_noise: 0.01,
            max_gap: 12,
        }
    }
}

type V2 = [f64; 2];
type M2 = [[f64; 2]; 2];

fn mat_mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_add(a: &M2, b: &M2) -> M2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn mat_sub(a: &M2, b: &M2) -> M2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

fn mat_vec(a: &M2, v: &V2) -> V2 {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn inverse(a: &M2) -> M2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

pub(crate) const TRANSITION: M2 = [[1.0, 1.0], [0.0, 1.0]];
pub(crate) const PRIOR_VELOCITY_VAR: f64 = 1e4;

pub(crate) fn process_cov(q: f64) -> M2 {
    [[q / 3.0, q / 2.0], [q / 2.0, q]]
}

/// Smoothed level and its variance for every step.
pub(crate) fn kalman_smooth(series: &[Option<f64>], config: &KalmanConfig) -> Vec<(f64, f64)> {
    let n = series.len();
    let q = process_cov(config.process_noise);
    let r = config.measurement_noise;
    let f = TRANSITION;
    let ft = transpose(&f);

    let first = series.iter().flatten().next().copied().unwrap_or(0.0);
    let mut x: V2 = [first, 0.0];
    let mut p: M2 = [[r, 0.0], [0.0, PRIOR_VELOCITY_VAR]];
    let mut predicted = Vec::with_capacity(n);
    let mut filtered: Vec<(V2, M2)> = Vec::with_capacity(n);
    for (t, obs) in series.iter().enumerate() {
        if t > 0 {
            x = mat_vec(&f, &x);
            p = mat_add(&mat_mul(&mat_mul(&f, &p), &ft), &q);
        }
        predicted.push((x, p));
        if let Some(y) = obs {
            let s = p[0][0] + r;
            let k = [p[0][0] / s, p[1][0] / s];
            let innov = y - x[0];
            x = [x[0] + k[0] * innov, x[1] + k[1] * innov];
            let kh: M2 = [[k[0], 0.0], [k[1], 0.0]];
            p = mat_sub(&p, &mat_mul(&kh, &p));
        }
        filtered.push((x, p));
    }

    // Rauch-Tung-Striebel backward pass.
    let mut smoothed = vec![(0.0, 0.0); n];
    let (mut xs, mut ps) = filtered[n - 1];
    smoothed[n - 1] = (xs[0], ps[0][0]);
    for t in (0..n - 1).rev() {
        let (xf, pf) = filtered[t];
        let (xp, pp) = predicted[t + 1];
        let c = mat_mul(&mat_mul(&pf, &ft), &inverse(&pp));
        let dx = [xs[0] - xp[0], xs[1] - xp[1]];
        let corr = mat_vec(&c, &dx);
        xs = [xf[0] + corr[0], xf[1] + corr[1]];
        let dp = mat_sub(&ps, &pp);
        ps = mat_add(&pf, &mat_mul(&mat_mul(&c, &dp), &transpose(&c)));
        smoothed[t] = (xs[0], ps[0][0]);
    }
    smoothed
}

/// Fills missing values with a constant-velocity Kalman smoother. Observed
/// values are returned unchanged.
pub fn kalman_interpolate(series: &[Option<f64>], config: &KalmanConfig) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    if series[0].is_none() {
        return Err(Error::MissingBoundary("leading"));
    }
    if series[series.len() - 1].is_none() {
        return Err(Error::MissingBoundary("trailing"));
    }
    let mut run_start = None;
    for (i, v) in series.iter().enumerate() {
        match (v, run_start) {
            (None, None) => run_start = Some(i),
            (Some(_), Some(s)) => {
                if i - s > config.max_gap {
                    return Err(Error::GapTooLong {
                        start: s,
                        len: i - s,
                        cap: config.max_gap,
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if series.iter().all(Option::is_some) {
        return Ok(series.iter().map(|v| v.unwrap()).collect());
    }
    let smoothed = kalman_smooth(series, config);
    Ok(series
        .iter()
        .zip(smoothed)
        .map(|(obs, (level, _))| obs.unwrap_or(level))
        .collect())
}
