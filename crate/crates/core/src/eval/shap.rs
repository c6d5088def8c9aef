use serde::{Deserialize, Serialize};

use crate::episode::ScoredEpisode;
use crate::error::{Error, Result};
use crate::state::{FEATURE_NAMES, N_FEATURES};

const MAX_EXACT_FEATURES: usize = 12;

pub fn column_means(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty background dataset".into()))?;
    let mut out = vec![0.0; first.len()];
    for r in rows {
        if r.len() != out.len() {
            return Err(Error::Shape {
                expected: out.len(),
                got: r.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Exact Shapley values of `model` at `x`, with features outside a
/// coalition set to the background column means.
pub fn shap_values(model: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Result<Vec<f64>> {
    shap_values_at(model, x, &column_means(background)?)
}

/// Exact Shapley values against a fixed baseline, by enumerating all
/// coalitions.
pub fn shap_values_at(model: &dyn Fn(&[f64]) -> f64, x: &[f64], base: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if base.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: base.len(),
        });
    }
    if n > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures(n));
    }
    let mut z = base.to_vec();
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            for i in 0..n {
                z[i] = if mask >> i & 1 == 1 { x[i] } else { base[i] };
            }
            model(&z)
        })
        .collect();
    let fact: Vec<f64> = (0..=n).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    })
    .collect();
    let weight = |s: usize| fact[s] * fact[n - s - 1] / fact[n];
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..1usize << n {
            if mask & bit == 0 {
                *p += weight(mask.count_ones() as usize) * (values[mask | bit] - values[mask]);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub n_trees: usize,
    /// Depth 1 gives stumps.
    pub depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_trees: 200,
            depth: 1,
            learning_rate: 0.1,
            min_leaf: 2,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.depth == 0 {
            errs.push("eval.shap.depth must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            errs.push("eval.shap.learning_rate must be in (0, 1]".into());
        }
        if self.min_leaf == 0 {
            errs.push("eval.shap.min_leaf must be >= 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Least-squares regression tree; samples with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn fit(x: &[Vec<f64>], y: &[f64], depth: usize, min_leaf: usize) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..y.len()).collect();
        tree.grow(x, y, idx, depth, min_leaf.max(1));
        tree
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[f64], idx: Vec<usize>, depth: usize, min_leaf: usize) -> usize {
        let id = self.nodes.len();
        let mean = if idx.is_empty() {
            0.0
        } else {
            idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
        };
        self.nodes.push(Node::Leaf(mean));
        if depth == 0 || idx.len() < 2 * min_leaf {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, &idx, min_leaf) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = self.grow(x, y, l, depth - 1, min_leaf);
        let right = self.grow(x, y, r, depth - 1, min_leaf);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Split with the largest squared-error reduction; first feature and lowest
/// threshold win ties.
fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let base = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[idx[0]].len() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += y[order[k]];
            let (lo, hi) = (x[order[k]][f], x[order[k + 1]][f]);
            let nl = k + 1;
            if lo == hi || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - base;
            if gain > 1e-12 * (1.0 + base.abs()) && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (lo + hi)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Gradient-boosted regression trees under squared loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpBoost {
    pub config: BoostConfig,
    pub base: f64,
    pub trees: Vec<RegressionTree>,
}

impl StumpBoost {
    pub fn fit(x: &[Vec<f64>], y: &[f64], config: &BoostConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Shape {
                expected: x.len(),
                got: y.len(),
            });
        }
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let mut trees = Vec::with_capacity(config.n_trees);
        for _ in 0..config.n_trees {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = RegressionTree::fit(x, &resid, config.depth, config.min_leaf);
            for (p, xi) in pred.iter_mut().zip(x) {
                *p += config.learning_rate * tree.predict(xi);
            }
            trees.push(tree);
        }
        Ok(StumpBoost {
            config: config.clone(),
            base,
            trees,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.config.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Mean of the raw state features over a day.
pub fn day_mean_features(ep: &ScoredEpisode) -> [f64; N_FEATURES] {
    let mut out = [0.0; N_FEATURES];
    for tr in &ep.episode.transitions {
        for (o, v) in out.iter_mut().zip(tr.state.features()) {
            *o += v;
        }
    }
    let n = ep.episode.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Scored outputs, followed in reports by an `average` panel.
pub const SHAP_COMPONENTS: [&str; 5] = ["final", "temp", "vent", "action", "change"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub component: String,
    pub rank: usize,
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapReport {
    pub rows: Vec<ShapRow>,
}

impl ShapReport {
    pub fn panel(&self, component: &str) -> Vec<&ShapRow> {
        self.rows.iter().filter(|r| r.component == component).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Serde(e.to_string());
        if self.rows.is_empty() {
            w.write_record(["component", "rank", "feature", "mean_abs_shap"]).map_err(err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn ranked(component: &str, values: &[f64]) -> Vec<ShapRow> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, f)| ShapRow {
            component: component.into(),
            rank: rank + 1,
            feature: FEATURE_NAMES[f].into(),
            mean_abs_shap: values[f],
        })
        .collect()
}

/// Mean |SHAP| of each day-mean feature on each daily score, explained
/// through a boosted-tree surrogate fitted to the given days. The last
/// panel averages the others.
pub fn shap_report(episodes: &[ScoredEpisode], config: &BoostConfig) -> Result<ShapReport> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("shap report needs at least one day".into()));
    }
    let x: Vec<Vec<f64>> = episodes.iter().map(|e| day_mean_features(e).to_vec()).collect();
    let base = column_means(&x)?;
    let mut report = ShapReport::default();
    let mut average = vec![0.0; N_FEATURES];
    for name in SHAP_COMPONENTS {
        let y: Vec<f64> = episodes
            .iter()
            .map(|e| match name {
                "final" => e.score.total,
                "temp" => e.score.temp,
                "vent" => e.score.vent,
                "action" => e.score.action,
                _ => e.score.change,
            })
            .collect();
        let model = StumpBoost::fit(&x, &y, config)?;
        let f = |z: &[f64]| model.predict(z);
        let mut mean_abs = vec![0.0; N_FEATURES];
        for xi in &x {
            for (m, p) in mean_abs.iter_mut().zip(shap_values_at(&f, xi, &base)?) {
                *m += p.abs() / x.len() as f64;
            }
        }
        for (a, m) in average.iter_mut().zip(&mean_abs) {
            *a += m / SHAP_COMPONENTS.len() as f64;
        }
        report.rows.extend(ranked(name, &mean_abs));
    }
    report.rows.extend(ranked("average", &average));
    Ok(report)
}
