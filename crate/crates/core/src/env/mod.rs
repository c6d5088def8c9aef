//! Dynamics models and the day-long simulation environment.

mod mlp;
mod poly;
mod sim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mlp::{dynamics_samples, train_mlp, train_mlp_xy, MlpConfig, MlpModel, MlpTrainReport};
pub use poly::{fit_least_squares, fit_polynomial, n_poly_features, poly_features, PolyFitReport, PolynomialModel};
pub use sim::{Backend, SimEnv, StartSource, StepOutcome};

use crate::data::DayDataset;
use crate::error::{Error, Result};
use crate::state::{Action, GreenhouseState, Temps, N_FEATURES};

/// State features followed by the applied opening.
pub const N_INPUTS: usize = N_FEATURES + 1;

/// Model input vector: normalized state features and the opening as a
/// fraction.
pub fn model_inputs(state: &GreenhouseState, action: Action) -> [f64; N_INPUTS] {
    let mut x = [0.0; N_INPUTS];
    x[..N_FEATURES].copy_from_slice(&state.normalized_features());
    x[N_FEATURES] = action.opening() / 100.0;
    x
}

/// One-step temperature predictor.
pub trait Dynamics: Send + Sync {
    /// Next-step air, soil, water and wall temperatures (unclamped).
    fn predict_temps(&self, state: &GreenhouseState, action: Action) -> Result<Temps>;

    /// Full next state: predicted temperatures, the applied opening, advanced
    /// clock and running means, clamped to the admissible ranges.
    fn predict_state(&self, state: &GreenhouseState, action: Action) -> Result<GreenhouseState> {
        Ok(state.advance(self.predict_temps(state, action)?, action.opening()))
    }
}

/// A fitted environment model as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvModel {
    Poly(PolynomialModel),
    Mlp(MlpModel),
}

const MODEL_FORMAT: &str = "greenhouse-env-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: EnvModel,
}

impl EnvModel {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvModel::Poly(_) => "poly",
            EnvModel::Mlp(_) => "mlp",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Dynamics for EnvModel {
    fn predict_temps(&self, state: &GreenhouseState, action: Action) -> Result<Temps> {
        match self {
            EnvModel::Poly(m) => m.predict_temps(state, action),
            EnvModel::Mlp(m) => m.predict_temps(state, action),
        }
    }
}

/// One-step prediction MSE per temperature channel (°C²) over every
/// transition of `ds`.
pub fn one_step_mse(model: &dyn Dynamics, ds: &DayDataset) -> Result<[f64; 4]> {
    let transitions = ds.transitions();
    if transitions.is_empty() {
        return Err(Error::InvalidArgument("dataset has no transitions".into()));
    }
    let mut sum = [0.0; 4];
    for (s, opening, next) in &transitions {
        let pred = model.predict_temps(s, Action::nearest(*opening))?;
        for k in 0..4 {
            sum[k] += (pred[k] - next[k]).powi(2);
        }
    }
    Ok(sum.map(|v| v / transitions.len() as f64))
}
