//! Whole-run configuration, one section per module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::ReplacementConfig;
use crate::data::PreprocessConfig;
use crate::env::MlpConfig;
use crate::error::{Error, Result};
use crate::eval::{BoostConfig, FeatureGroup, PidConfig, StrategySpec};
use crate::mpc::MpcConfig;
use crate::ppo::PpoConfig;
use crate::reference::ClimateProfile;
use crate::reward::RewardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Climate preset: base, beijing or shandong.
    pub profile: String,
    pub days: usize,
    pub train_fraction: f64,
    pub preprocess: PreprocessConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            profile: "base".into(),
            days: 60,
            train_fraction: 0.8,
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn climate(&self) -> Result<ClimateProfile> {
        ClimateProfile::preset(&self.profile)
            .ok_or_else(|| Error::Config(vec![format!("data.profile `{}` is not a known preset", self.profile)]))
    }
}

/// Dynamics driving training and expert generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainBackend {
    /// A fitted model file.
    Learned,
    /// The ground-truth simulator.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvModelConfig {
    pub backend: TrainBackend,
    /// Ridge strength used when the polynomial design is rank deficient.
    pub ridge: f64,
    pub mlp: MlpConfig,
}

impl Default for EnvModelConfig {
    fn default() -> Self {
        EnvModelConfig {
            backend: TrainBackend::Learned,
            ridge: 1e-6,
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Days per seed.
    pub days: usize,
    pub seeds: Vec<u64>,
    pub pid: PidConfig,
    pub shap: BoostConfig,
    /// Days simulated to fit the attribution surrogate.
    pub shap_days: usize,
    pub strategies: Vec<String>,
    pub groups: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            days: 5,
            seeds: vec![1, 2, 3],
            pid: PidConfig::default(),
            shap: BoostConfig::default(),
            shap_days: 60,
            strategies: StrategySpec::standard().iter().map(|s| s.to_string()).collect(),
            groups: FeatureGroup::standard().into_iter().map(|g| g.name).collect(),
        }
    }
}

impl EvalConfig {
    pub fn strategy_specs(&self) -> Result<Vec<StrategySpec>> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }

    pub fn feature_groups(&self) -> Result<Vec<FeatureGroup>> {
        self.groups
            .iter()
            .map(|g| {
                FeatureGroup::by_name(g)
                    .ok_or_else(|| Error::Config(vec![format!("eval.groups: unknown group `{g}`")]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub data: DataConfig,
    pub env_model: EnvModelConfig,
    pub reward: RewardConfig,
    pub mpc: MpcConfig,
    pub ppo: PpoConfig,
    pub coupling: ReplacementConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 48,
            out: "runs/default".into(),
            data: DataConfig::default(),
            env_model: EnvModelConfig::default(),
            reward: RewardConfig::default(),
            mpc: MpcConfig::default(),
            ppo: PpoConfig::default(),
            coupling: ReplacementConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Dotted paths of keys in `given` that `reference` does not have.
fn unknown_keys(given: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, reference.get(k)) {
            (_, None) => out.push(format!("{path}: unknown key")),
            (toml::Value::Table(g), Some(toml::Value::Table(r))) => unknown_keys(g, r, &path, out),
            _ => {}
        }
    }
}

impl RunConfig {
    /// Parses TOML, reporting every unknown key and every invalid value.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let reference: toml::Table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Serde(e.to_string()))?;
        let mut errs = Vec::new();
        unknown_keys(&table, &reference, "", &mut errs);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().trim().to_string()]))?;
        config.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if ClimateProfile::preset(&self.data.profile).is_none() {
            errs.push(format!("data.profile `{}` is not a known preset", self.data.profile));
        }
        if self.data.days == 0 {
            errs.push("data.days must be >= 1".into());
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            errs.push("data.train_fraction must be in (0, 1)".into());
        }
        errs.extend(self.data.preprocess.thresholds.validate());
        if !(self.env_model.ridge >= 0.0) {
            errs.push("env_model.ridge must be >= 0".into());
        }
        errs.extend(self.env_model.mlp.validate());
        errs.extend(self.reward.validate());
        errs.extend(self.mpc.validate());
        errs.extend(self.ppo.validate());
        errs.extend(self.coupling.validate());
        errs.extend(self.eval.pid.validate());
        errs.extend(self.eval.shap.validate());
        if self.eval.days == 0 || self.eval.seeds.is_empty() {
            errs.push("eval.days and eval.seeds must be non-empty".into());
        }
        for s in &self.eval.strategies {
            if let Err(e) = s.parse::<StrategySpec>() {
                errs.push(format!("eval.strategies: {e}"));
            }
        }
        for g in &self.eval.groups {
            if FeatureGroup::by_name(g).is_none() {
                errs.push(format!("eval.groups: unknown group `{g}`"));
            }
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
