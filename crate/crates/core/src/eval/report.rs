use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{weighted_total, RewardBreakdown, RewardWeights};
use crate::util::MeanSd;

/// One method's scores as mean and sample SD over evaluation days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub temp_reward_mean: f64,
    pub temp_reward_sd: f64,
    pub action_reward_mean: f64,
    pub action_reward_sd: f64,
    pub change_reward_mean: f64,
    pub change_reward_sd: f64,
    pub vent_reward_mean: f64,
    pub vent_reward_sd: f64,
    pub final_reward_mean: f64,
    pub final_reward_sd: f64,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "method",
    "temp_reward_mean",
    "temp_reward_sd",
    "action_reward_mean",
    "action_reward_sd",
    "change_reward_mean",
    "change_reward_sd",
    "vent_reward_mean",
    "vent_reward_sd",
    "final_reward_mean",
    "final_reward_sd",
];

impl ReportRow {
    pub fn from_scores(method: impl Into<String>, scores: &[RewardBreakdown]) -> Self {
        let col = |f: fn(&RewardBreakdown) -> f64| MeanSd::of(&scores.iter().map(f).collect::<Vec<_>>());
        let (t, a, c, v, f) = (
            col(|s| s.temp),
            col(|s| s.action),
            col(|s| s.change),
            col(|s| s.vent),
            col(|s| s.total),
        );
        ReportRow {
            method: method.into(),
            temp_reward_mean: t.mean,
            temp_reward_sd: t.sd,
            action_reward_mean: a.mean,
            action_reward_sd: a.sd,
            change_reward_mean: c.mean,
            change_reward_sd: c.sd,
            vent_reward_mean: v.mean,
            vent_reward_sd: v.sd,
            final_reward_mean: f.mean,
            final_reward_sd: f.sd,
        }
    }

    pub fn final_reward(&self) -> MeanSd {
        MeanSd {
            mean: self.final_reward_mean,
            sd: self.final_reward_sd,
        }
    }

    /// Distance between the final mean and the weighted component means.
    pub fn identity_gap(&self, weights: &RewardWeights) -> f64 {
        let w = weighted_total(
            self.temp_reward_mean,
            self.action_reward_mean,
            self.change_reward_mean,
            self.vent_reward_mean,
            weights,
        );
        (w - self.final_reward_mean).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Format implied by a file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Table of per-method results.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Fails if any row's final mean departs from the weighted component
    /// means by more than `tol`.
    pub fn check_identity(&self, weights: &RewardWeights, tol: f64) -> Result<()> {
        for r in &self.rows {
            let gap = r.identity_gap(weights);
            if !(gap <= tol) {
                return Err(Error::InvalidArgument(format!(
                    "row `{}` final reward is off the weighted components by {gap:e}",
                    r.method
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Serde(e.to_string());
        if self.rows.is_empty() {
            w.write_record(REPORT_COLUMNS).map_err(err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::Serde(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != REPORT_COLUMNS {
            return Err(Error::Serde(format!("unexpected report columns: {}", header.join(","))));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()
            .map_err(|e| Error::Serde(e.to_string()))?;
        Ok(EvalReport { rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path, format: ReportFormat) -> Result<()> {
        let text = match format {
            ReportFormat::Csv => self.to_csv()?,
            ReportFormat::Json => self.to_json()?,
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, format: ReportFormat) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            ReportFormat::Csv => Self::from_csv(&text),
            ReportFormat::Json => Self::from_json(&text),
        }
    }
}
