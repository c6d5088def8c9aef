//! Multi-objective reward: daily scores for temperature compliance,
//! ventilation cost, action smoothness and temperature stability, plus a
//! per-step shaping signal whose daily mean reproduces the daily scores.

use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::state::{GreenhouseState, STEPS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Compliant air temperature band (°C), inclusive.
    pub temp_range: (f64, f64),
    /// Hours (inclusive) during which ventilation is cheap.
    pub vent_hours: (u32, u32),
    pub vent_penalty_day: f64,
    pub vent_penalty_night: f64,
    /// Adjustment budget per day.
    pub max_changes: f64,
    /// Largest tolerated air temperature change between adjacent steps (°C).
    pub max_delta_t: f64,
    pub weights: RewardWeights,
    pub t_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub temp: f64,
    pub vent: f64,
    pub action: f64,
    pub change: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            temp: 0.7,
            vent: 0.2,
            action: 0.05,
            change: 0.05,
        }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            temp_range: (10.0, 30.0),
            vent_hours: (8, 17),
            vent_penalty_day: 0.5,
            vent_penalty_night: 2.0,
            max_changes: 48.0,
            max_delta_t: 5.0,
            weights: RewardWeights::default(),
            t_ref: 22.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let w = self.weights;
        if ((w.temp + w.vent + w.action + w.change) - 1.0).abs() > 1e-9 {
            errs.push("reward.weights must sum to 1".into());
        }
        if [w.temp, w.vent, w.action, w.change].iter().any(|v| *v < 0.0) {
            errs.push("reward.weights must be non-negative".into());
        }
        if self.temp_range.0 >= self.temp_range.1 {
            errs.push("reward.temp_range lower bound must be below upper".into());
        }
        if self.vent_penalty_day <= 0.0 || self.vent_penalty_night <= 0.0 {
            errs.push("reward.vent_penalty_* must be positive".into());
        }
        if self.max_changes <= 0.0 {
            errs.push("reward.max_changes must be positive".into());
        }
        if self.max_delta_t <= 0.0 {
            errs.push("reward.max_delta_t must be positive".into());
        }
        errs
    }

    pub fn in_vent_window(&self, hour: u32) -> bool {
        hour >= self.vent_hours.0 && hour <= self.vent_hours.1
    }

    pub fn temp_ok(&self, t: f64) -> bool {
        t >= self.temp_range.0 && t <= self.temp_range.1
    }
}

/// Daily component scores and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub temp: f64,
    pub vent: f64,
    pub action: f64,
    pub change: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_components(
        temp: f64,
        action: f64,
        change: f64,
        vent: f64,
        weights: &RewardWeights,
    ) -> Self {
        RewardBreakdown {
            temp,
            vent,
            action,
            change,
            total: weighted_total(temp, action, change, vent, weights),
        }
    }
}

pub fn weighted_total(temp: f64, action: f64, change: f64, vent: f64, w: &RewardWeights) -> f64 {
    w.temp * temp + w.vent * vent + w.action * action + w.change * change
}

fn ratio_score(count: usize, total: usize, what: &str) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument(format!("{what}: total step count is zero")));
    }
    if count > total {
        return Err(Error::InvalidArgument(format!(
            "{what}: count {count} exceeds total {total}"
        )));
    }
    Ok(100.0 * (1.0 - count as f64 / total as f64))
}

/// Share of steps with the air temperature inside the band, scaled to 100.
pub fn temp_reward(n_violations: usize, n_total: usize) -> Result<f64> {
    ratio_score(n_violations, n_total, "temp_reward")
}

/// Per-step ventilation score; unbounded below at large night openings.
pub fn vent_reward_step(alpha: f64, hour: u32, config: &RewardConfig) -> f64 {
    let penalty = if config.in_vent_window(hour) {
        config.vent_penalty_day
    } else {
        config.vent_penalty_night
    };
    100.0 - penalty * alpha.abs()
}

pub fn action_reward(n_changes: usize, config: &RewardConfig) -> f64 {
    100.0 * (1.0 - (n_changes as f64 / config.max_changes).min(1.0))
}

pub fn change_reward(n_excessive: usize, n_total: usize) -> Result<f64> {
    ratio_score(n_excessive, n_total, "change_reward")
}

/// Raw daily counts behind the four scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeCounts {
    pub violations: usize,
    pub changes: usize,
    pub excessive: usize,
    pub total: usize,
}

pub fn episode_counts(episode: &Episode, config: &RewardConfig) -> EpisodeCounts {
    let mut counts = EpisodeCounts {
        violations: 0,
        changes: 0,
        excessive: 0,
        total: episode.len(),
    };
    let mut prev_action = None;
    for tr in &episode.transitions {
        if !config.temp_ok(tr.next_state.t_air) {
            counts.violations += 1;
        }
        if (tr.next_state.t_air - tr.state.t_air).abs() > config.max_delta_t {
            counts.excessive += 1;
        }
        if prev_action.is_some_and(|p| p != tr.action) {
            counts.changes += 1;
        }
        prev_action = Some(tr.action);
    }
    counts
}

/// Scores a complete day.
pub fn episode_reward(episode: &Episode, config: &RewardConfig) -> Result<RewardBreakdown> {
    if !episode.is_complete() {
        return Err(Error::IncompleteEpisode {
            steps: episode.len(),
            expected: STEPS_PER_DAY,
        });
    }
    let counts = episode_counts(episode, config);
    let vent = episode
        .transitions
        .iter()
        .map(|tr| vent_reward_step(tr.action.opening(), tr.state.hour(), config))
        .sum::<f64>()
        / counts.total as f64;
    Ok(RewardBreakdown::from_components(
        temp_reward(counts.violations, counts.total)?,
        action_reward(counts.changes, config),
        change_reward(counts.excessive, counts.total)?,
        vent,
        &config.weights,
    ))
}

/// Per-step shaping terms. Each field is on the same 0–100 scale as the
/// daily scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub temp: f64,
    pub vent: f64,
    pub action: f64,
    pub change: f64,
    pub total: f64,
}

/// Shaping reward for the transition `prev_state -> state`. The ventilation
/// term uses the opening now in effect and the hour at which it was chosen.
/// An adjustment costs `100 * STEPS_PER_DAY / max_changes`, so the daily mean
/// of the action term equals the uncapped daily action score.
pub fn step_reward(
    prev_state: &GreenhouseState,
    state: &GreenhouseState,
    action_changed: bool,
    config: &RewardConfig,
) -> StepReward {
    let temp = if config.temp_ok(state.t_air) { 100.0 } else { 0.0 };
    let vent = vent_reward_step(state.alpha_vent, prev_state.hour(), config);
    let action = if action_changed {
        100.0 - 100.0 * STEPS_PER_DAY as f64 / config.max_changes
    } else {
        100.0
    };
    let change = if (state.t_air - prev_state.t_air).abs() <= config.max_delta_t {
        100.0
    } else {
        0.0
    };
    StepReward {
        temp,
        vent,
        action,
        change,
        total: weighted_total(temp, action, change, vent, &config.weights),
    }
}
