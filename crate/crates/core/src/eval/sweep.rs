use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{run_controller, ControllerKind, EvalReport, ReportRow};
use crate::coupling::{CouplingHook, ExperiencePool, ReplacementConfig, RoundRecord, Strategy};
use crate::env::SimEnv;
use crate::error::{Error, Result};
use crate::ppo::{observe, train, ActorCritic, FeatureMask, PpoConfig, TrainLog, TrainOutcome};
use crate::state::{GreenhouseState, FEATURE_NAMES, N_FEATURES};
use crate::util::derive_seed;

/// Everything a training cell shares with its siblings.
#[derive(Clone)]
pub struct SweepSetup {
    pub env: SimEnv,
    pub ppo: PpoConfig,
    pub coupling: ReplacementConfig,
    pub pool: Arc<ExperiencePool>,
    /// Held-out days per seed used to score each trained policy.
    pub eval_days: usize,
}

/// Trains one agent. `seed` replaces the PPO seed and is mixed into the
/// coupling seed, so cells differ only through it.
pub fn train_policy(
    setup: &SweepSetup,
    coupling: &ReplacementConfig,
    seed: u64,
    mask: Option<FeatureMask>,
) -> Result<(TrainOutcome, Vec<RoundRecord>)> {
    let ppo = PpoConfig {
        seed,
        ..setup.ppo.clone()
    };
    let coupling = ReplacementConfig {
        seed: derive_seed(coupling.seed, &[seed]),
        ..coupling.clone()
    };
    let errs = coupling.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut policy = ActorCritic::new(&ppo.hidden, seed);
    policy.mask = mask;
    let mut hook = CouplingHook::new(setup.pool.clone(), coupling);
    let outcome = train(&setup.env, policy, &ppo, &mut hook)?;
    Ok((outcome, hook.records))
}

/// A coupling strategy with its threshold (dynamic) or replaced share in
/// percent (fixed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub value: f64,
}

impl StrategySpec {
    pub fn dynamic(threshold: f64) -> Self {
        StrategySpec {
            strategy: Strategy::Dynamic,
            value: threshold,
        }
    }

    pub fn fixed(percent: f64) -> Self {
        StrategySpec {
            strategy: Strategy::Fixed,
            value: percent,
        }
    }

    pub fn none() -> Self {
        StrategySpec {
            strategy: Strategy::None,
            value: 0.0,
        }
    }

    /// Dynamic thresholds 90 to 50, fixed shares 90 to 30, and none.
    pub fn standard() -> Vec<Self> {
        let mut v: Vec<_> = [90.0, 80.0, 70.0, 60.0, 50.0].into_iter().map(Self::dynamic).collect();
        v.extend([90.0, 70.0, 50.0, 30.0].into_iter().map(Self::fixed));
        v.push(Self::none());
        v
    }

    pub fn apply(&self, base: &ReplacementConfig) -> ReplacementConfig {
        let mut c = base.clone();
        c.strategy = self.strategy;
        match self.strategy {
            Strategy::Dynamic => c.threshold = self.value,
            Strategy::Fixed => c.ratio = self.value / 100.0,
            Strategy::None => {}
        }
        c
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::Dynamic => write!(f, "dynamic-{}", self.value),
            Strategy::Fixed => write!(f, "fixed-{}", self.value),
            Strategy::None => f.write_str("none"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown strategy `{s}` (expected dynamic-N, fixed-N or none)"));
        if s == "none" {
            return Ok(Self::none());
        }
        let (kind, value) = s.split_once('-').ok_or_else(bad)?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        match kind {
            "dynamic" => Ok(Self::dynamic(value)),
            "fixed" if (0.0..=100.0).contains(&value) => Ok(Self::fixed(value)),
            _ => Err(bad()),
        }
    }
}

/// Training logs alongside the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub report: EvalReport,
    /// (row label, seed, log) per trained agent.
    pub logs: Vec<(String, u64, TrainLog)>,
}

fn run_cells<F>(labels: Vec<String>, setup: &SweepSetup, seeds: &[u64], mut cell: F) -> Result<SweepOutput>
where
    F: FnMut(usize, u64) -> Result<TrainOutcome>,
{
    let mut out = SweepOutput {
        report: EvalReport::default(),
        logs: Vec::new(),
    };
    for (i, label) in labels.into_iter().enumerate() {
        let mut scores = Vec::new();
        for &seed in seeds {
            let outcome = cell(i, seed)?;
            let run = run_controller(&ControllerKind::Policy(outcome.best), &setup.env, setup.eval_days, &[seed])?;
            scores.extend(run.episodes.iter().map(|e| e.score));
            out.logs.push((label.clone(), seed, outcome.log));
        }
        out.report.rows.push(ReportRow::from_scores(label, &scores));
    }
    Ok(out)
}

/// Trains one agent per strategy and seed and scores each best policy on
/// held-out days.
pub fn strategy_sweep(strategies: &[StrategySpec], setup: &SweepSetup, seeds: &[u64]) -> Result<SweepOutput> {
    let labels = strategies.iter().map(|s| s.to_string()).collect();
    run_cells(labels, setup, seeds, |i, seed| {
        Ok(train_policy(setup, &strategies[i].apply(&setup.coupling), seed, None)?.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accessibility {
    Low,
    Medium,
    High,
}

/// A subset of state features visible to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    /// Indices into the state feature vector, in state order.
    pub features: Vec<usize>,
    pub accessibility: Accessibility,
}

impl FeatureGroup {
    fn of(name: &str, names: &[&str], accessibility: Accessibility) -> Self {
        FeatureGroup {
            name: name.into(),
            features: names
                .iter()
                .map(|n| FEATURE_NAMES.iter().position(|f| f == n).expect("known feature"))
                .collect(),
            accessibility,
        }
    }

    /// G1 (all ten features) down to G5 (air temperature, opening, hour).
    pub fn standard() -> Vec<Self> {
        use Accessibility::*;
        vec![
            Self::of("G1", &FEATURE_NAMES, Low),
            Self::of("G2", &["t_air", "alpha_vent", "hour", "month", "day", "t_bar", "alpha_bar"], Medium),
            Self::of("G3", &["t_air", "alpha_vent", "hour", "t_bar", "alpha_bar"], Medium),
            Self::of("G4", &["t_air", "alpha_vent", "hour", "month", "day"], High),
            Self::of("G5", &["t_air", "alpha_vent", "hour"], High),
        ]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::standard().into_iter().find(|g| g.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidArgument(format!("feature group {} is empty", self.name)));
        }
        let mut seen = [false; N_FEATURES];
        for &f in &self.features {
            if f >= N_FEATURES || seen[f] {
                return Err(Error::InvalidArgument(format!(
                    "feature group {} has an invalid or repeated index {f}",
                    self.name
                )));
            }
            seen[f] = true;
        }
        Ok(())
    }

    /// Mask pinning the other features to `fill`; `None` when every feature
    /// is visible.
    pub fn mask(&self, fill: &[f64; N_FEATURES]) -> Result<Option<FeatureMask>> {
        self.validate()?;
        if self.features.len() == N_FEATURES {
            return Ok(None);
        }
        let mut active = [false; N_FEATURES];
        for &f in &self.features {
            active[f] = true;
        }
        Ok(Some(FeatureMask { active, fill: *fill }))
    }
}

/// Mean policy input over a set of states.
pub fn normalized_means(states: &[GreenhouseState]) -> Result<[f64; N_FEATURES]> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("no states to average".into()));
    }
    let mut out = [0.0; N_FEATURES];
    for s in states {
        for (o, v) in out.iter_mut().zip(observe(s)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= states.len() as f64);
    Ok(out)
}

/// Retrains under `setup.coupling` with each group's features visible and
/// the rest pinned to `fill`.
pub fn feature_group_eval(
    groups: &[FeatureGroup],
    setup: &SweepSetup,
    fill: &[f64; N_FEATURES],
    seeds: &[u64],
) -> Result<SweepOutput> {
    let masks = groups.iter().map(|g| g.mask(fill)).collect::<Result<Vec<_>>>()?;
    let labels = groups.iter().map(|g| g.name.clone()).collect();
    run_cells(labels, setup, seeds, |i, seed| {
        Ok(train_policy(setup, &setup.coupling, seed, masks[i].clone())?.0)
    })
}
