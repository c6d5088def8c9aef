//! Baselines, closed-loop comparison, training sweeps and feature
//! attribution.

mod pid;
mod report;
mod shap;
mod sweep;

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;

pub use pid::{pid_step, PidConfig, PidMemory};
pub use report::{EvalReport, ReportFormat, ReportRow, REPORT_COLUMNS};
pub use shap::{
    column_means, day_mean_features, shap_report, shap_values, shap_values_at, BoostConfig, RegressionTree,
    ShapReport, ShapRow, StumpBoost, SHAP_COMPONENTS,
};
pub use sweep::{
    feature_group_eval, normalized_means, strategy_sweep, train_policy, Accessibility, FeatureGroup, StrategySpec,
    SweepOutput, SweepSetup,
};

use crate::env::{Dynamics, SimEnv};
use crate::episode::ScoredEpisode;
use crate::error::Result;
use crate::mpc::{MpcConfig, MpcController};
use crate::ppo::ActorCritic;
use crate::state::{Action, GreenhouseState, N_LEVELS, STEPS_PER_DAY};
use crate::util::{derive_seed, rng_from, Rng};

/// A closed-loop policy run one day at a time.
pub trait Controller {
    fn act(&mut self, state: &GreenhouseState) -> Result<Action>;
}

/// Controllers the comparison harness can build per day.
#[derive(Clone)]
pub enum ControllerKind {
    Pid(PidConfig),
    Mpc { model: Arc<dyn Dynamics>, config: MpcConfig },
    Policy(ActorCritic),
    Random,
    Hold(Action),
}

impl ControllerKind {
    pub fn name(&self) -> String {
        match self {
            ControllerKind::Pid(_) => "pid".into(),
            ControllerKind::Mpc { .. } => "mpc".into(),
            ControllerKind::Policy(_) => "ppo".into(),
            ControllerKind::Random => "random".into(),
            ControllerKind::Hold(a) => format!("hold-{}", a.level()),
        }
    }

    /// Fresh controller for one day; any randomness derives from `day_seed`.
    pub fn build(&self, day_seed: u64) -> Box<dyn Controller + '_> {
        match self {
            ControllerKind::Pid(c) => Box::new(PidController {
                config: c,
                memory: PidMemory::default(),
            }),
            ControllerKind::Mpc { model, config } => {
                Box::new(MpcDay(MpcController::new(model.clone(), config.clone(), day_seed)))
            }
            ControllerKind::Policy(p) => Box::new(GreedyPolicy(p)),
            ControllerKind::Random => Box::new(RandomController(rng_from(day_seed, &[0x4a]))),
            ControllerKind::Hold(a) => Box::new(Hold(*a)),
        }
    }
}

struct PidController<'a> {
    config: &'a PidConfig,
    memory: PidMemory,
}

impl Controller for PidController<'_> {
    fn act(&mut self, state: &GreenhouseState) -> Result<Action> {
        let (a, m) = pid_step(self.config, state, self.memory);
        self.memory = m;
        Ok(a)
    }
}

struct MpcDay(MpcController);

impl Controller for MpcDay {
    fn act(&mut self, state: &GreenhouseState) -> Result<Action> {
        self.0.act(state)
    }
}

struct GreedyPolicy<'a>(&'a ActorCritic);

impl Controller for GreedyPolicy<'_> {
    fn act(&mut self, state: &GreenhouseState) -> Result<Action> {
        self.0.greedy(state)
    }
}

struct RandomController(Rng);

impl Controller for RandomController {
    fn act(&mut self, _: &GreenhouseState) -> Result<Action> {
        Ok(Action::from_index(self.0.random_range(0..N_LEVELS)))
    }
}

struct Hold(Action);

impl Controller for Hold {
    fn act(&mut self, _: &GreenhouseState) -> Result<Action> {
        Ok(self.0)
    }
}

/// Day seeds of an evaluation: `n_days` per master seed, seed-major.
pub fn evaluation_days(n_days: usize, seeds: &[u64]) -> Vec<u64> {
    seeds
        .iter()
        .flat_map(|&s| (0..n_days as u64).map(move |d| derive_seed(s, &[0xe5, d])))
        .collect()
}

/// Closed-loop episodes and their summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRun {
    pub episodes: Vec<ScoredEpisode>,
    pub row: ReportRow,
}

/// Runs the controller for `n_days` days under each seed and scores every
/// day. Days run in parallel; the output is ordered and deterministic.
pub fn run_controller(kind: &ControllerKind, env: &SimEnv, n_days: usize, seeds: &[u64]) -> Result<ControllerRun> {
    let episodes = evaluation_days(n_days, seeds)
        .into_par_iter()
        .map(|day_seed| {
            let mut env = env.clone();
            let mut ctl = kind.build(day_seed);
            let mut state = env.reset(day_seed);
            for _ in 0..STEPS_PER_DAY {
                state = env.step(ctl.act(&state)?)?.state;
            }
            Ok(ScoredEpisode {
                score: env.score()?,
                episode: env.episode(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<_> = episodes.iter().map(|e| e.score).collect();
    Ok(ControllerRun {
        row: ReportRow::from_scores(kind.name(), &scores),
        episodes,
    })
}
