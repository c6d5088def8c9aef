use std::sync::Arc;

use chrono::Duration;
use rand::Rng;

use super::Dynamics;
use crate::data::LoggingPolicy;
use crate::episode::{Episode, Transition};
use crate::error::{Error, Result};
use crate::reference::{DayWeather, ReferenceModel};
use crate::reward::{episode_reward, step_reward, RewardBreakdown, RewardConfig, StepReward};
use crate::state::{Action, GreenhouseState, Temps, STEPS_PER_DAY};
use crate::util::rng_from;

const RESET_TAG: u64 = 0x7e5e7;
const WARMUP_DAYS: i64 = 2;

/// Dynamics driving a [`SimEnv`].
#[derive(Clone)]
pub enum Backend {
    /// Ground-truth thermal network with weather drawn per episode.
    Reference(ReferenceModel),
    /// A fitted one-step model.
    Learned(Arc<dyn Dynamics>),
}

/// Where episode start states come from.
#[derive(Debug, Clone)]
pub enum StartSource {
    /// Simulate the reference model under a thermostat for two days before a
    /// date drawn within `span_days` of the profile start date; the episode
    /// starts at midnight.
    Warmup { model: ReferenceModel, span_days: u32 },
    /// Pick one of the given day-start states.
    States(Arc<Vec<GreenhouseState>>),
}

impl StartSource {
    pub fn warmup(model: ReferenceModel) -> Self {
        StartSource::Warmup { model, span_days: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: GreenhouseState,
    pub reward: StepReward,
    pub done: bool,
}

/// One-day episodic environment. Each instance is single-owner state.
#[derive(Clone)]
pub struct SimEnv {
    backend: Backend,
    start: StartSource,
    reward: RewardConfig,
    state: GreenhouseState,
    steps: usize,
    prev_action: Option<Action>,
    weather: Option<DayWeather>,
    transitions: Vec<Transition>,
}

impl SimEnv {
    pub fn new(backend: Backend, start: StartSource, reward: RewardConfig) -> Self {
        let mut env = SimEnv {
            backend,
            start,
            reward,
            state: GreenhouseState::day_start([15.0; 4], 0.0, chrono::NaiveDate::default()),
            steps: 0,
            prev_action: None,
            weather: None,
            transitions: Vec::with_capacity(STEPS_PER_DAY),
        };
        env.reset(0);
        env
    }

    /// Reference dynamics with warm-up starts from the same model.
    pub fn reference(model: ReferenceModel, reward: RewardConfig) -> Self {
        let start = StartSource::warmup(model.clone());
        SimEnv::new(Backend::Reference(model), start, reward)
    }

    pub fn state(&self) -> &GreenhouseState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.steps == STEPS_PER_DAY
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Starts a new day. The start state, and for the reference backend the
    /// weather, are a deterministic function of `day_seed`.
    pub fn reset(&mut self, day_seed: u64) -> GreenhouseState {
        let mut rng = rng_from(day_seed, &[RESET_TAG]);
        self.state = match &self.start {
            StartSource::States(states) if !states.is_empty() => states[rng.random_range(0..states.len())],
            StartSource::States(_) => GreenhouseState::day_start([15.0; 4], 0.0, chrono::NaiveDate::default()),
            StartSource::Warmup { model, span_days } => {
                let offset = rng.random_range(0..(*span_days).max(1)) as i64;
                warmup_start(model, model.profile.start_date + Duration::days(offset), day_seed)
            }
        };
        self.weather = match &self.backend {
            Backend::Reference(model) => Some(DayWeather::draw(&model.profile, self.state.date, day_seed)),
            Backend::Learned(_) => None,
        };
        self.steps = 0;
        self.prev_action = None;
        self.transitions.clear();
        self.state
    }

    /// Temperatures the backend predicts for `action` from the current state.
    pub fn predict_temps(&self, action: Action) -> Result<Temps> {
        let temps = match &self.backend {
            Backend::Reference(model) => {
                let weather = self.weather.as_ref().expect("reset draws weather");
                let forcing = model.forcing(weather, self.state.step_of_day as usize);
                model.step(self.state.temps(), action.opening(), forcing)
            }
            Backend::Learned(model) => model.predict_temps(&self.state, action)?,
        };
        if temps.iter().any(|t| t.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "dynamics produced NaN at step {}",
                self.steps
            )));
        }
        Ok(temps)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        let temps = self.predict_temps(action)?;
        let next = self.state.advance(temps, action.opening());
        let changed = self.prev_action.is_some_and(|p| p != action);
        let reward = step_reward(&self.state, &next, changed, &self.reward);
        self.transitions.push(Transition {
            state: self.state,
            action,
            next_state: next,
        });
        self.state = next;
        self.prev_action = Some(action);
        self.steps += 1;
        Ok(StepOutcome {
            state: next,
            reward,
            done: self.is_done(),
        })
    }

    /// Transitions recorded since the last reset.
    pub fn episode(&self) -> Episode {
        Episode {
            transitions: self.transitions.clone(),
        }
    }

    /// Daily score of the finished episode.
    pub fn score(&self) -> Result<RewardBreakdown> {
        episode_reward(&self.episode(), &self.reward)
    }
}

fn warmup_start(model: &ReferenceModel, date: chrono::NaiveDate, seed: u64) -> GreenhouseState {
    let mut policy = LoggingPolicy::thermostat();
    let mut temps: Temps = [12.0, 20.0, 16.0, 16.0];
    let mut opening = 0.0;
    for d in -WARMUP_DAYS..0 {
        let weather = DayWeather::draw(&model.profile, date + Duration::days(d), seed);
        for step in 0..STEPS_PER_DAY {
            let action = policy.act(temps[0], step);
            opening = action.opening();
            temps = model.step(temps, opening, model.forcing(&weather, step));
        }
    }
    GreenhouseState::day_start(temps, opening, date)
}
