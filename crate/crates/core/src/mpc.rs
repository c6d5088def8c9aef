//! Receding-horizon ventilation MPC over a learned one-step model.
//!
//! The optimizer is a cross-entropy search over discrete opening sequences,
//! seeded with simple heuristics and the shifted previous plan, followed by
//! a coordinate-descent polish. Exhaustive enumeration is available for
//! short horizons as an oracle.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Dynamics, SimEnv};
use crate::episode::ScoredEpisode;
use crate::error::{Error, Result};
use crate::state::{Action, GreenhouseState, N_LEVELS, STEPS_PER_DAY};
use crate::util::{derive_seed, rng_from, Rng as ChaRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    /// Weight of the elite frequencies in the distribution update.
    pub smoothing: f64,
    pub max_iterations: usize,
    /// Stop once the best cost improves by less than this for `patience`
    /// consecutive iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 48,
            elite_fraction: 0.125,
            smoothing: 0.5,
            max_iterations: 100,
            tolerance: 1e-4,
            patience: 5,
            seed: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Weight on squared tracking error.
    pub w_temp: f64,
    /// Weight on squared opening change (percent).
    pub w_change: f64,
    /// Weight on the time-dependent opening penalty.
    pub w_vent: f64,
    pub t_ref: f64,
    pub phi_day: f64,
    pub phi_night: f64,
    /// Inclusive hour window where `phi_day` applies.
    pub day_hours: (u32, u32),
    pub cem: CemConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 24,
            w_temp: 1.0,
            w_change: 0.1,
            w_vent: 0.01,
            t_ref: 22.0,
            phi_day: 0.5,
            phi_night: 2.0,
            day_hours: (8, 17),
            cem: CemConfig::default(),
        }
    }
}

impl MpcConfig {
    pub fn phi(&self, hour: u32) -> f64 {
        if hour >= self.day_hours.0 && hour <= self.day_hours.1 {
            self.phi_day
        } else {
            self.phi_night
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.horizon == 0 {
            errs.push("mpc.horizon must be >= 1".into());
        }
        for (name, v) in [
            ("mpc.w_temp", self.w_temp),
            ("mpc.w_change", self.w_change),
            ("mpc.w_vent", self.w_vent),
            ("mpc.phi_day", self.phi_day),
            ("mpc.phi_night", self.phi_night),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("{name} must be >= 0"));
            }
        }
        let c = &self.cem;
        if c.population < 2 {
            errs.push("mpc.cem.population must be >= 2".into());
        }
        if !(c.elite_fraction > 0.0 && c.elite_fraction <= 1.0) {
            errs.push("mpc.cem.elite_fraction must be in (0, 1]".into());
        }
        if !(c.smoothing > 0.0 && c.smoothing <= 1.0) {
            errs.push("mpc.cem.smoothing must be in (0, 1]".into());
        }
        if !(c.tolerance > 0.0) {
            errs.push("mpc.cem.tolerance must be > 0".into());
        }
        if c.max_iterations == 0 {
            errs.push("mpc.cem.max_iterations must be >= 1".into());
        }
        errs
    }
}

/// Planned opening levels, one per horizon step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<Action>);

impl ControlSequence {
    pub fn constant(action: Action, len: usize) -> Self {
        ControlSequence(vec![action; len])
    }

    pub fn first(&self) -> Action {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Drops the first step and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut v = self.0[1..].to_vec();
        v.push(*self.0.last().unwrap());
        ControlSequence(v)
    }

    fn level_sum(&self) -> u32 {
        self.0.iter().map(|a| a.level() as u32).sum()
    }
}

/// Ordering used to pick among candidates: cost, then fewer total opening,
/// then lexicographically smaller levels.
fn candidate_cmp(a: (f64, &ControlSequence), b: (f64, &ControlSequence)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| a.1.level_sum().cmp(&b.1.level_sum()))
        .then_with(|| a.1 .0.cmp(&b.1 .0))
}

/// Objective of a candidate sequence rolled out under `model` from `state`.
pub fn mpc_cost(
    seq: &ControlSequence,
    state: &GreenhouseState,
    model: &dyn Dynamics,
    config: &MpcConfig,
) -> Result<f64> {
    if seq.len() != config.horizon {
        return Err(Error::Shape {
            expected: config.horizon,
            got: seq.len(),
        });
    }
    let mut s = *state;
    let mut prev_u = state.alpha_vent;
    let mut cost = 0.0;
    for &a in &seq.0 {
        let u = a.opening();
        let hour = s.hour();
        s = model.predict_state(&s, a)?;
        let dt = s.t_air - config.t_ref;
        let du = u - prev_u;
        cost += config.w_temp * dt * dt + config.w_change * du * du + config.w_vent * config.phi(hour) * u;
        prev_u = u;
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    /// Best cost after each CEM iteration (non-increasing).
    pub trace: Vec<f64>,
    /// False when the iteration budget ran out before the stopping rule.
    pub converged: bool,
    /// Cost of the best heuristic seed (all closed, hold current, warm start).
    pub heuristic_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub sequence: ControlSequence,
    pub cost: f64,
    pub diagnostics: MpcDiagnostics,
}

impl MpcSolution {
    pub fn action(&self) -> Action {
        self.sequence.first()
    }
}

struct Search<'a> {
    state: &'a GreenhouseState,
    model: &'a dyn Dynamics,
    config: &'a MpcConfig,
    evaluations: usize,
    best: Option<(f64, ControlSequence)>,
}

impl Search<'_> {
    fn eval(&mut self, seq: &ControlSequence) -> Result<f64> {
        self.evaluations += 1;
        let c = mpc_cost(seq, self.state, self.model, self.config)?;
        let better = match &self.best {
            None => true,
            Some((bc, bs)) => candidate_cmp((c, seq), (*bc, bs)) == Ordering::Less,
        };
        if better {
            self.best = Some((c, seq.clone()));
        }
        Ok(c)
    }

    fn best_cost(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }
}

fn sample_level<R: Rng>(probs: &[f64; N_LEVELS], rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_index(i);
        }
    }
    Action::from_index(N_LEVELS - 1)
}

/// Lowest-cost sequence found by the CEM search.
pub fn solve_mpc<R: Rng>(
    state: &GreenhouseState,
    model: &dyn Dynamics,
    config: &MpcConfig,
    warm_start: Option<&ControlSequence>,
    rng: &mut R,
) -> Result<MpcSolution> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let h = config.horizon;
    let cem = &config.cem;
    let mut search = Search {
        state,
        model,
        config,
        evaluations: 0,
        best: None,
    };

    let hold = Action::nearest(state.alpha_vent);
    let mut seeds = vec![ControlSequence::constant(Action::CLOSED, h), ControlSequence::constant(hold, h)];
    if let Some(w) = warm_start.filter(|w| w.len() == h) {
        seeds.push(w.clone());
    }
    let mut elites = Vec::with_capacity(seeds.len());
    for s in seeds {
        elites.push((search.eval(&s)?, s));
    }
    let heuristic_cost = search.best_cost();

    // Start from a flat distribution tilted toward the incumbent.
    let incumbent = search.best.as_ref().unwrap().1.clone();
    let mut probs: Vec<[f64; N_LEVELS]> = incumbent
        .0
        .iter()
        .map(|a| {
            let mut p = [0.75 / N_LEVELS as f64; N_LEVELS];
            p[a.index()] += 0.25;
            p
        })
        .collect();
    let n_elite = ((cem.population as f64 * cem.elite_fraction).ceil() as usize).clamp(1, cem.population);
    let mut trace = Vec::new();
    let mut stall = 0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cem.max_iterations {
        iterations += 1;
        let before = search.best_cost();
        let mut pop = elites.clone();
        while pop.len() < cem.population + elites.len() {
            let seq = ControlSequence(probs.iter().map(|p| sample_level(p, rng)).collect());
            let c = search.eval(&seq)?;
            pop.push((c, seq));
        }
        pop.sort_by(|a, b| candidate_cmp((a.0, &a.1), (b.0, &b.1)));
        pop.dedup_by(|a, b| a.1 == b.1);
        pop.truncate(n_elite);
        elites = pop;
        for (k, p) in probs.iter_mut().enumerate() {
            let mut freq = [0.0; N_LEVELS];
            for (_, s) in &elites {
                freq[s.0[k].index()] += 1.0 / elites.len() as f64;
            }
            for (pi, fi) in p.iter_mut().zip(freq) {
                *pi = cem.smoothing * fi + (1.0 - cem.smoothing) * *pi;
            }
        }
        let best = search.best_cost();
        trace.push(best);
        if before - best < cem.tolerance {
            stall += 1;
        } else {
            stall = 0;
        }
        let degenerate = probs.iter().all(|p| p.iter().any(|&v| v > 0.999));
        if stall >= cem.patience || degenerate {
            converged = true;
            break;
        }
    }

    polish(&mut search)?;
    if let Some(last) = trace.last_mut() {
        *last = search.best_cost();
    }
    let (cost, sequence) = search.best.take().unwrap();
    Ok(MpcSolution {
        sequence,
        cost,
        diagnostics: MpcDiagnostics {
            iterations,
            evaluations: search.evaluations,
            trace,
            converged,
            heuristic_cost,
        },
    })
}

/// Local search until no move improves: change one position, set a suffix
/// to one level, or shift a suffix by one level.
fn polish(search: &mut Search<'_>) -> Result<()> {
    loop {
        let (start_cost, start) = search.best.clone().unwrap();
        for k in 0..start.len() {
            let current = search.best.clone().unwrap().1;
            for a in Action::all() {
                if a == current.0[k] {
                    continue;
                }
                let mut cand = current.clone();
                cand.0[k] = a;
                search.eval(&cand)?;
            }
        }
        for k in 0..start.len() {
            let current = search.best.clone().unwrap().1;
            for a in Action::all() {
                let mut cand = current.clone();
                cand.0[k..].fill(a);
                if cand != current {
                    search.eval(&cand)?;
                }
            }
            for d in [-1i32, 1] {
                let shifted: Option<Vec<Action>> = current.0[k..]
                    .iter()
                    .map(|a| {
                        let l = a.index() as i32 + d;
                        (0..N_LEVELS as i32).contains(&l).then(|| Action::from_index(l as usize))
                    })
                    .collect();
                if let Some(tail) = shifted {
                    let mut cand = current.clone();
                    cand.0[k..].copy_from_slice(&tail);
                    search.eval(&cand)?;
                }
            }
        }
        let (c, s) = search.best.as_ref().unwrap();
        if *s == start || *c >= start_cost {
            return Ok(());
        }
    }
}

/// Global optimum over all `11^H` sequences; `H <= 4`.
pub fn brute_force_mpc(
    state: &GreenhouseState,
    model: &dyn Dynamics,
    config: &MpcConfig,
) -> Result<(ControlSequence, f64)> {
    let h = config.horizon;
    if h > 4 {
        return Err(Error::HorizonTooLarge(h));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let total = N_LEVELS.pow(h as u32);
    let mut best: Option<(f64, ControlSequence)> = None;
    for code in 0..total {
        let mut levels = vec![Action::CLOSED; h];
        let mut c = code;
        for k in (0..h).rev() {
            levels[k] = Action::from_index(c % N_LEVELS);
            c /= N_LEVELS;
        }
        let seq = ControlSequence(levels);
        let cost = mpc_cost(&seq, state, model, config)?;
        let better = match &best {
            None => true,
            Some((bc, bs)) => candidate_cmp((cost, &seq), (*bc, bs)) == Ordering::Less,
        };
        if better {
            best = Some((cost, seq));
        }
    }
    let (cost, seq) = best.unwrap();
    Ok((seq, cost))
}

/// Closed-loop MPC policy that warm-starts each solve from its last plan.
#[derive(Clone)]
pub struct MpcController {
    pub model: Arc<dyn Dynamics>,
    pub config: MpcConfig,
    plan: Option<ControlSequence>,
    rng: ChaRng,
}

impl MpcController {
    pub fn new(model: Arc<dyn Dynamics>, config: MpcConfig, seed: u64) -> Self {
        MpcController {
            model,
            rng: rng_from(derive_seed(config.cem.seed, &[seed]), &[0x3bc]),
            config,
            plan: None,
        }
    }

    pub fn reset(&mut self) {
        self.plan = None;
    }

    pub fn act(&mut self, state: &GreenhouseState) -> Result<Action> {
        let warm = self.plan.as_ref().map(ControlSequence::shifted);
        let sol = solve_mpc(state, self.model.as_ref(), &self.config, warm.as_ref(), &mut self.rng)?;
        let a = sol.action();
        self.plan = Some(sol.sequence);
        Ok(a)
    }
}

/// Runs the MPC in closed loop on `env` for `n_days` independent days and
/// scores every day. Days run in parallel; output is ordered by day and
/// deterministic under `seed`.
pub fn generate_expert_episodes(
    env: &SimEnv,
    model: Arc<dyn Dynamics>,
    config: &MpcConfig,
    n_days: usize,
    seed: u64,
) -> Result<Vec<ScoredEpisode>> {
    (0..n_days)
        .into_par_iter()
        .map(|day| {
            let day_seed = derive_seed(seed, &[0xe4, day as u64]);
            let mut env = env.clone();
            let mut ctl = MpcController::new(model.clone(), config.clone(), day_seed);
            let mut state = env.reset(day_seed);
            for _ in 0..STEPS_PER_DAY {
                let a = ctl.act(&state)?;
                state = env.step(a)?.state;
            }
            Ok(ScoredEpisode {
                score: env.score()?,
                episode: env.episode(),
            })
        })
        .collect()
}
