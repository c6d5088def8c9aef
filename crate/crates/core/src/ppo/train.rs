use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ppo_update, sample_action, ActorCritic, EpisodeRollout, Optimizers, PpoConfig, RolloutBatch};
use crate::env::SimEnv;
use crate::episode::ScoredEpisode;
use crate::error::{Error, Result};
use crate::reward::{step_reward, RewardBreakdown, RewardConfig};
use crate::state::STEPS_PER_DAY;
use crate::util::{derive_seed, rng_from, MeanSd};

/// Extension points of the training loop.
pub trait TrainHooks {
    /// Runs after each collection round (1-based), before advantages are
    /// computed. Returns how many episodes it replaced.
    fn after_collect(
        &mut self,
        _round: usize,
        _batch: &mut RolloutBatch,
        _policy: &ActorCritic,
        _config: &PpoConfig,
        _reward: &RewardConfig,
    ) -> Result<usize> {
        Ok(0)
    }
}

/// Plain PPO.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub eval_mean: f64,
    pub eval_sd: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Episodes replaced by the hook since the previous row.
    pub replaced: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "step",
                "eval_mean",
                "eval_sd",
                "clip_fraction",
                "policy_loss",
                "value_loss",
                "entropy",
                "approx_kl",
                "replaced",
            ])
            .map_err(|e| Error::Serde(e.to_string()))?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn eval_means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval_mean).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Highest-scoring policy among the initial one and every evaluation.
    pub best: ActorCritic,
    pub best_eval: Option<f64>,
    pub final_policy: ActorCritic,
    /// Evaluation of the untrained policy; `None` when nothing was trained.
    pub initial_eval: Option<f64>,
    pub log: TrainLog,
    pub steps: usize,
    pub rounds: usize,
    pub stopped_early: bool,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub eval_mean: Option<f64>,
    pub policy: ActorCritic,
}

impl Checkpoint {
    pub fn new(policy: ActorCritic, step: usize, eval_mean: Option<f64>) -> Self {
        Checkpoint {
            format: "greenhouse-ppo-checkpoint".into(),
            version: CHECKPOINT_VERSION,
            step,
            eval_mean,
            policy,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if ck.format != "greenhouse-ppo-checkpoint" || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }
}

/// Day seeds shared by every evaluation of a run.
pub fn eval_day_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|r| derive_seed(seed, &[0xe7, r])).collect()
}

/// Greedy daily scores of `policy`, one per day seed.
pub fn evaluate_policy(env: &SimEnv, policy: &ActorCritic, day_seeds: &[u64]) -> Result<Vec<RewardBreakdown>> {
    day_seeds
        .par_iter()
        .map(|&seed| {
            let mut env = env.clone();
            let mut state = env.reset(seed);
            for _ in 0..STEPS_PER_DAY {
                state = env.step(policy.greedy(&state)?)?.state;
            }
            env.score()
        })
        .collect()
}

/// Samples `config.steps_per_env` steps per worker. Workers own their
/// environment copy and random stream, so the result does not depend on
/// how they are scheduled.
pub fn collect_rollouts(env: &SimEnv, policy: &ActorCritic, config: &PpoConfig, round: usize) -> Result<RolloutBatch> {
    let days = config.steps_per_env / STEPS_PER_DAY;
    let per_worker: Vec<Vec<EpisodeRollout>> = (0..config.n_envs)
        .into_par_iter()
        .map(|w| {
            let mut env = env.clone();
            let mut rng = rng_from(config.seed, &[0xc0, round as u64, w as u64]);
            (0..days)
                .map(|d| {
                    let day_seed = derive_seed(config.seed, &[0xda, round as u64, w as u64, d as u64]);
                    let mut state = env.reset(day_seed);
                    let mut ep = EpisodeRollout {
                        obs: Vec::with_capacity(STEPS_PER_DAY),
                        actions: Vec::with_capacity(STEPS_PER_DAY),
                        log_probs: Vec::with_capacity(STEPS_PER_DAY),
                        rewards: Vec::with_capacity(STEPS_PER_DAY),
                        values: Vec::with_capacity(STEPS_PER_DAY),
                        weights: vec![1.0; STEPS_PER_DAY],
                        score: RewardBreakdown::from_components(0.0, 0.0, 0.0, 0.0, &env.reward_config().weights),
                        expert: false,
                    };
                    for _ in 0..STEPS_PER_DAY {
                        let obs = policy.observe(&state);
                        let probs = policy.probs(&obs)?;
                        let (action, logp) = sample_action(&probs, &mut rng)?;
                        let out = env.step(action)?;
                        ep.obs.push(obs);
                        ep.actions.push(action);
                        ep.log_probs.push(logp);
                        ep.values.push(policy.value(&obs)?);
                        ep.rewards.push(out.reward.total * config.reward_scale);
                        state = out.state;
                    }
                    ep.score = env.score()?;
                    Ok(ep)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(RolloutBatch {
        episodes: per_worker.into_iter().flatten().collect(),
    })
}

/// Converts a recorded day into learner form, with behavior log-probs and
/// values taken from the current `policy`.
pub fn rollout_from_episode(
    ep: &ScoredEpisode,
    policy: &ActorCritic,
    reward: &RewardConfig,
    reward_scale: f64,
) -> Result<EpisodeRollout> {
    if !ep.episode.is_complete() {
        return Err(Error::IncompleteEpisode {
            steps: ep.episode.len(),
            expected: STEPS_PER_DAY,
        });
    }
    let n = ep.episode.len();
    let mut out = EpisodeRollout {
        obs: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        weights: vec![1.0; n],
        score: ep.score,
        expert: true,
    };
    let mut prev = None;
    for tr in &ep.episode.transitions {
        let obs = policy.observe(&tr.state);
        let log_probs = policy.log_probs(&obs)?;
        let changed = prev.is_some_and(|p| p != tr.action);
        out.obs.push(obs);
        out.actions.push(tr.action);
        out.log_probs.push(log_probs[tr.action.index()]);
        out.values.push(policy.value(&obs)?);
        out.rewards
            .push(step_reward(&tr.state, &tr.next_state, changed, reward).total * reward_scale);
        prev = Some(tr.action);
    }
    Ok(out)
}

/// Collect, hook, update, and evaluate every `eval_interval` steps. Stops
/// after `floor(total_steps / round)` rounds or when evaluations stop
/// improving for `patience` rows.
pub fn train(
    env: &SimEnv,
    policy: ActorCritic,
    config: &PpoConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let round_steps = config.round_steps();
    let rounds = config.total_steps / round_steps;
    let mut outcome = TrainOutcome {
        best: policy.clone(),
        best_eval: None,
        final_policy: policy.clone(),
        initial_eval: None,
        log: TrainLog::default(),
        steps: 0,
        rounds: 0,
        stopped_early: false,
    };
    if rounds == 0 {
        return Ok(outcome);
    }
    let seeds = eval_day_seeds(config.seed, config.eval_repeats);
    let mean_total = |p: &ActorCritic| -> Result<MeanSd> {
        let totals: Vec<f64> = evaluate_policy(env, p, &seeds)?.iter().map(|s| s.total).collect();
        Ok(MeanSd::of(&totals))
    };
    let initial = mean_total(&policy)?.mean;
    outcome.initial_eval = Some(initial);
    outcome.best_eval = Some(initial);

    let mut policy = policy;
    let mut opt = Optimizers::new(config);
    let mut rng = rng_from(config.seed, &[0x0b]);
    let mut since_best = 0;
    let mut replaced = 0;
    for round in 1..=rounds {
        let mut batch = collect_rollouts(env, &policy, config, round)?;
        replaced += hooks.after_collect(round, &mut batch, &policy, config, env.reward_config())?;
        let samples = batch.to_samples(config)?;
        let stats = ppo_update(&mut policy, &mut opt, &samples, config, &mut rng)?;
        outcome.steps += round_steps;
        outcome.rounds = round;
        if outcome.steps % config.eval_interval != 0 {
            continue;
        }
        let eval = mean_total(&policy)?;
        outcome.log.rows.push(LogRow {
            step: outcome.steps,
            eval_mean: eval.mean,
            eval_sd: eval.sd,
            clip_fraction: stats.clip_fraction,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            replaced,
        });
        replaced = 0;
        if eval.mean > outcome.best_eval.unwrap_or(f64::NEG_INFINITY) {
            outcome.best = policy.clone();
            outcome.best_eval = Some(eval.mean);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    outcome.final_policy = policy;
    Ok(outcome)
}
