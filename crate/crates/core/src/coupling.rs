//! Teacher-student coupling: a pool of expert days and the rules that swap
//! them into PPO rollout batches.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{load_episodes, save_episodes, ScoredEpisode};
use crate::error::{Error, Result};
use crate::ppo::{rollout_from_episode, ActorCritic, PpoConfig, RolloutBatch, TrainHooks};
use crate::reward::RewardConfig;
use crate::state::STEPS_PER_DAY;
use crate::util::{rng_from, Rng as ChaRng};

pub const DEFAULT_POOL_CAPACITY: usize = 10_000;
pub const DEFAULT_WEIGHT_CLIP: (f64, f64) = (0.99, 1.01);

/// An expert day and, when known, the log-probabilities its behavior policy
/// gave to each action.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub episode: Arc<ScoredEpisode>,
    pub behavior_log_probs: Option<Vec<f64>>,
}

/// Bounded FIFO store of complete expert days. Entries are shared, so
/// cloning a pool or re-adding a day copies no transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperiencePool {
    capacity: usize,
    entries: VecDeque<PoolEntry>,
}

impl ExperiencePool {
    pub fn new(capacity: usize) -> Self {
        ExperiencePool {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&PoolEntry> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter()
    }

    /// Appends a deterministic-expert day, evicting the oldest entry when full.
    pub fn add(&mut self, episode: impl Into<Arc<ScoredEpisode>>) -> Result<()> {
        self.add_entry(PoolEntry {
            episode: episode.into(),
            behavior_log_probs: None,
        })
    }

    pub fn add_entry(&mut self, entry: PoolEntry) -> Result<()> {
        let n = entry.episode.episode.len();
        if n != STEPS_PER_DAY {
            return Err(Error::IncompleteEpisode {
                steps: n,
                expected: STEPS_PER_DAY,
            });
        }
        if let Some(lp) = &entry.behavior_log_probs {
            if lp.len() != n {
                return Err(Error::Shape { expected: n, got: lp.len() });
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn from_episodes(episodes: impl IntoIterator<Item = ScoredEpisode>, capacity: usize) -> Result<Self> {
        let mut pool = ExperiencePool::new(capacity);
        for e in episodes {
            pool.add(e)?;
        }
        Ok(pool)
    }

    pub fn episodes(&self) -> Vec<ScoredEpisode> {
        self.entries.iter().map(|e| (*e.episode).clone()).collect()
    }

    /// Stored in the shared episode file format.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_episodes(path, &self.episodes())
    }

    pub fn load(path: &Path, capacity: usize) -> Result<Self> {
        Self::from_episodes(load_episodes(path)?, capacity)
    }
}

/// Clipped importance weight `p_new / p_old` in the default band.
pub fn importance_weight(p_new: f64, p_old: f64) -> Result<f64> {
    importance_weight_in(p_new, p_old, DEFAULT_WEIGHT_CLIP)
}

pub fn importance_weight_in(p_new: f64, p_old: f64, band: (f64, f64)) -> Result<f64> {
    if !(p_old > 0.0) || !p_new.is_finite() || p_new < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "importance weight needs p_old > 0 and finite p_new >= 0, got {p_new} / {p_old}"
        )));
    }
    Ok((p_new / p_old).max(band.0).min(band.1))
}

/// [`importance_weight_in`] from log-probabilities, so that probabilities
/// too small to represent still give a defined ratio.
pub fn importance_weight_log(logp_new: f64, logp_old: f64, band: (f64, f64)) -> Result<f64> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "importance weight needs finite log-probabilities, got {logp_new} / {logp_old}"
        )));
    }
    Ok((logp_new - logp_old).exp().max(band.0).min(band.1))
}

/// One batch slot to overwrite with a pool entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub slot: usize,
    pub pool_index: usize,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("replacement ratio {ratio} outside [0, 1]")))
    }
}

/// Picks `floor(ratio * k)` distinct slots uniformly, each paired with a
/// uniformly drawn pool entry.
pub fn plan_pretrain<R: Rng>(k: usize, pool_len: usize, ratio: f64, rng: &mut R) -> Result<Vec<Replacement>> {
    check_ratio(ratio)?;
    let count = ((ratio * k as f64) + 1e-9).floor() as usize;
    let count = count.min(k);
    if count == 0 {
        return Ok(Vec::new());
    }
    if pool_len == 0 {
        return Err(Error::EmptyPool);
    }
    let mut slots = sample(rng, k, count).into_vec();
    slots.sort_unstable();
    Ok(slots
        .into_iter()
        .map(|slot| Replacement {
            slot,
            pool_index: rng.random_range(0..pool_len),
        })
        .collect())
}

/// Every episode scoring strictly below `threshold` gets a uniformly drawn
/// pool entry.
pub fn plan_dynamic<R: Rng>(scores: &[f64], pool_len: usize, threshold: f64, rng: &mut R) -> Result<Vec<Replacement>> {
    let slots: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] < threshold).collect();
    if slots.is_empty() {
        return Ok(Vec::new());
    }
    if pool_len == 0 {
        return Err(Error::EmptyPool);
    }
    Ok(slots
        .into_iter()
        .map(|slot| Replacement {
            slot,
            pool_index: rng.random_range(0..pool_len),
        })
        .collect())
}

fn apply(batch: &[ScoredEpisode], pool: &ExperiencePool, plan: &[Replacement]) -> Vec<ScoredEpisode> {
    let mut out = batch.to_vec();
    for r in plan {
        out[r.slot] = (*pool.entries[r.pool_index].episode).clone();
    }
    out
}

/// Replaces a fixed share of the batch with pool days.
pub fn pretrain_replace<R: Rng>(
    batch: &[ScoredEpisode],
    pool: &ExperiencePool,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<ScoredEpisode>> {
    let plan = plan_pretrain(batch.len(), pool.len(), ratio, rng)?;
    Ok(apply(batch, pool, &plan))
}

/// Replaces every day whose total is below `threshold`; returns the mixed
/// batch and the number replaced.
pub fn dynamic_replace<R: Rng>(
    batch: &[ScoredEpisode],
    pool: &ExperiencePool,
    threshold: f64,
    rng: &mut R,
) -> Result<(Vec<ScoredEpisode>, usize)> {
    let scores: Vec<f64> = batch.iter().map(|e| e.score.total).collect();
    let plan = plan_dynamic(&scores, pool.len(), threshold, rng)?;
    Ok((apply(batch, pool, &plan), plan.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Pre-training rounds at `pretrain_ratio`, then threshold replacement.
    Dynamic,
    /// `ratio` of every batch, every round.
    Fixed,
    /// Plain PPO.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplacementConfig {
    pub strategy: Strategy,
    pub threshold: f64,
    /// Share replaced each round by the fixed strategy.
    pub ratio: f64,
    pub pretrain_rounds: usize,
    pub pretrain_ratio: f64,
    pub weight_clip: (f64, f64),
    pub pool_capacity: usize,
    /// Expert days generated for the pool.
    pub expert_days: usize,
    pub seed: u64,
}

impl Default for ReplacementConfig {
    fn default() -> Self {
        ReplacementConfig {
            strategy: Strategy::Dynamic,
            threshold: 90.0,
            ratio: 0.9,
            pretrain_rounds: 2,
            pretrain_ratio: 0.9,
            weight_clip: DEFAULT_WEIGHT_CLIP,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            expert_days: 16,
            seed: 48,
        }
    }
}

impl ReplacementConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.ratio) {
            errs.push("coupling.ratio must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.pretrain_ratio) {
            errs.push("coupling.pretrain_ratio must be in [0, 1]".into());
        }
        let (lo, hi) = self.weight_clip;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            errs.push("coupling.weight_clip must satisfy 0 < lo <= 1 <= hi".into());
        }
        if self.pool_capacity == 0 {
            errs.push("coupling.pool_capacity must be >= 1".into());
        }
        if !self.threshold.is_finite() {
            errs.push("coupling.threshold must be finite".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Dynamic,
    Fixed,
    Off,
}

/// What the coupling did in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    pub replaced: usize,
    /// Collected episodes scoring below the threshold, before replacement.
    pub below_threshold: usize,
    /// Smallest and largest importance weight applied, if any.
    pub weight_range: Option<(f64, f64)>,
}

/// Swaps pool days into a freshly collected batch. Replaced steps take the
/// current policy's probabilities as their behavior probabilities, and
/// their advantages are scaled by the clipped importance weight.
#[allow(clippy::too_many_arguments)]
pub fn coupled_collect<R: Rng>(
    round: usize,
    batch: &mut RolloutBatch,
    pool: &ExperiencePool,
    config: &ReplacementConfig,
    policy: &ActorCritic,
    ppo: &PpoConfig,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<RoundRecord> {
    let scores: Vec<f64> = batch.episodes.iter().map(|e| e.score.total).collect();
    let below_threshold = scores.iter().filter(|&&s| s < config.threshold).count();
    let (phase, plan) = match config.strategy {
        Strategy::None => (Phase::Off, Vec::new()),
        Strategy::Fixed => (Phase::Fixed, plan_pretrain(scores.len(), pool.len(), config.ratio, rng)?),
        Strategy::Dynamic if round <= config.pretrain_rounds => (
            Phase::Pretrain,
            plan_pretrain(scores.len(), pool.len(), config.pretrain_ratio, rng)?,
        ),
        Strategy::Dynamic => (Phase::Dynamic, plan_dynamic(&scores, pool.len(), config.threshold, rng)?),
    };
    let mut weight_range: Option<(f64, f64)> = None;
    for r in &plan {
        let entry = &pool.entries[r.pool_index];
        let mut ep = rollout_from_episode(&entry.episode, policy, reward, ppo.reward_scale)?;
        for t in 0..ep.len() {
            let logp_new = ep.log_probs[t];
            let logp_old = match &entry.behavior_log_probs {
                Some(lp) => lp[t],
                None => logp_new,
            };
            let w = importance_weight_log(logp_new, logp_old, config.weight_clip)?;
            ep.weights[t] = w;
            if let Some(lp) = &entry.behavior_log_probs {
                ep.log_probs[t] = lp[t];
            }
            weight_range = Some(match weight_range {
                None => (w, w),
                Some((lo, hi)) => (lo.min(w), hi.max(w)),
            });
        }
        batch.episodes[r.slot] = ep;
    }
    Ok(RoundRecord {
        round,
        phase,
        replaced: plan.len(),
        below_threshold,
        weight_range,
    })
}

/// Training hook applying [`coupled_collect`] with its own random stream.
pub struct CouplingHook {
    pub pool: Arc<ExperiencePool>,
    pub config: ReplacementConfig,
    pub records: Vec<RoundRecord>,
    rng: ChaRng,
}

impl CouplingHook {
    pub fn new(pool: Arc<ExperiencePool>, config: ReplacementConfig) -> Self {
        CouplingHook {
            rng: rng_from(config.seed, &[0x7ea]),
            pool,
            config,
            records: Vec::new(),
        }
    }
}

impl TrainHooks for CouplingHook {
    fn after_collect(
        &mut self,
        round: usize,
        batch: &mut RolloutBatch,
        policy: &ActorCritic,
        config: &PpoConfig,
        reward: &RewardConfig,
    ) -> Result<usize> {
        let rec = coupled_collect(round, batch, &self.pool, &self.config, policy, config, reward, &mut self.rng)?;
        let n = rec.replaced;
        self.records.push(rec);
        Ok(n)
    }
}
