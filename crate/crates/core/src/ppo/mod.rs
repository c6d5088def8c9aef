//! Clipped-surrogate PPO with a softmax actor over the opening levels and a
//! scalar critic.

mod loss;
mod train;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::state::{Action, GreenhouseState, N_FEATURES, N_LEVELS, STEPS_PER_DAY};
use crate::util::rng_from;

pub use loss::{ppo_loss, ppo_update, surrogate, LossCoefs, LossOutput, Optimizers, Samples, UpdateStats};
pub use train::{
    collect_rollouts, evaluate_policy, eval_day_seeds, rollout_from_episode, train, Checkpoint, LogRow,
    NoHooks, TrainHooks, TrainLog, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub n_envs: usize,
    /// Steps each worker collects per round; a multiple of one day.
    pub steps_per_env: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Multiplies the per-step reward before it reaches the learner.
    pub reward_scale: f64,
    pub total_steps: usize,
    /// Steps between evaluations; a multiple of `n_envs * steps_per_env`.
    pub eval_interval: usize,
    /// Days per evaluation, each run greedily.
    pub eval_repeats: usize,
    /// Evaluations without a new best before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: vec![64, 32],
            n_envs: 4,
            steps_per_env: STEPS_PER_DAY,
            epochs: 4,
            minibatch_size: 576,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            adam_eps: 1e-5,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            reward_scale: 0.001,
            total_steps: 2_000_000,
            eval_interval: 11_520,
            eval_repeats: 5,
            patience: 50,
            seed: 48,
        }
    }
}

impl PpoConfig {
    /// Network sizes and sampling budget of the full-scale setup.
    pub fn full_scale() -> Self {
        PpoConfig {
            hidden: vec![512, 256, 256, 128, 64, 32, 16],
            n_envs: 20,
            steps_per_env: 2880,
            minibatch_size: 28_800,
            total_steps: 40_000_000,
            eval_interval: 57_600,
            patience: 200,
            ..Self::default()
        }
    }

    pub fn round_steps(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden.contains(&0) {
            errs.push("ppo.hidden sizes must be positive".into());
        }
        if self.n_envs == 0 {
            errs.push("ppo.n_envs must be >= 1".into());
        }
        if self.steps_per_env == 0 || self.steps_per_env % STEPS_PER_DAY != 0 {
            errs.push(format!("ppo.steps_per_env must be a positive multiple of {STEPS_PER_DAY}"));
        }
        if self.epochs == 0 {
            errs.push("ppo.epochs must be >= 1".into());
        }
        if self.minibatch_size == 0 {
            errs.push("ppo.minibatch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            errs.push("ppo.learning_rate must be >= 0".into());
        }
        if !(self.weight_decay >= 0.0) {
            errs.push("ppo.weight_decay must be >= 0".into());
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            errs.push("ppo.clip must be in (0, 1)".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push("ppo.gamma must be in (0, 1]".into());
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            errs.push("ppo.lambda must be in (0, 1]".into());
        }
        for (name, v) in [
            ("ppo.value_coef", self.value_coef),
            ("ppo.entropy_coef", self.entropy_coef),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("{name} must be >= 0"));
            }
        }
        if !(self.adam_eps > 0.0) {
            errs.push("ppo.adam_eps must be > 0".into());
        }
        if !(self.max_grad_norm > 0.0) {
            errs.push("ppo.max_grad_norm must be > 0".into());
        }
        if !(self.reward_scale > 0.0) {
            errs.push("ppo.reward_scale must be > 0".into());
        }
        let round = self.round_steps();
        if self.eval_interval == 0 || round == 0 || self.eval_interval % round != 0 {
            errs.push(format!(
                "ppo.eval_interval must be a positive multiple of n_envs * steps_per_env = {round}"
            ));
        }
        if self.eval_repeats == 0 {
            errs.push("ppo.eval_repeats must be >= 1".into());
        }
        errs
    }
}

/// Policy input: the state features scaled by their admissible ranges.
pub fn observe(state: &GreenhouseState) -> [f64; N_FEATURES] {
    state.normalized_features()
}

/// Hides state features from a policy by pinning them to fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub active: [bool; N_FEATURES],
    /// Normalized value used for every inactive feature.
    pub fill: [f64; N_FEATURES],
}

impl FeatureMask {
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn apply(&self, obs: &mut [f64; N_FEATURES]) {
        for i in 0..N_FEATURES {
            if !self.active[i] {
                obs[i] = self.fill[i];
            }
        }
    }
}

/// Actor and critic networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<FeatureMask>,
}

impl ActorCritic {
    /// Fresh networks; the actor starts close to uniform.
    pub fn new(hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng_from(seed, &[0xac]);
        let sizes = |out: usize| {
            let mut s = vec![N_FEATURES];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        ActorCritic {
            actor: Mlp::new(&sizes(N_LEVELS), 0.01, &mut rng),
            critic: Mlp::new(&sizes(1), 1.0, &mut rng),
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: FeatureMask) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Network input for `state`, with masked features pinned.
    pub fn observe(&self, state: &GreenhouseState) -> [f64; N_FEATURES] {
        let mut obs = observe(state);
        if let Some(m) = &self.mask {
            m.apply(&mut obs);
        }
        obs
    }

    pub fn probs(&self, obs: &[f64]) -> Result<[f64; N_LEVELS]> {
        actor_forward(&self.actor, obs)
    }

    /// Log-probabilities, finite even where the probability underflows.
    pub fn log_probs(&self, obs: &[f64]) -> Result<[f64; N_LEVELS]> {
        check_finite(obs)?;
        let z = self.actor.predict_one(obs)?;
        if z.len() != N_LEVELS {
            return Err(Error::Shape {
                expected: N_LEVELS,
                got: z.len(),
            });
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let mut out = [0.0; N_LEVELS];
        for (o, v) in out.iter_mut().zip(&z) {
            *o = v - lse;
        }
        Ok(out)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        check_finite(obs)?;
        Ok(self.critic.predict_one(obs)?[0])
    }

    /// Most probable level, lowest level on ties.
    pub fn greedy(&self, state: &GreenhouseState) -> Result<Action> {
        let p = self.probs(&self.observe(state))?;
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        Ok(Action::from_index(best))
    }
}

fn check_finite(obs: &[f64]) -> Result<()> {
    if obs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("non-finite policy input".into()))
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row -= lse;
    }
    out
}

/// Action distribution for one observation.
pub fn actor_forward(net: &Mlp, obs: &[f64]) -> Result<[f64; N_LEVELS]> {
    check_finite(obs)?;
    let z = net.predict_one(obs)?;
    if z.len() != N_LEVELS {
        return Err(Error::Shape {
            expected: N_LEVELS,
            got: z.len(),
        });
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_LEVELS];
    let mut s = 0.0;
    for (pi, zi) in p.iter_mut().zip(&z) {
        *pi = (zi - m).exp();
        s += *pi;
    }
    for pi in &mut p {
        *pi /= s;
    }
    Ok(p)
}

/// Draws a level and returns it with its log-probability.
pub fn sample_action<R: Rng>(probs: &[f64], rng: &mut R) -> Result<(Action, f64)> {
    let sum: f64 = probs.iter().sum();
    if probs.len() != N_LEVELS || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-6
    {
        return Err(Error::InvalidArgument(format!("degenerate action probabilities {probs:?}")));
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        pick = Some(i);
        acc += p;
        if u < acc {
            break;
        }
    }
    let i = pick.expect("a positive entry exists");
    Ok((Action::from_index(i), probs[i].ln()))
}

/// Generalized advantage estimates and returns over a flat buffer.
/// `dones[t]` marks the last step of an episode, after which the bootstrap
/// value is zero; the buffer must end on an episode boundary.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for len in [values.len(), dones.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    if n > 0 && !dones[n - 1] {
        return Err(Error::InvalidArgument("buffer must end with a finished episode".into()));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// One day of experience in learner form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRollout {
    pub obs: Vec<[f64; N_FEATURES]>,
    pub actions: Vec<Action>,
    /// Log-probabilities under the behavior policy.
    pub log_probs: Vec<f64>,
    /// Scaled per-step rewards.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-step multipliers on the advantage.
    pub weights: Vec<f64>,
    pub score: crate::reward::RewardBreakdown,
    /// True for episodes injected from an expert pool.
    pub expert: bool,
}

impl EpisodeRollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        for len in [
            self.obs.len(),
            self.log_probs.len(),
            self.rewards.len(),
            self.values.len(),
            self.weights.len(),
        ] {
            if len != n {
                return Err(Error::Shape { expected: n, got: len });
            }
        }
        Ok(())
    }
}

/// Episodes collected in one round, ordered by worker then day.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub episodes: Vec<EpisodeRollout>,
}

impl RolloutBatch {
    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRollout::len).sum()
    }

    /// Flattens the batch, computes advantages, optionally normalizes them
    /// over the batch, then applies the per-step weights.
    pub fn to_samples(&self, config: &PpoConfig) -> Result<Samples> {
        let n = self.n_steps();
        let mut obs = Array2::zeros((n, N_FEATURES));
        let mut actions = Vec::with_capacity(n);
        let mut old_log_probs = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut row = 0;
        for ep in &self.episodes {
            ep.check()?;
            for t in 0..ep.len() {
                for (k, v) in ep.obs[t].iter().enumerate() {
                    obs[[row, k]] = *v;
                }
                row += 1;
                actions.push(ep.actions[t].index());
                old_log_probs.push(ep.log_probs[t]);
                rewards.push(ep.rewards[t]);
                values.push(ep.values[t]);
                dones.push(t + 1 == ep.len());
                weights.push(ep.weights[t]);
            }
        }
        let (mut advantages, returns) = compute_gae(&rewards, &values, &dones, config.gamma, config.lambda)?;
        if config.normalize_advantages && n > 1 {
            let mean = advantages.iter().sum::<f64>() / n as f64;
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt().max(1e-8);
            for a in &mut advantages {
                *a = (*a - mean) / sd;
            }
        }
        for (a, w) in advantages.iter_mut().zip(&weights) {
            *a *= w;
        }
        Ok(Samples {
            obs,
            actions,
            old_log_probs,
            advantages,
            returns,
        })
    }
}
