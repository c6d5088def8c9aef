use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_softmax_rows, ActorCritic, PpoConfig};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Grads, Mode};
use crate::state::N_LEVELS;

/// Flat training samples. Advantages are final: normalized and weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            obs: self.obs.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: idx.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefs {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Loss value, diagnostics and gradients for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `policy_loss + value_coef * value_loss - entropy_coef * entropy`.
    pub loss: f64,
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    /// Mean squared error of the critic against the returns.
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub actor_grads: Grads,
    pub critic_grads: Grads,
}

/// Per-sample clipped surrogate: the smaller of the plain and the clipped
/// ratio times the advantage.
pub fn surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

pub fn ppo_loss(policy: &ActorCritic, s: &Samples, coefs: &LossCoefs) -> Result<LossOutput> {
    let n = s.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let x = s.obs.view();
    let actor_cache = policy.actor.forward::<crate::util::Rng>(&x, Mode::Eval);
    let critic_cache = policy.critic.forward::<crate::util::Rng>(&x, Mode::Eval);
    let logp = log_softmax_rows(&actor_cache.output.view());
    let p = logp.mapv(f64::exp);
    let inv_n = 1.0 / n as f64;

    let mut d_logits = Array2::zeros((n, N_LEVELS));
    let mut d_values = Array2::zeros((n, 1));
    let (mut surr_sum, mut v_sum, mut ent_sum, mut ratio_sum, mut clipped, mut kl_sum) =
        (0.0, 0.0, 0.0, 0.0, 0usize, 0.0);
    for i in 0..n {
        let a = s.actions[i];
        let log_ratio = logp[[i, a]] - s.old_log_probs[i];
        let ratio = log_ratio.exp();
        if !ratio.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                detail: format!("non-finite probability ratio at sample {i}"),
            });
        }
        let adv = s.advantages[i];
        let sur = surrogate(ratio, adv, coefs.clip);
        surr_sum += sur;
        ratio_sum += ratio;
        kl_sum += (ratio - 1.0) - log_ratio;
        if (ratio - 1.0).abs() > coefs.clip {
            clipped += 1;
        }
        // The plain branch carries the gradient unless the clipped one is
        // strictly smaller.
        let plain_active = ratio * adv <= ratio.clamp(1.0 - coefs.clip, 1.0 + coefs.clip) * adv;
        let h: f64 = -(0..N_LEVELS).map(|k| p[[i, k]] * logp[[i, k]]).sum::<f64>();
        ent_sum += h;
        for k in 0..N_LEVELS {
            let onehot = if k == a { 1.0 } else { 0.0 };
            let mut g = 0.0;
            if plain_active {
                g -= adv * ratio * (onehot - p[[i, k]]) * inv_n;
            }
            let dh = -p[[i, k]] * (logp[[i, k]] + h);
            g -= coefs.entropy_coef * dh * inv_n;
            d_logits[[i, k]] = g;
        }
        let v = critic_cache.output[[i, 0]];
        let err = v - s.returns[i];
        v_sum += err * err;
        d_values[[i, 0]] = 2.0 * coefs.value_coef * err * inv_n;
    }
    let policy_loss = -surr_sum * inv_n;
    let value_loss = v_sum * inv_n;
    let entropy = ent_sum * inv_n;
    Ok(LossOutput {
        loss: policy_loss + coefs.value_coef * value_loss - coefs.entropy_coef * entropy,
        policy_loss,
        value_loss,
        entropy,
        mean_ratio: ratio_sum * inv_n,
        clip_fraction: clipped as f64 * inv_n,
        approx_kl: kl_sum * inv_n,
        actor_grads: policy.actor.backward(&actor_cache, &d_logits),
        critic_grads: policy.critic.backward(&critic_cache, &d_values),
    })
}

/// AdamW state for both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(config: &PpoConfig) -> Self {
        let mut adam = Adam::adamw(config.learning_rate, config.weight_decay);
        adam.eps = config.adam_eps;
        Optimizers {
            actor: adam.clone(),
            critic: adam,
        }
    }
}

/// Minibatch means of the loss terms over one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Larger of the two pre-clipping gradient norms.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Runs `config.epochs` shuffled passes of minibatch AdamW steps.
pub fn ppo_update<R: Rng>(
    policy: &mut ActorCritic,
    opt: &mut Optimizers,
    samples: &Samples,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let coefs = config.coefs();
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch_size) {
            let mb = samples.select(chunk);
            let mut out = ppo_loss(policy, &mb, &coefs).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
                e => e,
            })?;
            // Each network is clipped on its own so large critic gradients
            // do not shrink the actor step.
            let norm = clip_grad_norm(&mut [&mut out.actor_grads], config.max_grad_norm)
                .max(clip_grad_norm(&mut [&mut out.critic_grads], config.max_grad_norm));
            if !out.loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!(
                        "loss {} (policy {}, value {}, entropy {}), gradient norm {norm}",
                        out.loss, out.policy_loss, out.value_loss, out.entropy
                    ),
                });
            }
            opt.actor.update(policy.actor.params_mut(), &out.actor_grads);
            opt.critic.update(policy.critic.params_mut(), &out.critic_grads);
            stats.policy_loss += out.policy_loss;
            stats.value_loss += out.value_loss;
            stats.entropy += out.entropy;
            stats.mean_ratio += out.mean_ratio;
            stats.clip_fraction += out.clip_fraction;
            stats.approx_kl += out.approx_kl;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    if stats.minibatches > 0 {
        let k = stats.minibatches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.mean_ratio /= k;
        stats.clip_fraction /= k;
        stats.approx_kl /= k;
        stats.grad_norm /= k;
    }
    Ok(stats)
}
