use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::net::{gaussian_entropy, squashed_log_prob, PolicyNet};
use super::TrainConfig;
use crate::env::{Observation, ACT_DIM};
use crate::error::{Error, Result};

/// Transitions from several environments laid end to end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Observation>,
    /// Pre-squash Gaussian samples.
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the state reached by each transition.
    pub next_values: Vec<f64>,
    /// Episode ended without bootstrap (ground contact).
    pub terminals: Vec<bool>,
    /// No advantage flows back across this step: episode end or the end of
    /// an environment's segment.
    pub cuts: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn extend(&mut self, other: RolloutBatch) {
        self.observations.extend(other.observations);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.next_values.extend(other.next_values);
        self.terminals.extend(other.terminals);
        self.cuts.extend(other.cuts);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    /// Fills returns from raw advantages, then normalizes advantages.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let adv = gae(&self.rewards, &self.values, &self.next_values, &self.terminals, &self.cuts, gamma, lambda);
        self.returns = adv.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        self.advantages = normalize(&adv);
    }
}

/// Raw generalized advantages `A_t = δ_t + γλ A_{t+1}` with
/// `δ_t = r_t + γ V(s_{t+1}) (1 − terminal_t) − V(s_t)`, reset at cuts.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminals: &[bool],
    cuts: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let bootstrap = if terminals[t] { 0.0 } else { gamma * next_values[t] };
        let delta = rewards[t] + bootstrap - values[t];
        let carry = if cuts[t] { 0.0 } else { gamma * lambda * next };
        adv[t] = delta + carry;
        next = adv[t];
    }
    adv
}

pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    x.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate, clipped-value and entropy loss on `idx` and its
/// gradient.
pub fn loss_and_grad(net: &PolicyNet, batch: &RolloutBatch, idx: &[usize], cfg: &TrainConfig) -> (LossStats, Vec<f64>) {
    let layout = *net.layout();
    let mut grad = vec![0.0; layout.len];
    let b = idx.len() as f64;
    let eps = cfg.clip_epsilon;
    let log_std = net.log_std();
    let mut stats = LossStats::default();
    let mut g_log_std = [0.0; ACT_DIM];

    for &i in idx {
        let (out, tape) = net.forward_tape(&batch.observations[i]);
        let u = &batch.actions[i];
        let a = batch.advantages[i];

        let log_ratio = squashed_log_prob(u, &out.mu, &log_std) - batch.log_probs[i];
        let ratio = libm::exp(log_ratio);
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let active = (a >= 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
        stats.policy_loss -= (ratio * a).min(clipped * a) / b;
        stats.approx_kl += (ratio - 1.0 - log_ratio) / b;
        if (ratio - 1.0).abs() > eps {
            stats.clip_fraction += 1.0 / b;
        }

        // d(-surrogate)/d log π
        let g_lp = if active { 0.0 } else { -a * ratio / b };
        let mut g_mu = [0.0; ACT_DIM];
        for k in 0..ACT_DIM {
            let inv_var = libm::exp(-2.0 * log_std[k]);
            let diff = u[k] - out.mu[k];
            g_mu[k] = g_lp * diff * inv_var;
            g_log_std[k] += g_lp * (diff * diff * inv_var - 1.0);
        }

        let (v, v_old, ret) = (out.value, batch.values[i], batch.returns[i]);
        let v_clipped = v_old + (v - v_old).clamp(-cfg.value_clip, cfg.value_clip);
        let (lu, lc) = ((v - ret) * (v - ret), (v_clipped - ret) * (v_clipped - ret));
        stats.value_loss += 0.5 * lu.max(lc) / b;
        let g_v = if lu >= lc || (v - v_old).abs() < cfg.value_clip {
            cfg.value_coeff * (v - ret) / b
        } else {
            0.0
        };

        net.backward(&tape, &g_mu, g_v, &mut grad);
    }

    stats.entropy = gaussian_entropy(&log_std);
    for k in 0..ACT_DIM {
        grad[layout.log_std + k] += g_log_std[k] - cfg.entropy_coeff;
    }
    stats.total = stats.policy_loss + cfg.value_coeff * stats.value_loss - cfg.entropy_coeff * stats.entropy;
    (stats, grad)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// Scales `grad` in place to global norm at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grad.iter().map(|g| g * g).sum());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UpdateStats {
    pub loss: LossStats,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Epochs of shuffled minibatch steps. On a non-finite loss or gradient the
/// network and optimizer are restored and an error returned.
pub fn ppo_update(
    net: &mut PolicyNet,
    opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let saved = (net.clone(), opt.clone());
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mb = cfg.minibatch_size.clamp(1, batch.len().max(1));
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs_per_batch {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let (loss, mut grad) = loss_and_grad(net, batch, chunk, cfg);
            let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
            if !loss.total.is_finite() || !norm.is_finite() {
                *net = saved.0;
                *opt = saved.1;
                return Err(Error::NonFiniteLoss);
            }
            opt.step(net.params_mut(), &grad);
            accumulate(&mut stats, &loss, norm);
        }
    }
    if stats.minibatches > 0 {
        let n = stats.minibatches as f64;
        let l = &mut stats.loss;
        for x in [&mut l.policy_loss, &mut l.value_loss, &mut l.entropy, &mut l.total, &mut l.approx_kl, &mut l.clip_fraction] {
            *x /= n;
        }
        stats.grad_norm /= n;
    }
    Ok(stats)
}

fn accumulate(stats: &mut UpdateStats, loss: &LossStats, norm: f64) {
    let l = &mut stats.loss;
    l.policy_loss += loss.policy_loss;
    l.value_loss += loss.value_loss;
    l.entropy += loss.entropy;
    l.total += loss.total;
    l.approx_kl += loss.approx_kl;
    l.clip_fraction += loss.clip_fraction;
    stats.grad_norm += norm;
    stats.minibatches += 1;
}
