//! Proximal policy optimization for the capture environment.

mod net;
mod update;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use net::{
    gaussian_entropy, gaussian_log_prob, log_tanh_jacobian, normalize_observation, sample_pre_squash, squash,
    squashed_log_prob, Layout, NetOutput, PolicyNet,
};
pub use update::{clip_grad_norm, gae, loss_and_grad, normalize, ppo_update, Adam, LossStats, RolloutBatch, UpdateStats};

use crate::dynamics::MavState;
use crate::env::{CaptureEnv, EpisodeConfig, LaunchEvent, Observation, Physics, Termination, ACT_DIM};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    /// Half-width of the value-prediction clip around the rollout value.
    pub value_clip: f64,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero over `iterations`.
    pub lr_anneal: bool,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub max_grad_norm: f64,
    /// Multiplies environment rewards before advantage estimation.
    pub reward_scale: f64,
    /// Added to the (unscaled) reward of a step whose launch captures.
    pub capture_bonus: f64,
    /// Per-step bonus `1/(1 + gap)`, `gap` the distance from `d` to the
    /// launch window `[d_min, d_max]`.
    pub approach_shaping: f64,
    /// Per-step bonus `1/((1 + gap)(1 + d_b/σ_d))`.
    pub aim_shaping: f64,
    /// Bootstrap the value after a launch instead of ending the return.
    pub bootstrap_launch: bool,
    pub hidden: usize,
    pub init_log_std: f64,
    pub iterations: usize,
    /// Deterministic evaluation every this many iterations (0 disables).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            value_clip: 1.0,
            learning_rate: 3e-4,
            lr_anneal: true,
            epochs_per_batch: 10,
            minibatch_size: 256,
            num_envs: 16,
            steps_per_env: 128,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 0.1,
            capture_bonus: 50.0,
            approach_shaping: 1.0,
            aim_shaping: 6.0,
            bootstrap_launch: true,
            hidden: 64,
            init_log_std: -1.0,
            iterations: 900,
            eval_interval: 50,
            eval_episodes: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.gamma > 0.0 && self.gamma <= 1.0, "ppo.gamma", "must lie in (0, 1]")?;
        ensure((0.0..=1.0).contains(&self.gae_lambda), "ppo.gae_lambda", "must lie in [0, 1]")?;
        ensure(self.clip_epsilon > 0.0, "ppo.clip_epsilon", "must be positive")?;
        ensure(self.value_clip > 0.0, "ppo.value_clip", "must be positive")?;
        ensure(self.learning_rate > 0.0, "ppo.learning_rate", "must be positive")?;
        ensure(self.minibatch_size > 0, "ppo.minibatch_size", "must be positive")?;
        ensure(self.num_envs > 0 && self.steps_per_env > 0, "ppo.num_envs", "batch must be non-empty")?;
        ensure(self.max_grad_norm > 0.0, "ppo.max_grad_norm", "must be positive")?;
        ensure(self.reward_scale > 0.0, "ppo.reward_scale", "must be positive")?;
        ensure(self.capture_bonus >= 0.0, "ppo.capture_bonus", "must be non-negative")?;
        ensure(self.approach_shaping >= 0.0, "ppo.approach_shaping", "must be non-negative")?;
        ensure(self.aim_shaping >= 0.0, "ppo.aim_shaping", "must be non-negative")?;
        ensure(self.hidden > 0, "ppo.hidden", "must be positive")
    }
}

/// Runs independent jobs, possibly in parallel. Results come back in input
/// order.
pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync,
    {
        items.iter_mut().map(f).collect()
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub reward: f64,
    pub steps: usize,
    pub termination: Termination,
    pub success: bool,
}

/// One environment with its own action-noise stream and episode counter.
#[derive(Debug, Clone)]
pub struct EnvWorker {
    env: CaptureEnv,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u64,
    obs: Observation,
    episode_reward: f64,
}

impl EnvWorker {
    pub fn new(env: CaptureEnv, seed: u64) -> Self {
        let mut w = Self {
            env,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX)),
            seed,
            episodes: 0,
            obs: [0.0; crate::env::OBS_DIM],
            episode_reward: 0.0,
        };
        w.reset();
        w
    }

    fn reset(&mut self) {
        self.obs = self.env.reset(mix_seed(self.seed, self.episodes));
        self.episodes += 1;
        self.episode_reward = 0.0;
    }

    /// Samples `steps` transitions; the last one always carries a cut.
    pub fn collect(&mut self, net: &PolicyNet, steps: usize, cfg: &TrainConfig) -> Result<(RolloutBatch, Vec<EpisodeEnd>)> {
        let env_cfg = self.env.config();
        let (d_min, d_max, sigma_d) = (env_cfg.d_min, env_cfg.d_max, env_cfg.sigma_d);
        let shaping = |d: f64, d_b: f64| {
            let near = 1.0 / (1.0 + (d - d_max).max(0.0) + (d_min - d).max(0.0));
            near * (cfg.approach_shaping + cfg.aim_shaping / (1.0 + d_b / sigma_d))
        };
        let mut b = RolloutBatch::default();
        let mut ends = Vec::new();
        for t in 0..steps {
            let out = net.forward(&self.obs)?;
            let u = sample_pre_squash(&out, &mut self.rng);
            let r = self.env.step_normalized(&squash(&u))?;
            self.episode_reward += r.reward.r_total;

            b.observations.push(self.obs);
            b.actions.push(u);
            b.log_probs.push(squashed_log_prob(&u, &out.mu, &out.log_std));
            let terminal = match r.info.termination {
                Some(Termination::Ground) => true,
                Some(Termination::Launched) => !cfg.bootstrap_launch,
                _ => false,
            };
            let captured = r.info.launch.as_ref().is_some_and(|l| l.success);
            let bonus = if captured { cfg.capture_bonus } else { 0.0 };
            let extra = bonus + shaping(r.reward.d, r.reward.d_b);
            b.rewards.push((r.reward.r_total + extra) * cfg.reward_scale);
            b.values.push(out.value);

            let next_value = if terminal {
                0.0
            } else if r.done || t + 1 == steps {
                net.forward(&r.observation)?.value
            } else {
                f64::NAN
            };
            b.next_values.push(next_value);
            b.terminals.push(terminal);
            b.cuts.push(r.done || t + 1 == steps);

            if let Some(termination) = r.info.termination {
                ends.push(EpisodeEnd {
                    reward: self.episode_reward,
                    steps: r.info.step,
                    termination,
                    success: captured,
                });
                self.reset();
            } else {
                self.obs = r.observation;
            }
        }
        // interior next values are the following step's value
        for t in 0..steps.saturating_sub(1) {
            if b.next_values[t].is_nan() {
                b.next_values[t] = b.values[t + 1];
            }
        }
        Ok((b, ends))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationLog {
    pub iteration: usize,
    pub env_steps: u64,
    /// Mean undiscounted reward of episodes finished during collection.
    pub mean_reward: f64,
    pub episodes: usize,
    /// Success rate of the deterministic evaluation, when one ran.
    pub eval_success: Option<f64>,
    pub eval_mean_reward: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    env_cfg: EpisodeConfig,
    physics: Physics,
    net: PolicyNet,
    opt: Adam,
    workers: Vec<EnvWorker>,
    rng: ChaCha8Rng,
    iteration: usize,
    env_steps: u64,
}

/// Pre-squash mean producing hover thrust and zero rates.
pub fn hover_bias(physics: &Physics) -> [f64; ACT_DIM] {
    let a = 2.0 * physics.mav.hover_thrust() / physics.mav.max_collective_thrust() - 1.0;
    [libm::atanh(a.clamp(-0.99, 0.99)), 0.0, 0.0, 0.0]
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env_cfg: EpisodeConfig, physics: Physics) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PolicyNet::init(cfg.hidden, cfg.init_log_std, hover_bias(&physics), &mut rng)?;
        Self::with_net(cfg, env_cfg, physics, net)
    }

    /// Continues training from an existing network with a fresh optimizer.
    pub fn with_net(cfg: TrainConfig, env_cfg: EpisodeConfig, physics: Physics, net: PolicyNet) -> Result<Self> {
        cfg.validate()?;
        let workers = (0..cfg.num_envs)
            .map(|i| Ok(EnvWorker::new(CaptureEnv::new(env_cfg.clone(), physics)?, mix_seed(cfg.seed, i as u64))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            opt: Adam::new(net.params().len(), cfg.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1 << 40)),
            cfg,
            env_cfg,
            physics,
            net,
            workers,
            iteration: 0,
            env_steps: 0,
        })
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Collection, advantage estimation, update and (on schedule)
    /// evaluation.
    pub fn iterate(&mut self, exec: &impl Executor) -> Result<IterationLog> {
        let net = &self.net;
        let cfg = &self.cfg;
        let results = exec.map(&mut self.workers, |w| w.collect(net, cfg.steps_per_env, cfg));
        let mut batch = RolloutBatch::default();
        let mut ends = Vec::new();
        for r in results {
            let (b, e) = r?;
            batch.extend(b);
            ends.extend(e);
        }
        self.env_steps += batch.len() as u64;
        batch.compute_advantages(self.cfg.gamma, self.cfg.gae_lambda);
        if self.cfg.lr_anneal {
            let left = 1.0 - self.iteration as f64 / self.cfg.iterations.max(1) as f64;
            self.opt.lr = self.cfg.learning_rate * left.max(0.0);
        }
        let stats = ppo_update(&mut self.net, &mut self.opt, &batch, &self.cfg, &mut self.rng)?;
        self.iteration += 1;

        let eval = if self.cfg.eval_interval > 0 && self.iteration.is_multiple_of(self.cfg.eval_interval) {
            Some(evaluate(&self.net, &self.env_cfg, &self.physics, self.cfg.eval_episodes, mix_seed(self.cfg.seed, 7), exec)?)
        } else {
            None
        };
        let mean_reward = if ends.is_empty() {
            f64::NAN
        } else {
            ends.iter().map(|e| e.reward).sum::<f64>() / ends.len() as f64
        };
        Ok(IterationLog {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_reward,
            episodes: ends.len(),
            eval_success: eval.as_ref().map(|e| e.success_rate),
            eval_mean_reward: eval.as_ref().map(|e| e.mean_reward),
            policy_loss: stats.loss.policy_loss,
            value_loss: stats.loss.value_loss,
            entropy: stats.loss.entropy,
            approx_kl: stats.loss.approx_kl,
            clip_fraction: stats.loss.clip_fraction,
            grad_norm: stats.grad_norm,
        })
    }
}

/// Runs `cfg.iterations` iterations from a fresh network.
pub fn train(
    cfg: &TrainConfig,
    env_cfg: &EpisodeConfig,
    physics: &Physics,
    exec: &impl Executor,
) -> Result<(PolicyNet, Vec<IterationLog>)> {
    let mut trainer = Trainer::new(*cfg, env_cfg.clone(), *physics)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        log.push(trainer.iterate(exec)?);
    }
    Ok((trainer.net, log))
}

/// Deterministic (mean-action) episode.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeSummary {
    pub seed: u64,
    pub start: MavState,
    pub reward: f64,
    pub steps: usize,
    pub termination: Termination,
    pub launch: Option<LaunchEvent>,
    /// Largest body-rate norm seen during the episode [rad/s].
    pub max_rate: f64,
}

impl EpisodeSummary {
    pub fn success(&self) -> bool {
        self.launch.as_ref().is_some_and(|l| l.success)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeSummary>,
    pub success_rate: f64,
    pub mean_reward: f64,
}

/// Rolls the policy mean `tanh(μ)` from a given start.
pub fn run_episode(net: &PolicyNet, env: &mut CaptureEnv, start: MavState, seed: u64) -> Result<EpisodeSummary> {
    let mut obs = env.reset_to(start);
    let mut reward = 0.0;
    let mut max_rate: f64 = start.w.norm();
    loop {
        let out = net.forward(&obs)?;
        let r = env.step_normalized(&out.mean)?;
        reward += r.reward.r_total;
        max_rate = max_rate.max(env.state().map_or(0.0, |x| x.w.norm()));
        obs = r.observation;
        if let Some(termination) = r.info.termination {
            return Ok(EpisodeSummary {
                seed,
                start,
                reward,
                steps: r.info.step,
                termination,
                launch: r.info.launch,
                max_rate,
            });
        }
    }
}

/// `episodes` deterministic rollouts; episode `i` starts from the sampler
/// seeded with `mix_seed(seed, i)`.
pub fn evaluate(
    net: &PolicyNet,
    env_cfg: &EpisodeConfig,
    physics: &Physics,
    episodes: usize,
    seed: u64,
    exec: &impl Executor,
) -> Result<EvalReport> {
    let mut jobs: Vec<u64> = (0..episodes as u64).map(|i| mix_seed(seed, i)).collect();
    let template = CaptureEnv::new(env_cfg.clone(), *physics)?;
    let results = exec.map(&mut jobs, |s| {
        let mut env = template.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(*s);
        let start = env_cfg.init.sample(&mut rng);
        run_episode(net, &mut env, start, *s)
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = episodes.len().max(1) as f64;
    Ok(EvalReport {
        success_rate: episodes.iter().filter(|e| e.success()).count() as f64 / n,
        mean_reward: episodes.iter().map(|e| e.reward).sum::<f64>() / n,
        episodes,
    })
}

