use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Observation, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Fixed input scaling: position relative to the target, velocities and
/// rates brought to order one.
pub fn normalize_observation(obs: &Observation) -> [f64; OBS_DIM] {
    let mut x = *obs;
    for i in 0..3 {
        x[i] = (obs[i] - obs[18 + i]) / 2.0;
        x[3 + i] = obs[3 + i] / 2.0;
        x[15 + i] = obs[15 + i] / 5.0;
        x[18 + i] = obs[18 + i] / 5.0;
        x[21 + i] = obs[21 + i] / 5.0;
    }
    x
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w_mu: usize,
    pub b_mu: usize,
    pub log_std: usize,
    pub w_v: usize,
    pub b_v: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(hidden: usize) -> Self {
        let h = hidden;
        let w1 = 0;
        let b1 = w1 + h * OBS_DIM;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w_mu = b2 + h;
        let b_mu = w_mu + ACT_DIM * h;
        let log_std = b_mu + ACT_DIM;
        let w_v = log_std + ACT_DIM;
        let b_v = w_v + h;
        Self {
            hidden,
            w1,
            b1,
            w2,
            b2,
            w_mu,
            b_mu,
            log_std,
            w_v,
            b_v,
            len: b_v + 1,
        }
    }

    /// `(name, rows, cols)` per block, in storage order.
    pub fn shapes(&self) -> [(&'static str, usize, usize); 9] {
        let h = self.hidden;
        [
            ("w1", h, OBS_DIM),
            ("b1", h, 1),
            ("w2", h, h),
            ("b2", h, 1),
            ("w_mu", ACT_DIM, h),
            ("b_mu", ACT_DIM, 1),
            ("log_std", ACT_DIM, 1),
            ("w_v", 1, h),
            ("b_v", 1, 1),
        ]
    }
}

/// Two tanh hidden layers shared by a Gaussian policy head (pre-squash
/// mean, state-independent log-std) and a value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOutput {
    /// Gaussian mean before squashing.
    pub mu: [f64; ACT_DIM],
    /// `tanh(mu)`, the deterministic action.
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
    pub value: f64,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    x: [f64; OBS_DIM],
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl PolicyNet {
    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Shape("hidden width must be positive"));
        }
        let layout = Layout::new(hidden);
        Ok(Self {
            layout,
            params: vec![0.0; layout.len],
        })
    }

    /// Gaussian weights with std `1/sqrt(fan_in)` (policy head scaled by
    /// 0.01), zero biases except `mean_bias`.
    pub fn init(hidden: usize, init_log_std: f64, mean_bias: [f64; ACT_DIM], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(hidden)?;
        let l = net.layout;
        let mut fill = |p: &mut [f64], fan_in: usize, gain: f64| {
            let s = gain / libm::sqrt(fan_in as f64);
            for w in p {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * s;
            }
        };
        fill(&mut net.params[l.w1..l.b1], OBS_DIM, 1.0);
        fill(&mut net.params[l.w2..l.b2], hidden, 1.0);
        fill(&mut net.params[l.w_mu..l.b_mu], hidden, 0.01);
        fill(&mut net.params[l.w_v..l.b_v], hidden, 1.0);
        net.params[l.b_mu..l.log_std].copy_from_slice(&mean_bias);
        net.params[l.log_std..l.w_v].fill(init_log_std);
        Ok(net)
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(hidden);
        if params.len() != layout.len {
            return Err(Error::Shape("parameter count does not match the layout"));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self { layout, params })
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn log_std(&self) -> [f64; ACT_DIM] {
        let mut s = [0.0; ACT_DIM];
        s.copy_from_slice(&self.params[self.layout.log_std..self.layout.w_v]);
        s
    }

    pub fn forward(&self, obs: &Observation) -> Result<NetOutput> {
        if !obs.iter().all(|o| o.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(self.forward_tape(obs).0)
    }

    /// [`PolicyNet::forward`] on a slice, checking its length.
    pub fn forward_slice(&self, obs: &[f64]) -> Result<NetOutput> {
        let o: &Observation = obs.try_into().map_err(|_| Error::ObservationSize {
            expected: OBS_DIM,
            got: obs.len(),
        })?;
        self.forward(o)
    }

    pub(crate) fn forward_tape(&self, obs: &Observation) -> (NetOutput, Tape) {
        let l = &self.layout;
        let h = l.hidden;
        let p = &self.params;
        let x = normalize_observation(obs);

        let h1: Vec<f64> = (0..h)
            .map(|i| {
                let row = &p[l.w1 + i * OBS_DIM..l.w1 + (i + 1) * OBS_DIM];
                libm::tanh(dot(row, &x) + p[l.b1 + i])
            })
            .collect();
        let h2: Vec<f64> = (0..h)
            .map(|i| libm::tanh(dot(&p[l.w2 + i * h..l.w2 + (i + 1) * h], &h1) + p[l.b2 + i]))
            .collect();

        let mut mu = [0.0; ACT_DIM];
        let mut mean = [0.0; ACT_DIM];
        for k in 0..ACT_DIM {
            mu[k] = dot(&p[l.w_mu + k * h..l.w_mu + (k + 1) * h], &h2) + p[l.b_mu + k];
            mean[k] = libm::tanh(mu[k]);
        }
        let value = dot(&p[l.w_v..l.b_v], &h2) + p[l.b_v];
        (
            NetOutput {
                mu,
                mean,
                log_std: self.log_std(),
                value,
            },
            Tape { x, h1, h2 },
        )
    }

    /// Accumulates `∂L/∂θ` into `grad` given the loss gradient with respect
    /// to the pre-squash mean and the value.
    pub(crate) fn backward(&self, tape: &Tape, g_mu: &[f64; ACT_DIM], g_value: f64, grad: &mut [f64]) {
        let l = &self.layout;
        let h = l.hidden;
        let p = &self.params;

        let mut g_h2 = vec![0.0; h];
        for k in 0..ACT_DIM {
            let row = l.w_mu + k * h;
            for i in 0..h {
                grad[row + i] += g_mu[k] * tape.h2[i];
                g_h2[i] += g_mu[k] * p[row + i];
            }
            grad[l.b_mu + k] += g_mu[k];
        }
        for i in 0..h {
            grad[l.w_v + i] += g_value * tape.h2[i];
            g_h2[i] += g_value * p[l.w_v + i];
        }
        grad[l.b_v] += g_value;

        let mut g_h1 = vec![0.0; h];
        for i in 0..h {
            let d = g_h2[i] * (1.0 - tape.h2[i] * tape.h2[i]);
            if d == 0.0 {
                continue;
            }
            let row = l.w2 + i * h;
            for j in 0..h {
                grad[row + j] += d * tape.h1[j];
                g_h1[j] += d * p[row + j];
            }
            grad[l.b2 + i] += d;
        }
        for i in 0..h {
            let d = g_h1[i] * (1.0 - tape.h1[i] * tape.h1[i]);
            let row = l.w1 + i * OBS_DIM;
            for j in 0..OBS_DIM {
                grad[row + j] += d * tape.x[j];
            }
            grad[l.b1 + i] += d;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Diagonal Gaussian log-density of the pre-squash sample `u`.
pub fn gaussian_log_prob(u: &[f64; ACT_DIM], mu: &[f64; ACT_DIM], log_std: &[f64; ACT_DIM]) -> f64 {
    (0..ACT_DIM)
        .map(|k| {
            let z = (u[k] - mu[k]) * libm::exp(-log_std[k]);
            -0.5 * z * z - log_std[k] - LOG_SQRT_2PI
        })
        .sum()
}

/// Log-density of the squashed action `tanh(u)`.
pub fn squashed_log_prob(u: &[f64; ACT_DIM], mu: &[f64; ACT_DIM], log_std: &[f64; ACT_DIM]) -> f64 {
    gaussian_log_prob(u, mu, log_std) - u.iter().map(|&ui| log_tanh_jacobian(ui)).sum::<f64>()
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64; ACT_DIM]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + LOG_SQRT_2PI).sum()
}

/// Draws a pre-squash action.
pub fn sample_pre_squash(out: &NetOutput, rng: &mut impl Rng) -> [f64; ACT_DIM] {
    let mut u = [0.0; ACT_DIM];
    for k in 0..ACT_DIM {
        let z: f64 = StandardNormal.sample(rng);
        u[k] = out.mu[k] + libm::exp(out.log_std[k]) * z;
    }
    u
}

pub fn squash(u: &[f64; ACT_DIM]) -> [f64; ACT_DIM] {
    u.map(libm::tanh)
}
