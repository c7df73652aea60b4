//! Trial battery: runs TOP or a learned policy from given starts against a
//! target motion and summarizes the launch states.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ballistics::BallTrajectory;
use crate::dynamics::{MavState, Vec3};
use crate::env::{CaptureEnv, EpisodeConfig, Physics, Termination};
use crate::error::{Error, Result};
use crate::planner::{replan_loop, ExecutionOptions, PlanProblem, ReplanOutcome, TopConfig};
use crate::ppo::{mix_seed, run_episode, PolicyNet};
use crate::target::{TargetMotion, TargetState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Top,
    Rl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Top => "TOP",
            Method::Rl => "RL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TrialOutcome {
    Captured,
    Missed,
    Crashed,
    Timeout,
    PlanFailed,
}

impl TrialOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialOutcome::Captured => "captured",
            TrialOutcome::Missed => "missed",
            TrialOutcome::Crashed => "crashed",
            TrialOutcome::Timeout => "timeout",
            TrialOutcome::PlanFailed => "plan-failed",
        }
    }
}

/// Vehicle state relative to the target at release.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaunchStats {
    /// `|v − v_T|` [m/s].
    pub relative_speed: f64,
    /// `|p − p_T|` [m].
    pub relative_distance: f64,
    /// Release to closest approach [s].
    pub flight_time: f64,
    /// [rad]
    pub pitch: f64,
    /// [rad]
    pub roll: f64,
    /// Body-rate norm [rad/s].
    pub angular_rate: f64,
}

impl LaunchStats {
    pub fn new(mav: &MavState, target: &TargetState, flight_time: f64) -> Self {
        let (roll, pitch, _) = mav.euler_angles();
        Self {
            relative_speed: (mav.v - target.v).norm(),
            relative_distance: (mav.p - target.p).norm(),
            flight_time,
            pitch,
            roll,
            angular_rate: mav.w.norm(),
        }
    }
}

/// Initial conditions of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSetup {
    pub trial: usize,
    pub seed: u64,
    pub x0: MavState,
    pub motion: TargetMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub start: Vec3,
    pub outcome: TrialOutcome,
    /// Release time since the trial start [s].
    pub launch_time: Option<f64>,
    /// Release plus flight to closest approach [s].
    pub capture_time: Option<f64>,
    pub launch: Option<LaunchStats>,
    /// Infinite when nothing was launched.
    pub miss: f64,
    pub success: bool,
    /// Re-solves after the first plan (TOP only).
    pub replans: usize,
    /// Resolution-grid ball flight, times since release.
    pub flight: Option<BallTrajectory>,
    /// Filled in by callers that have a clock.
    pub wall_time: Option<f64>,
}

impl TrialRecord {
    fn unlaunched(setup: &TrialSetup, method: Method, outcome: TrialOutcome) -> Self {
        Self {
            trial: setup.trial,
            method,
            seed: setup.seed,
            start: setup.x0.p,
            outcome,
            launch_time: None,
            capture_time: None,
            launch: None,
            miss: f64::INFINITY,
            success: false,
            replans: 0,
            flight: None,
            wall_time: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrialMethod<'a> {
    Top {
        config: TopConfig,
        execution: ExecutionOptions,
    },
    Rl {
        policy: &'a PolicyNet,
        env: EpisodeConfig,
    },
}

impl TrialMethod<'_> {
    pub fn method(&self) -> Method {
        match self {
            TrialMethod::Top { .. } => Method::Top,
            TrialMethod::Rl { .. } => Method::Rl,
        }
    }
}

/// One trial in the RK4 simulation; failures are recorded, not raised.
pub fn run_trial(method: &TrialMethod<'_>, setup: &TrialSetup, physics: &Physics) -> TrialRecord {
    match method {
        TrialMethod::Top { config, execution } => run_top(config, execution, setup, physics),
        TrialMethod::Rl { policy, env } => run_rl(policy, env, setup, physics),
    }
}

fn run_top(config: &TopConfig, execution: &ExecutionOptions, setup: &TrialSetup, physics: &Physics) -> TrialRecord {
    let prob = match PlanProblem::new(
        setup.x0,
        0.0,
        setup.motion,
        physics.mav,
        physics.launcher,
        physics.ball,
        *config,
    ) {
        Ok(p) => p,
        Err(_) => return TrialRecord::unlaunched(setup, Method::Top, TrialOutcome::PlanFailed),
    };
    let ep = replan_loop(&prob, execution);
    let outcome = match ep.outcome {
        ReplanOutcome::Captured => TrialOutcome::Captured,
        ReplanOutcome::Missed => TrialOutcome::Missed,
        ReplanOutcome::Crashed => TrialOutcome::Crashed,
        ReplanOutcome::Timeout => TrialOutcome::Timeout,
        ReplanOutcome::PlanFailed => TrialOutcome::PlanFailed,
    };
    let mut rec = TrialRecord::unlaunched(setup, Method::Top, outcome);
    rec.replans = ep.replans;
    if let Some(l) = ep.launch {
        rec.launch_time = Some(l.t);
        rec.capture_time = Some(l.t + l.flight_time);
        rec.launch = Some(LaunchStats::new(&l.mav, &l.target, l.flight_time));
        rec.miss = l.miss;
        rec.success = l.miss <= config.sigma_d;
        rec.flight = Some(l.flight);
    }
    rec
}

fn run_rl(policy: &PolicyNet, env_cfg: &EpisodeConfig, setup: &TrialSetup, physics: &Physics) -> TrialRecord {
    let cfg = EpisodeConfig {
        target: setup.motion,
        ..env_cfg.clone()
    };
    let episode = CaptureEnv::new(cfg, *physics).and_then(|mut env| run_episode(policy, &mut env, setup.x0, setup.seed));
    let ep = match episode {
        Ok(ep) => ep,
        Err(_) => return TrialRecord::unlaunched(setup, Method::Rl, TrialOutcome::Crashed),
    };
    let outcome = match (&ep.launch, ep.termination) {
        (Some(l), _) if l.success => TrialOutcome::Captured,
        (Some(_), _) => TrialOutcome::Missed,
        (None, Termination::Ground) => TrialOutcome::Crashed,
        (None, _) => TrialOutcome::Timeout,
    };
    let mut rec = TrialRecord::unlaunched(setup, Method::Rl, outcome);
    if let Some(l) = ep.launch {
        rec.launch_time = Some(l.t);
        rec.capture_time = Some(l.t + l.flight_time);
        rec.launch = Some(LaunchStats::new(&l.mav, &l.target, l.flight_time));
        rec.miss = l.miss;
        rec.success = l.success;
        rec.flight = Some(l.flight);
    }
    rec
}

/// A batch of trials: one motion model, a start set cycled in order, each
/// start jittered uniformly within `jitter`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Scenario {
    pub name: String,
    pub motion: TargetMotion,
    pub starts: Vec<Vec3>,
    pub jitter: Vec3,
    pub trials: usize,
    pub methods: Vec<Method>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::static_target()
    }
}

impl Scenario {
    pub fn static_target() -> Self {
        Self {
            name: "static".into(),
            motion: TargetMotion::default(),
            starts: vec![
                Vec3::new(-5.0, 0.0, 4.0),
                Vec3::new(0.0, 0.0, 6.0),
                Vec3::new(0.0, 0.0, 2.0),
            ],
            jitter: Vec3::zeros(),
            trials: 3,
            methods: vec![Method::Top],
        }
    }

    fn moving_starts() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 6.0),
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(0.0, -5.0, 4.0),
            Vec3::new(10.0, 0.0, 6.0),
        ]
    }

    /// Target crossing along x at 20 m/s.
    pub fn constant_velocity() -> Self {
        Self {
            name: "constant-velocity".into(),
            motion: TargetMotion::ConstantVelocity {
                position: Vec3::new(0.0, 0.0, 4.0),
                velocity: Vec3::new(20.0, 0.0, 0.0),
            },
            starts: Self::moving_starts(),
            jitter: Vec3::new(0.5, 0.5, 0.5),
            trials: 40,
            methods: vec![Method::Top],
        }
    }

    /// Circle at 10 m/s with 10 m/s² centripetal acceleration about the
    /// origin, passing through `[0, 0, 4]` at `t = 0`.
    pub fn circular() -> Self {
        Self {
            name: "circular".into(),
            motion: TargetMotion::circular_from_speed([0.0, 10.0], 4.0, 10.0, 10.0, -core::f64::consts::FRAC_PI_2),
            starts: vec![Vec3::new(10.0, 0.0, 6.0), Vec3::new(0.0, 0.0, 6.0)],
            jitter: Vec3::new(0.5, 0.5, 0.5),
            trials: 40,
            methods: vec![Method::Top],
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::error::ensure(!self.starts.is_empty(), "scenario.starts", "need at least one start")?;
        crate::error::ensure(
            self.jitter.iter().all(|j| *j >= 0.0 && j.is_finite()),
            "scenario.jitter",
            "must be finite and non-negative",
        )
    }

    /// Deterministic initial conditions for every trial.
    pub fn setups(&self, seed: u64) -> Vec<TrialSetup> {
        (0..self.trials)
            .map(|i| {
                let trial_seed = mix_seed(seed, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let base = self.starts[i % self.starts.len()];
                let mut u = || rng.random_range(-1.0..=1.0);
                let offset = Vec3::new(u() * self.jitter.x, u() * self.jitter.y, u() * self.jitter.z);
                TrialSetup {
                    trial: i,
                    seed: trial_seed,
                    x0: MavState::at_rest(base + offset),
                    motion: self.motion,
                }
            })
            .collect()
    }
}

/// Five-number summary plus mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Distribution {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Distribution {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            n: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean,
            std: libm::sqrt(var),
        })
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> Option<f64> {
    Distribution::of(values).map(|d| d.median)
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = rank;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when undefined (fewer than two pairs
/// or a constant variable).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / libm::sqrt(sxx * syy))
    }
}

/// Spearman correlation of miss distance with each launch quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MissCorrelations {
    pub relative_speed: Option<f64>,
    pub relative_distance: Option<f64>,
    pub flight_time: Option<f64>,
}

impl MissCorrelations {
    pub fn of(records: &[&TrialRecord]) -> Self {
        let launched: Vec<(&LaunchStats, f64)> = records.iter().filter_map(|r| r.launch.as_ref().map(|l| (l, r.miss))).collect();
        let miss: Vec<f64> = launched.iter().map(|(_, m)| *m).collect();
        let col = |f: fn(&LaunchStats) -> f64| -> Vec<f64> { launched.iter().map(|(l, _)| f(l)).collect() };
        Self {
            relative_speed: spearman(&col(|l| l.relative_speed), &miss),
            relative_distance: spearman(&col(|l| l.relative_distance), &miss),
            flight_time: spearman(&col(|l| l.flight_time), &miss),
        }
    }

    pub fn all_positive(&self) -> bool {
        [self.relative_speed, self.relative_distance, self.flight_time]
            .iter()
            .all(|c| c.is_some_and(|c| c > 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub launched: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub miss: Option<Distribution>,
    pub relative_speed: Option<Distribution>,
    pub relative_distance: Option<Distribution>,
    pub flight_time: Option<Distribution>,
    pub pitch: Option<Distribution>,
    pub roll: Option<Distribution>,
    pub angular_rate: Option<Distribution>,
    pub capture_time: Option<Distribution>,
    pub correlations: MissCorrelations,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchSummary {
    pub trials: usize,
    pub methods: Vec<MethodSummary>,
    /// Over every launched trial regardless of method.
    pub correlations: MissCorrelations,
}

fn summarize(method: Method, records: &[&TrialRecord]) -> MethodSummary {
    let launched: Vec<(&LaunchStats, f64)> = records.iter().filter_map(|r| r.launch.as_ref().map(|l| (l, r.miss))).collect();
    let field = |f: fn(&LaunchStats) -> f64| Distribution::of(&launched.iter().map(|(l, _)| f(l)).collect::<Vec<_>>());
    let successes = records.iter().filter(|r| r.success).count();
    let captures: Vec<f64> = records.iter().filter_map(|r| r.capture_time).collect();
    MethodSummary {
        method,
        trials: records.len(),
        launched: launched.len(),
        successes,
        success_rate: successes as f64 / records.len().max(1) as f64,
        miss: Distribution::of(&launched.iter().map(|(_, m)| *m).collect::<Vec<_>>()),
        relative_speed: field(|l| l.relative_speed),
        relative_distance: field(|l| l.relative_distance),
        flight_time: field(|l| l.flight_time),
        pitch: field(|l| l.pitch),
        roll: field(|l| l.roll),
        angular_rate: field(|l| l.angular_rate),
        capture_time: Distribution::of(&captures),
        correlations: MissCorrelations::of(records),
    }
}

/// Per-method launch-state distributions and miss-distance correlations.
pub fn batch_stats(records: &[TrialRecord]) -> Result<BatchSummary> {
    if records.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "records",
            reason: "need at least two trial records",
        });
    }
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let all: Vec<&TrialRecord> = records.iter().collect();
    Ok(BatchSummary {
        trials: records.len(),
        methods: methods
            .into_iter()
            .map(|m| {
                let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.method == m).collect();
                summarize(m, &rs)
            })
            .collect(),
        correlations: MissCorrelations::of(&all),
    })
}
