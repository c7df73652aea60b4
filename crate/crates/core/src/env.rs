//! The capture MDP: observation, thrust/body-rate action, inner rate loop,
//! shaped reward and the automatic launch rule.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ballistics::{
    closest_approach_interpolated, min_miss_distance, propagate_ball, BallParams, BallState, BallTrajectory,
};
use crate::dynamics::{
    integrate_step, project_feasible, ControlInput, Integrator, MavParams, MavState, Vec3,
};
use crate::error::{ensure, Error, Result};
use crate::launcher::{ball_initial_state, launch_kinematics, LaunchKinematics, LauncherParams};
use crate::target::{TargetMotion, TargetState};

pub const OBS_DIM: usize = 24;
pub const ACT_DIM: usize = 4;

/// `[p, v, vec(R) row-major, ω, p_T, v_T]`.
pub type Observation = [f64; OBS_DIM];

pub fn observation(x: &MavState, target: &TargetState) -> Observation {
    let mut o = [0.0; OBS_DIM];
    o[0..3].copy_from_slice(x.p.as_slice());
    o[3..6].copy_from_slice(x.v.as_slice());
    let r = x.rotation();
    for i in 0..3 {
        for j in 0..3 {
            o[6 + 3 * i + j] = r[(i, j)];
        }
    }
    o[15..18].copy_from_slice(x.w.as_slice());
    o[18..21].copy_from_slice(target.p.as_slice());
    o[21..24].copy_from_slice(target.v.as_slice());
    o
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Action {
    /// Collective thrust command [N].
    pub f_sum: f64,
    /// Body-rate command [rad/s].
    pub w_cmd: Vec3,
}

impl Action {
    /// Affine map from `[-1, 1]⁴` to `[0, 4 f_max] × [−ω_max, ω_max]³`.
    pub fn from_normalized(a: &[f64; ACT_DIM], params: &MavParams, omega_max: f64) -> Self {
        let c = |x: f64| x.clamp(-1.0, 1.0);
        Self {
            f_sum: (c(a[0]) + 1.0) * 0.5 * params.max_collective_thrust(),
            w_cmd: Vec3::new(c(a[1]), c(a[2]), c(a[3])) * omega_max,
        }
    }

    /// Inverse of [`Action::from_normalized`].
    pub fn to_normalized(&self, params: &MavParams, omega_max: f64) -> [f64; ACT_DIM] {
        [
            2.0 * self.f_sum / params.max_collective_thrust() - 1.0,
            self.w_cmd.x / omega_max,
            self.w_cmd.y / omega_max,
            self.w_cmd.z / omega_max,
        ]
    }
}

/// `τ = J (K ∘ (ω_cmd − ω)) + ω × Jω`, collective clamped, result projected
/// onto the rotor box.
pub fn rate_controller(a: &Action, x: &MavState, params: &MavParams, gains: &Vec3) -> ControlInput {
    let jw = params.inertia.component_mul(&x.w);
    let tau = params.inertia.component_mul(&gains.component_mul(&(a.w_cmd - x.w))) + x.w.cross(&jw);
    let f_sum = a.f_sum.clamp(0.0, params.max_collective_thrust());
    project_feasible(&ControlInput::new(f_sum, tau), params)
}

/// Start-state distribution: one of `starts`, uniformly jittered, at rest
/// and level.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct InitSampler {
    pub starts: Vec<Vec3>,
    /// Half-widths of the uniform position box [m].
    pub jitter: Vec3,
    /// Half-width of the uniform initial yaw [rad].
    pub yaw_jitter: f64,
}

impl Default for InitSampler {
    fn default() -> Self {
        Self::scenario_one(Vec3::new(0.5, 0.5, 0.5))
    }
}

impl InitSampler {
    /// The three static-target starts.
    pub fn scenario_one(jitter: Vec3) -> Self {
        Self {
            starts: vec![
                Vec3::new(-5.0, 0.0, 4.0),
                Vec3::new(0.0, 0.0, 6.0),
                Vec3::new(0.0, 0.0, 2.0),
            ],
            jitter,
            yaw_jitter: 0.0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> MavState {
        let base = self.starts[rng.random_range(0..self.starts.len())];
        let mut u = || rng.random_range(-1.0..=1.0);
        let offset = Vec3::new(u() * self.jitter.x, u() * self.jitter.y, u() * self.jitter.z);
        let yaw = u() * self.yaw_jitter;
        let mut x = MavState::at_rest(base + offset);
        x.q = nalgebra::Quaternion::new(libm::cos(yaw / 2.0), 0.0, 0.0, libm::sin(yaw / 2.0));
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub dt: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub sigma_d: f64,
    /// Predicted miss below which the automatic launch fires [m].
    pub launch_threshold: f64,
    /// Body-rate command bound [rad/s].
    pub omega_max: f64,
    pub rate_gains: Vec3,
    /// Fire automatically once the launch conditions hold.
    pub auto_launch: bool,
    /// Hypothetical flight window for the reward and launch rule [s].
    pub reward_horizon: f64,
    pub reward_dt: f64,
    /// Grid for resolving a real launch [s].
    pub resolution_dt: f64,
    pub target: TargetMotion,
    pub init: InitSampler,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            dt: 0.01,
            d_min: 1.0,
            d_max: 1.5,
            sigma_d: 0.1,
            launch_threshold: 0.1,
            omega_max: 10.0,
            rate_gains: Vec3::new(20.0, 20.0, 20.0),
            auto_launch: true,
            reward_horizon: 1.0,
            reward_dt: 0.02,
            resolution_dt: 0.001,
            target: TargetMotion::default(),
            init: InitSampler::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.max_steps > 0, "env.max_steps", "must be positive")?;
        ensure(self.dt > 0.0 && self.dt.is_finite(), "env.dt", "must be positive")?;
        ensure(self.d_min > 0.0 && self.d_min < self.d_max, "env.d_min", "need 0 < d_min < d_max")?;
        ensure(self.sigma_d > 0.0, "env.sigma_d", "must be positive")?;
        ensure(self.launch_threshold > 0.0, "env.launch_threshold", "must be positive")?;
        ensure(self.omega_max > 0.0, "env.omega_max", "must be positive")?;
        ensure(
            self.reward_horizon > 0.0 && self.reward_dt > 0.0 && self.resolution_dt > 0.0,
            "env.reward_dt",
            "flight windows must be positive",
        )?;
        ensure(!self.init.starts.is_empty(), "env.init.starts", "need at least one start")
    }
}

/// Vehicle, launcher and ball models shared by the environment and planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub mav: MavParams,
    pub launcher: LauncherParams,
    pub ball: BallParams,
    pub launch: LaunchKinematics,
}

impl Physics {
    pub fn new(mav: MavParams, launcher: LauncherParams, ball: BallParams) -> Result<Self> {
        mav.validate()?;
        ball.validate()?;
        let launch = launch_kinematics(&launcher)?;
        Ok(Self {
            mav,
            launcher,
            ball,
            launch,
        })
    }

    pub fn release(&self, x: &MavState) -> BallState {
        ball_initial_state(x, &self.launcher, &self.launch)
    }
}

impl Default for Physics {
    fn default() -> Self {
        Self::new(MavParams::default(), LauncherParams::default(), BallParams::default())
            .expect("default parameters are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub r_d: f64,
    pub r_b: f64,
    pub r_w: f64,
    pub r_a: f64,
    pub r_total: f64,
    /// Distance to the target [m].
    pub d: f64,
    /// Miss of a hypothetical launch now [m].
    pub d_b: f64,
}

/// Composes the four terms from their raw inputs.
pub fn reward_terms(d: f64, d_b: f64, w_norm: f64, p_z: f64, cfg: &EpisodeConfig) -> RewardBreakdown {
    let r_d = 1.0 / (1.0 + d.clamp(cfg.d_min, cfg.d_max));
    let r_b = 1.0 / (1.0 + d_b);
    let r_w = 1.0 / (1.0 + w_norm * w_norm);
    let r_a = if p_z < 0.5 { (2.0 * p_z).max(0.0) } else { 1.0 };
    RewardBreakdown {
        r_d,
        r_b,
        r_w,
        r_a,
        r_total: r_a * r_d * (r_b + r_w) + r_d,
        d,
        d_b,
    }
}

/// Miss of a ball released from `x` at time `t`, over the reward window.
pub fn hypothetical_miss(x: &MavState, target: &TargetMotion, t: f64, physics: &Physics, cfg: &EpisodeConfig) -> f64 {
    let ball = physics.release(x);
    if !ball.is_finite() {
        return f64::INFINITY;
    }
    closest_approach_interpolated(
        &ball,
        cfg.reward_horizon,
        cfg.reward_dt,
        &physics.ball,
        Integrator::Rk4,
        |s| target.position(t + s),
    )
    .distance
}

pub fn compute_reward(
    x: &MavState,
    target: &TargetMotion,
    t: f64,
    physics: &Physics,
    cfg: &EpisodeConfig,
) -> RewardBreakdown {
    let d = (x.p - target.position(t)).norm();
    let d_b = hypothetical_miss(x, target, t, physics, cfg);
    reward_terms(d, d_b, x.w.norm(), x.p.z, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Termination {
    Launched,
    Ground,
    TimeLimit,
}

impl Termination {
    /// Whether the return should be bootstrapped past this step.
    pub fn is_truncation(self) -> bool {
        !matches!(self, Termination::Ground)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaunchEvent {
    pub t: f64,
    pub step: usize,
    pub mav: MavState,
    pub target: TargetState,
    pub ball: BallState,
    /// Resolution-grid flight, times since release.
    pub flight: BallTrajectory,
    pub predicted_miss: f64,
    pub miss: f64,
    /// Release to closest approach [s].
    pub flight_time: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub t: f64,
    pub step: usize,
    pub control: ControlInput,
    pub termination: Option<Termination>,
    pub launch: Option<LaunchEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    x: MavState,
    t: f64,
    step: usize,
    done: bool,
}

/// One capture environment instance.
#[derive(Debug, Clone)]
pub struct CaptureEnv {
    cfg: EpisodeConfig,
    physics: Physics,
    episode: Option<Episode>,
}

impl CaptureEnv {
    pub fn new(cfg: EpisodeConfig, physics: Physics) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            physics,
            episode: None,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn state(&self) -> Option<&MavState> {
        self.episode.as_ref().map(|e| &e.x)
    }

    pub fn time(&self) -> f64 {
        self.episode.as_ref().map_or(0.0, |e| e.t)
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = self.cfg.init.sample(&mut rng);
        self.reset_to(x)
    }

    /// Starts an episode from a given state at `t = 0`.
    pub fn reset_to(&mut self, x: MavState) -> Observation {
        self.episode = Some(Episode {
            x,
            t: 0.0,
            step: 0,
            done: false,
        });
        observation(&x, &self.cfg.target.state(0.0))
    }

    pub fn step_normalized(&mut self, a: &[f64; ACT_DIM]) -> Result<StepResult> {
        let action = Action::from_normalized(a, &self.physics.mav, self.cfg.omega_max);
        self.step(&action)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let cfg = &self.cfg;
        let physics = &self.physics;
        let ep = self.episode.as_mut().ok_or(Error::NotReset)?;
        if ep.done {
            return Err(Error::StepAfterDone);
        }
        if !(action.f_sum.is_finite() && action.w_cmd.iter().all(|w| w.is_finite())) {
            return Err(Error::NonFinite("action"));
        }

        let u = rate_controller(action, &ep.x, &physics.mav, &cfg.rate_gains);
        let next = integrate_step(&ep.x, &u, cfg.dt, &physics.mav, Integrator::Rk4)?;
        ep.x = next;
        ep.step += 1;
        ep.t = ep.step as f64 * cfg.dt;

        let target = cfg.target.state(ep.t);
        let reward = compute_reward(&ep.x, &cfg.target, ep.t, physics, cfg);

        let mut launch = None;
        let termination = if !ep.x.is_finite() || ep.x.p.z <= 0.0 {
            Some(Termination::Ground)
        } else if cfg.auto_launch
            && (cfg.d_min..=cfg.d_max).contains(&reward.d)
            && reward.d_b < cfg.launch_threshold
        {
            launch = Some(resolve_launch(&ep.x, ep.t, ep.step, reward.d_b, physics, cfg));
            Some(Termination::Launched)
        } else if ep.step >= cfg.max_steps {
            Some(Termination::TimeLimit)
        } else {
            None
        };
        ep.done = termination.is_some();

        Ok(StepResult {
            observation: observation(&ep.x, &target),
            reward,
            done: ep.done,
            info: StepInfo {
                t: ep.t,
                step: ep.step,
                control: u,
                termination,
                launch,
            },
        })
    }
}

/// Releases the ball and finds the true miss on the fine grid.
pub fn resolve_launch(
    x: &MavState,
    t: f64,
    step: usize,
    predicted_miss: f64,
    physics: &Physics,
    cfg: &EpisodeConfig,
) -> LaunchEvent {
    let ball = physics.release(x);
    let flight = propagate_ball(&ball, cfg.reward_horizon, cfg.resolution_dt, &physics.ball, Integrator::Rk4)
        .expect("finite release from a finite state");
    let targets: Vec<Vec3> = flight.times.iter().map(|&s| cfg.target.position(t + s)).collect();
    let miss = min_miss_distance(&flight, &targets).expect("non-empty flight");
    LaunchEvent {
        t,
        step,
        mav: *x,
        target: cfg.target.state(t),
        ball,
        flight,
        predicted_miss,
        miss: miss.distance,
        flight_time: miss.time,
        success: miss.distance <= cfg.sigma_d,
    }
}
