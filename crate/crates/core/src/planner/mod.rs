//! Free-final-time capture planner.
//!
//! Decision vector `z = [f(0) … f(N1−1), t1, t2]` of per-rotor thrusts (scaled
//! by the rotor ceiling) and the two free durations. The MAV is rolled out
//! with `N1` forward-Euler steps of `t1/N1`, the ball is released from the
//! final state and rolled out with `N2` Euler steps of `t2/N2`, and the
//! program is
//!
//! ```text
//! min t1 + t2   s.t.   ‖p_b(N2) − p_T(t0 + t1 + t2)‖ ≤ σ,   0 ≤ f ≤ f_max,   t ≥ t_min
//! ```
//!
//! Dynamics are eliminated by the rollout (single shooting).

mod replan;
mod tracking;

pub use replan::{
    replan_loop, resolve_launch, within_launch_window, ExecutionOptions, LaunchRecord, ReplanEpisode,
    ReplanOutcome, ReplanSample,
};
pub use tracking::{track_plan, TrackingGains};

use alloc::vec;
use alloc::vec::Vec;

use crate::ballistics::{ball_step, BallParams, BallState, BallTrajectory};
use crate::dynamics::{
    mix_unchecked, step_unchecked, ControlInput, Integrator, MavParams, MavState, RotorThrusts, Vec3,
};
use crate::error::{ensure, Result};
use crate::launcher::{ball_initial_state, launch_kinematics, LaunchKinematics, LauncherParams};
use crate::optim::{self, Multipliers, Program, SolveStatus, SolverOptions};
use crate::target::TargetMotion;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TopConfig {
    /// MAV horizon steps.
    pub n1: usize,
    /// Ball horizon steps.
    pub n2: usize,
    /// Capture threshold [m].
    pub sigma_d: f64,
    /// The program aims for `aim_fraction · sigma_d` to leave margin for
    /// execution error.
    pub aim_fraction: f64,
    /// Floor on t1 and t2 [s].
    pub min_time: f64,
    /// Ceiling on t1 and t2 [s].
    pub max_time: f64,
    /// Speed used to guess t1 from the initial distance [m/s].
    pub guess_speed: f64,
    pub min_t1_guess: f64,
    pub min_t2_guess: f64,
    /// Fraction of the rotor ceiling the plan may use; the rest is left to
    /// tracking feedback.
    pub thrust_margin: f64,
    pub solver: SolverOptions,
    /// Receding replanning period [s].
    pub replan_period: f64,
    /// Longest execution step [s].
    pub sim_dt: f64,
    pub tracking: TrackingGains,
    /// Launch window: attitude tolerance [deg].
    pub launch_angle_tol_deg: f64,
    /// Launch window: position tolerance [m].
    pub launch_position_tol: f64,
    /// Simulated-time budget for one episode [s].
    pub max_episode_time: f64,
    pub max_replans: usize,
    /// Ball flight window used to resolve a launch [s].
    pub resolution_horizon: f64,
    /// Grid of the resolution propagation [s].
    pub resolution_dt: f64,
}

impl Default for TopConfig {
    fn default() -> Self {
        Self {
            n1: 20,
            n2: 20,
            sigma_d: 0.1,
            aim_fraction: 0.25,
            min_time: 1e-3,
            max_time: 10.0,
            guess_speed: 5.0,
            min_t1_guess: 0.3,
            min_t2_guess: 0.05,
            thrust_margin: 1.0,
            solver: SolverOptions::default(),
            replan_period: 0.1,
            sim_dt: 0.01,
            tracking: TrackingGains::default(),
            launch_angle_tol_deg: 10.0,
            launch_position_tol: 0.1,
            max_episode_time: 5.0,
            max_replans: 60,
            resolution_horizon: 1.0,
            resolution_dt: 0.001,
        }
    }
}

impl TopConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n1 >= 2, "top.n1", "must be at least 2")?;
        ensure(self.n2 >= 2, "top.n2", "must be at least 2")?;
        ensure(self.sigma_d > 0.0, "top.sigma_d", "must be positive")?;
        ensure(
            self.aim_fraction > 0.0 && self.aim_fraction <= 1.0,
            "top.aim_fraction",
            "must be in (0, 1]",
        )?;
        ensure(
            self.min_time > 0.0 && self.max_time > self.min_time,
            "top.min_time",
            "need 0 < min_time < max_time",
        )?;
        ensure(
            self.thrust_margin > 0.0 && self.thrust_margin <= 1.0,
            "top.thrust_margin",
            "must be in (0, 1]",
        )?;
        ensure(self.sim_dt > 0.0, "top.sim_dt", "must be positive")?;
        ensure(
            self.replan_period >= self.sim_dt,
            "top.replan_period",
            "must be at least sim_dt",
        )?;
        ensure(
            self.resolution_dt > 0.0 && self.resolution_horizon > 0.0,
            "top.resolution_dt",
            "resolution grid must be positive",
        )
    }

    pub fn aim_threshold(&self) -> f64 {
        self.aim_fraction * self.sigma_d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    pub x0: MavState,
    /// Absolute time of `x0`; target positions are evaluated at `t0 + …`.
    pub t0: f64,
    pub target: TargetMotion,
    pub mav: MavParams,
    pub launcher: LauncherParams,
    pub ball: BallParams,
    pub config: TopConfig,
    pub launch: LaunchKinematics,
}

impl PlanProblem {
    pub fn new(
        x0: MavState,
        t0: f64,
        target: TargetMotion,
        mav: MavParams,
        launcher: LauncherParams,
        ball: BallParams,
        config: TopConfig,
    ) -> Result<Self> {
        mav.validate()?;
        ball.validate()?;
        config.validate()?;
        if !x0.is_finite() {
            return Err(crate::Error::NonFinite("initial MAV state"));
        }
        let launch = launch_kinematics(&launcher)?;
        Ok(Self {
            x0,
            t0,
            target,
            mav,
            launcher,
            ball,
            config,
            launch,
        })
    }

    /// Same program restarted from `x` at absolute time `t`.
    pub fn restarted(&self, x: MavState, t: f64) -> Self {
        Self {
            x0: x,
            t0: t,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        4 * self.config.n1 + 2
    }

    /// Hover thrusts with scale-aware duration guesses.
    pub fn initial_guess(&self) -> Vec<f64> {
        let cfg = &self.config;
        let hover = self.mav.hover_thrust() / 4.0 / self.mav.rotor_max_thrust;
        let mut z = vec![hover; 4 * cfg.n1];
        let rel = self.target.position(self.t0) - self.x0.p;
        let t1 = (rel.norm() / cfg.guess_speed).max(cfg.min_t1_guess);
        let t2 = (libm::hypot(rel.x, rel.y) / self.launch.v_launch).max(cfg.min_t2_guess);
        z.push(t1);
        z.push(t2);
        z
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = 4 * self.config.n1;
        let mut lo = vec![0.0; n];
        let mut hi = vec![self.config.thrust_margin; n];
        lo.extend([self.config.min_time; 2]);
        hi.extend([self.config.max_time; 2]);
        (lo, hi)
    }
}

/// Everything a rollout produces, for building a [`PlanSolution`].
#[derive(Debug, Clone, Default)]
struct RolloutRecord {
    thrusts: Vec<RotorThrusts>,
    controls: Vec<ControlInput>,
    mav: Vec<MavState>,
    ball: Vec<BallState>,
    ball_times: Vec<f64>,
    target_end: Vec3,
}

/// Shared single-shooting rollout. Returns the terminal miss.
fn rollout(prob: &PlanProblem, z: &[f64], mut record: Option<&mut RolloutRecord>) -> f64 {
    let n1 = prob.config.n1;
    let n2 = prob.config.n2;
    let t1 = z[4 * n1];
    let t2 = z[4 * n1 + 1];
    let dt1 = t1 / n1 as f64;
    let dt2 = t2 / n2 as f64;
    let fmax = prob.mav.rotor_max_thrust;

    let mut x = prob.x0;
    if let Some(r) = record.as_deref_mut() {
        r.mav.push(x);
    }
    for k in 0..n1 {
        let f = [
            z[4 * k] * fmax,
            z[4 * k + 1] * fmax,
            z[4 * k + 2] * fmax,
            z[4 * k + 3] * fmax,
        ];
        let u = mix_unchecked(&f, &prob.mav);
        x = step_unchecked(&x, &u, dt1, &prob.mav, Integrator::Euler);
        if let Some(r) = record.as_deref_mut() {
            r.thrusts.push(RotorThrusts(f));
            r.controls.push(u);
            r.mav.push(x);
        }
    }

    let mut b = ball_initial_state(&x, &prob.launcher, &prob.launch);
    if let Some(r) = record.as_deref_mut() {
        r.ball.push(b);
        r.ball_times.push(0.0);
    }
    for k in 1..=n2 {
        b = ball_step(&b, dt2, &prob.ball, Integrator::Euler);
        if let Some(r) = record.as_deref_mut() {
            r.ball.push(b);
            r.ball_times.push(k as f64 * dt2);
        }
    }
    let target = prob.target.position(prob.t0 + t1 + t2);
    if let Some(r) = record {
        r.target_end = target;
    }
    (b.p - target).norm()
}

/// Adapter exposing a [`PlanProblem`] to the generic solver.
pub struct Transcription<'a> {
    prob: &'a PlanProblem,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Transcription<'a> {
    pub fn new(prob: &'a PlanProblem) -> Self {
        let (lo, hi) = prob.bounds();
        Self { prob, lo, hi }
    }

    /// Terminal miss `d(N2)` of a decision vector.
    pub fn terminal_miss(&self, z: &[f64]) -> f64 {
        rollout(self.prob, z, None)
    }
}

impl Program for Transcription<'_> {
    fn dim(&self) -> usize {
        self.prob.dim()
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn lower(&self) -> &[f64] {
        &self.lo
    }

    fn upper(&self) -> &[f64] {
        &self.hi
    }

    fn evaluate(&self, z: &[f64], cons: &mut [f64]) -> f64 {
        let miss = rollout(self.prob, z, None);
        if !miss.is_finite() {
            cons[0] = f64::INFINITY;
            return f64::NAN;
        }
        cons[0] = miss - self.prob.config.aim_threshold();
        z[4 * self.prob.config.n1] + z[4 * self.prob.config.n1 + 1]
    }
}

/// Objective and residuals of one decision vector, all residuals in `g ≤ 0`
/// form: the terminal constraint first, then lower and upper bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptionEval {
    pub objective: f64,
    pub terminal_miss: f64,
    pub residuals: Vec<f64>,
    pub mav_dt: f64,
    pub ball_dt: f64,
    /// False when the rollout produced non-finite values.
    pub finite: bool,
}

impl TranscriptionEval {
    pub fn feasible(&self) -> bool {
        self.finite && self.residuals.iter().all(|&r| r <= 0.0)
    }
}

pub fn transcribe(prob: &PlanProblem, z: &[f64]) -> TranscriptionEval {
    let n1 = prob.config.n1;
    let (lo, hi) = prob.bounds();
    let miss = rollout(prob, z, None);
    let mut residuals = Vec::with_capacity(1 + 2 * z.len());
    residuals.push(miss - prob.config.aim_threshold());
    residuals.extend(z.iter().zip(&lo).map(|(zi, l)| l - zi));
    residuals.extend(z.iter().zip(&hi).map(|(zi, h)| zi - h));
    TranscriptionEval {
        objective: z[4 * n1] + z[4 * n1 + 1],
        terminal_miss: miss,
        residuals,
        mav_dt: z[4 * n1] / n1 as f64,
        ball_dt: z[4 * n1 + 1] / prob.config.n2 as f64,
        finite: miss.is_finite(),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub kkt_residual: f64,
    pub merit_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanSolution {
    /// Absolute time the plan starts at.
    pub t0: f64,
    pub thrusts: Vec<RotorThrusts>,
    pub controls: Vec<ControlInput>,
    pub t1: f64,
    pub t2: f64,
    /// `N1 + 1` states; the last one is the launch state.
    pub mav_traj: Vec<MavState>,
    /// `N2 + 1` ball states, times measured from release.
    pub ball_traj: BallTrajectory,
    pub target_at_capture: Vec3,
    pub terminal_miss: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub stats: SolveStats,
    pub multipliers: Multipliers,
}

impl PlanSolution {
    pub fn mav_dt(&self) -> f64 {
        self.t1 / self.controls.len() as f64
    }

    pub fn launch_state(&self) -> &MavState {
        self.mav_traj.last().expect("plan has at least one state")
    }

    pub fn mav_times(&self) -> Vec<f64> {
        let dt = self.mav_dt();
        (0..self.mav_traj.len()).map(|k| k as f64 * dt).collect()
    }

    pub fn decision_vector(&self, rotor_max_thrust: f64) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .thrusts
            .iter()
            .flat_map(|f| f.0.map(|fi| fi / rotor_max_thrust))
            .collect();
        z.push(self.t1);
        z.push(self.t2);
        z
    }

    /// Warm start for a replan `elapsed` seconds into this plan: the
    /// remaining controls are resampled (zero-order hold) onto a grid over the
    /// remaining `t1`.
    pub fn shifted(&self, elapsed: f64, rotor_max_thrust: f64, min_time: f64) -> WarmStart {
        let n1 = self.thrusts.len();
        let dt_old = self.mav_dt();
        let t1_new = (self.t1 - elapsed).max(min_time);
        let dt_new = t1_new / n1 as f64;
        let mut z = Vec::with_capacity(4 * n1 + 2);
        for j in 0..n1 {
            let t = elapsed + j as f64 * dt_new;
            let k = ((t / dt_old) as usize).min(n1 - 1);
            z.extend(self.thrusts[k].0.map(|fi| fi / rotor_max_thrust));
        }
        z.push(t1_new);
        z.push(self.t2);
        WarmStart {
            z,
            multipliers: Some(self.multipliers.clone()),
        }
    }

    pub fn warm_start(&self, rotor_max_thrust: f64) -> WarmStart {
        WarmStart {
            z: self.decision_vector(rotor_max_thrust),
            multipliers: Some(self.multipliers.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: Vec<f64>,
    pub multipliers: Option<Multipliers>,
}

/// Rebuilds the full solution record for a decision vector.
pub fn evaluate_plan(
    prob: &PlanProblem,
    z: &[f64],
    status: SolveStatus,
    stats: SolveStats,
    multipliers: Multipliers,
) -> PlanSolution {
    let n1 = prob.config.n1;
    let mut rec = RolloutRecord::default();
    let miss = rollout(prob, z, Some(&mut rec));
    PlanSolution {
        t0: prob.t0,
        thrusts: rec.thrusts,
        controls: rec.controls,
        t1: z[4 * n1],
        t2: z[4 * n1 + 1],
        mav_traj: rec.mav,
        ball_traj: BallTrajectory {
            times: rec.ball_times,
            states: rec.ball,
        },
        target_at_capture: rec.target_end,
        terminal_miss: miss,
        objective: z[4 * n1] + z[4 * n1 + 1],
        status,
        stats,
        multipliers,
    }
}

/// Solves the capture program from the heuristic guess or a warm start.
pub fn solve(prob: &PlanProblem, warm: Option<&WarmStart>) -> PlanSolution {
    let program = Transcription::new(prob);
    let z0 = match warm {
        Some(w) if w.z.len() == prob.dim() => w.z.clone(),
        _ => prob.initial_guess(),
    };
    let report = optim::solve(
        &program,
        &z0,
        warm.and_then(|w| w.multipliers.as_ref()),
        &prob.config.solver,
    );
    let stats = SolveStats {
        outer_iterations: report.outer_iterations,
        inner_iterations: report.inner_iterations,
        evaluations: report.evaluations,
        kkt_residual: report.kkt_residual,
        merit_history: report.merit_history,
    };
    let mut solution = evaluate_plan(prob, &report.z, report.status, stats, report.multipliers);
    if solution.status == SolveStatus::Converged && solution.terminal_miss > prob.config.sigma_d {
        solution.status = SolveStatus::MaxIters;
    }
    solution
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn problem(start: Vec3, target: Vec3) -> PlanProblem {
        PlanProblem::new(
            MavState::at_rest(start),
            0.0,
            TargetMotion::Static { position: target },
            MavParams::default(),
            LauncherParams::default(),
            BallParams::default(),
            TopConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn time_grid_arithmetic() {
        let prob = problem(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 4.0));
        let mut z = prob.initial_guess();
        let n = z.len();
        z[n - 2] = 1.0;
        z[n - 1] = 1.0;
        let e = transcribe(&prob, &z);
        assert_relative_eq!(e.mav_dt, 0.05, epsilon = 1e-15);
        assert_relative_eq!(e.ball_dt, 0.05, epsilon = 1e-15);
        assert_eq!(e.objective, 2.0);
    }

    #[test]
    fn hover_guess_against_distant_target() {
        let prob = problem(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 200.0, 50.0));
        let z = prob.initial_guess();
        let e = transcribe(&prob, &z);
        assert!(e.residuals[0] > 150.0);
        assert!(!e.feasible());
    }

    #[test]
    fn initial_guess_follows_heuristic() {
        let prob = problem(Vec3::new(-5.0, 0.0, 4.0), Vec3::new(0.0, 0.0, 4.0));
        let z = prob.initial_guess();
        let n = z.len();
        assert_eq!(n, 82);
        assert_relative_eq!(z[n - 2], 1.0);
        assert_relative_eq!(z[n - 1], 5.0 / prob.launch.v_launch);
        let below = problem(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 4.0)).initial_guess();
        assert_relative_eq!(below[n - 2], 0.4);
        assert_relative_eq!(below[n - 1], 0.05);
        let hover = MavParams::default().hover_thrust() / 4.0 / 5.0;
        assert!(z[..n - 2].iter().all(|&f| f == hover));
    }
}
