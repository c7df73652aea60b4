use alloc::vec::Vec;

use crate::ballistics::{min_miss_distance, propagate_ball, BallState, BallTrajectory};
use crate::dynamics::{step_unchecked, ControlInput, Integrator, MavState};
use crate::launcher::ball_initial_state;
use crate::optim::SolveStatus;
use crate::target::TargetState;

use super::tracking::{track_knot, TrackingGains};
use super::{solve, PlanProblem, PlanSolution};

/// How a plan is executed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionOptions {
    pub integrator: Integrator,
    /// Feedback around the feedforward; `None` replays the plan open loop.
    pub feedback: Option<TrackingGains>,
    /// Replan every `replan_period` while enough of the plan remains.
    pub replan: bool,
}

impl ExecutionOptions {
    /// RK4 truth, tracking feedback, receding replanning.
    pub fn closed_loop(gains: TrackingGains) -> Self {
        Self {
            integrator: Integrator::Rk4,
            feedback: Some(gains),
            replan: true,
        }
    }

    /// Plays the plan back through its own discrete model.
    pub fn ideal() -> Self {
        Self {
            integrator: Integrator::Euler,
            feedback: None,
            replan: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplanSample {
    pub t: f64,
    pub state: MavState,
    /// Control applied from `t` to the next sample.
    pub control: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchRecord {
    /// Absolute release time.
    pub t: f64,
    pub mav: MavState,
    pub ball: BallState,
    pub target: TargetState,
    /// Fine-grid ball flight, times since release.
    pub flight: BallTrajectory,
    pub miss: f64,
    /// Release-to-closest-approach time.
    pub flight_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ReplanOutcome {
    Captured,
    Missed,
    Crashed,
    Timeout,
    PlanFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanEpisode {
    pub samples: Vec<ReplanSample>,
    pub initial_plan: PlanSolution,
    pub launch: Option<LaunchRecord>,
    pub outcome: ReplanOutcome,
    /// Solves after the initial one.
    pub replans: usize,
    /// Times the plan ran out without the launch window being met.
    pub window_misses: usize,
}

impl ReplanEpisode {
    pub fn success(&self) -> bool {
        self.outcome == ReplanOutcome::Captured
    }

    /// Time from the episode start to the closest approach, if launched.
    pub fn capture_time(&self, t0: f64) -> Option<f64> {
        self.launch.as_ref().map(|l| l.t - t0 + l.flight_time)
    }
}

/// Whether the vehicle is inside the launch window of `plan`.
pub fn within_launch_window(x: &MavState, plan: &PlanSolution, prob: &PlanProblem) -> bool {
    let want = plan.launch_state();
    let dp = (x.p - want.p).norm();
    let angle = x.attitude().angle_to(&want.attitude());
    dp <= prob.config.launch_position_tol && angle <= prob.config.launch_angle_tol_deg.to_radians()
}

/// Releases the ball from `x` at absolute time `t` and resolves the flight on
/// the fine grid against the ground-truth target.
pub fn resolve_launch(prob: &PlanProblem, x: &MavState, t: f64) -> LaunchRecord {
    let cfg = &prob.config;
    let ball = ball_initial_state(x, &prob.launcher, &prob.launch);
    let flight = propagate_ball(&ball, cfg.resolution_horizon, cfg.resolution_dt, &prob.ball, Integrator::Rk4)
        .expect("validated resolution grid");
    let targets: Vec<_> = flight.times.iter().map(|&s| prob.target.position(t + s)).collect();
    let miss = min_miss_distance(&flight, &targets).expect("non-empty flight");
    LaunchRecord {
        t,
        mav: *x,
        ball,
        target: prob.target.state(t),
        flight,
        miss: miss.distance,
        flight_time: miss.time,
    }
}

fn usable(plan: &PlanSolution, prob: &PlanProblem) -> bool {
    plan.status == SolveStatus::Converged || plan.terminal_miss <= prob.config.sigma_d
}

/// Executes a plan from `prob.x0`, replanning on a fixed period and launching
/// once the planned release instant is reached inside the launch window.
///
/// Integration steps are aligned to the plan knots, so the release happens
/// exactly at the planned `t1`.
pub fn replan_loop(prob: &PlanProblem, exec: &ExecutionOptions) -> ReplanEpisode {
    let cfg = &prob.config;
    let fmax = prob.mav.rotor_max_thrust;
    let t_start = prob.t0;
    let initial_plan = solve(prob, None);
    let mut episode = ReplanEpisode {
        samples: Vec::new(),
        initial_plan: initial_plan.clone(),
        launch: None,
        outcome: ReplanOutcome::PlanFailed,
        replans: 0,
        window_misses: 0,
    };
    if initial_plan.status == SolveStatus::Infeasible || !initial_plan.terminal_miss.is_finite() {
        return episode;
    }

    let mut plan = initial_plan;
    let mut x = prob.x0;
    let mut t = t_start;
    let mut k = 0usize;
    let mut sub = 0usize;
    let mut last_solve = t;
    let n1 = cfg.n1;

    loop {
        if !x.is_finite() || x.p.z <= 0.0 {
            episode.outcome = ReplanOutcome::Crashed;
            return episode;
        }
        if t - t_start > cfg.max_episode_time || episode.replans > cfg.max_replans {
            episode.outcome = ReplanOutcome::Timeout;
            return episode;
        }

        if k == n1 {
            if within_launch_window(&x, &plan, prob) {
                let record = resolve_launch(prob, &x, t);
                episode.outcome = if record.miss <= cfg.sigma_d {
                    ReplanOutcome::Captured
                } else {
                    ReplanOutcome::Missed
                };
                episode.launch = Some(record);
                return episode;
            }
            episode.window_misses += 1;
            episode.replans += 1;
            let fresh = solve(&prob.restarted(x, t), None);
            if fresh.status == SolveStatus::Infeasible || !fresh.terminal_miss.is_finite() {
                episode.outcome = ReplanOutcome::PlanFailed;
                return episode;
            }
            plan = fresh;
            k = 0;
            sub = 0;
            last_solve = t;
            continue;
        }

        let n_sub = (libm::ceil(plan.mav_dt() / cfg.sim_dt - 1e-9) as usize).max(1);
        let h = plan.mav_dt() / n_sub as f64;

        if exec.replan && sub == 0 && k > 0 && t - last_solve >= cfg.replan_period - 1e-9 {
            let remaining = (n1 - k) as f64 * plan.mav_dt();
            if remaining >= cfg.replan_period {
                episode.replans += 1;
                let warm = plan.shifted(t - plan.t0, fmax, cfg.min_time);
                let fresh = solve(&prob.restarted(x, t), Some(&warm));
                last_solve = t;
                if usable(&fresh, prob) {
                    plan = fresh;
                    k = 0;
                    continue;
                }
            }
        }

        let u = match &exec.feedback {
            Some(g) => track_knot(&plan, &x, k, sub as f64 / n_sub as f64, g, &prob.mav),
            None => plan.controls[k],
        };
        episode.samples.push(ReplanSample { t, state: x, control: u });
        x = step_unchecked(&x, &u, h, &prob.mav, exec.integrator);
        t += h;
        sub += 1;
        if sub == n_sub {
            sub = 0;
            k += 1;
        }
    }
}
