//! Spinning-ball flight with Magnus lift, quadratic drag and spin decay.
//!
//! ```text
//! ṗ_b = v_b
//! v̇_b = g + (T_b + D_b) / m_b
//! ω̇_b = −C C_M 2 r_b ω_b / J_b
//!
//! C   = ½ ρ ‖v_b‖² S,   S = π r_b²
//! T_b = C C_l ω_b (v_b × n) / ‖v_b × n‖
//! D_b = −C C_d v_b / ‖v_b‖
//! ```
//!
//! The spin axis `n` is carried unchanged through the flight.

use alloc::vec::Vec;

use crate::dynamics::{Integrator, Vec3};
use crate::error::{ensure, Error, Result};

/// Below this speed the aerodynamic terms are dropped.
pub const MIN_SPEED: f64 = 1e-6;
/// Below this ‖v × n‖ the lift direction is undefined and lift is dropped.
pub const MIN_LIFT_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BallState {
    pub p: Vec3,
    pub v: Vec3,
    /// Spin rate [rad/s].
    pub spin: f64,
    /// Unit spin axis, world frame.
    pub axis: Vec3,
}

impl BallState {
    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).chain(self.axis.iter()).all(|x| x.is_finite())
            && self.spin.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallStateDot {
    pub p: Vec3,
    pub v: Vec3,
    pub spin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BallParams {
    /// Mass [kg].
    pub mass: f64,
    /// Moment of inertia [kg·m²].
    pub inertia: f64,
    /// Radius [m].
    pub radius: f64,
    /// Air density [kg/m³].
    pub air_density: f64,
    /// Lift coefficient; multiplies the raw spin rate, so it carries units of s.
    pub lift_coeff: f64,
    pub drag_coeff: f64,
    /// Spin-decay moment coefficient; multiplies the raw spin rate.
    pub moment_coeff: f64,
    pub gravity: Vec3,
}

impl Default for BallParams {
    fn default() -> Self {
        let mass = 0.003;
        let radius = 0.0085;
        Self {
            mass,
            inertia: 0.4 * mass * radius * radius,
            radius,
            air_density: 1.225,
            lift_coeff: 1.5e-4,
            drag_coeff: 0.47,
            moment_coeff: 5e-5,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

impl BallParams {
    /// Gravity only.
    pub fn vacuum() -> Self {
        Self {
            lift_coeff: 0.0,
            drag_coeff: 0.0,
            moment_coeff: 0.0,
            ..Self::default()
        }
    }

    pub fn area(&self) -> f64 {
        core::f64::consts::PI * self.radius * self.radius
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.mass > 0.0, "ball.mass", "must be positive")?;
        ensure(self.inertia > 0.0, "ball.inertia", "must be positive")?;
        ensure(self.radius > 0.0, "ball.radius", "must be positive")?;
        ensure(self.air_density >= 0.0, "ball.air_density", "must be non-negative")?;
        ensure(self.lift_coeff >= 0.0, "ball.lift_coeff", "must be non-negative")?;
        ensure(self.drag_coeff >= 0.0, "ball.drag_coeff", "must be non-negative")?;
        ensure(self.moment_coeff >= 0.0, "ball.moment_coeff", "must be non-negative")
    }
}

/// Aerodynamic force split into its lift and drag parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroForces {
    pub lift: Vec3,
    pub drag: Vec3,
    /// Spin-axis moment; always opposes the spin.
    pub moment: f64,
}

pub fn aero_forces(x: &BallState, params: &BallParams) -> AeroForces {
    let speed = x.v.norm();
    if speed < MIN_SPEED {
        return AeroForces {
            lift: Vec3::zeros(),
            drag: Vec3::zeros(),
            moment: 0.0,
        };
    }
    let c = 0.5 * params.air_density * speed * speed * params.area();
    let drag = x.v * (-c * params.drag_coeff / speed);
    let side = x.v.cross(&x.axis);
    let side_norm = side.norm();
    let lift = if side_norm < MIN_LIFT_NORM {
        Vec3::zeros()
    } else {
        side * (c * params.lift_coeff * x.spin / side_norm)
    };
    let moment = -c * params.moment_coeff * 2.0 * params.radius * x.spin;
    AeroForces { lift, drag, moment }
}

pub fn ball_derivative(x: &BallState, params: &BallParams) -> BallStateDot {
    let f = aero_forces(x, params);
    BallStateDot {
        p: x.v,
        v: params.gravity + (f.lift + f.drag) / params.mass,
        spin: f.moment / params.inertia,
    }
}

fn advance(x: &BallState, d: &BallStateDot, h: f64) -> BallState {
    BallState {
        p: x.p + d.p * h,
        v: x.v + d.v * h,
        spin: x.spin + d.spin * h,
        axis: x.axis,
    }
}

#[inline]
pub fn ball_step(x: &BallState, dt: f64, params: &BallParams, integrator: Integrator) -> BallState {
    match integrator {
        Integrator::Euler => advance(x, &ball_derivative(x, params), dt),
        Integrator::Rk4 => {
            let k1 = ball_derivative(x, params);
            let k2 = ball_derivative(&advance(x, &k1, dt / 2.0), params);
            let k3 = ball_derivative(&advance(x, &k2, dt / 2.0), params);
            let k4 = ball_derivative(&advance(x, &k3, dt), params);
            let sum = BallStateDot {
                p: k1.p + (k2.p + k3.p) * 2.0 + k4.p,
                v: k1.v + (k2.v + k3.v) * 2.0 + k4.v,
                spin: k1.spin + 2.0 * (k2.spin + k3.spin) + k4.spin,
            };
            advance(x, &sum, dt / 6.0)
        }
    }
}

/// Time-indexed ball states; `times[0] == 0` is the release.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BallTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<BallState>,
}

impl BallTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.states.iter().map(|s| s.p)
    }
}

/// Number of uniform steps covering `horizon` with steps no longer than `dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    let n = libm::ceil(horizon / dt - 1e-9);
    if n < 1.0 {
        1
    } else {
        n as usize
    }
}

pub fn propagate_ball(
    x0: &BallState,
    horizon: f64,
    dt: f64,
    params: &BallParams,
    integrator: Integrator,
) -> Result<BallTrajectory> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidTimeStep(horizon));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("ball state"));
    }
    let n = step_count(horizon, dt);
    let h = horizon / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = *x0;
    times.push(0.0);
    states.push(x);
    for k in 1..=n {
        x = ball_step(&x, h, params, integrator);
        times.push(k as f64 * h);
        states.push(x);
    }
    Ok(BallTrajectory { times, states })
}

/// Closest grid approach between a ball and a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Miss {
    pub distance: f64,
    /// Time since release of the closest sample.
    pub time: f64,
    pub index: usize,
}

/// Minimum distance over the shared time grid; ties resolve to the earliest
/// sample.
pub fn min_miss_distance(traj: &BallTrajectory, target: &[Vec3]) -> Result<Miss> {
    if traj.is_empty() || target.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if traj.len() != target.len() {
        return Err(Error::LengthMismatch(traj.len(), target.len()));
    }
    let mut best = Miss {
        distance: f64::INFINITY,
        time: 0.0,
        index: 0,
    };
    for (i, (s, pt)) in traj.states.iter().zip(target).enumerate() {
        let d = (s.p - pt).norm();
        if d < best.distance {
            best = Miss {
                distance: d,
                time: traj.times[i],
                index: i,
            };
        }
    }
    Ok(best)
}

/// Streams a propagation and returns the closest grid approach to
/// `target(t)` without storing the trajectory. `t` is time since release.
pub fn closest_approach(
    x0: &BallState,
    horizon: f64,
    dt: f64,
    params: &BallParams,
    integrator: Integrator,
    mut target: impl FnMut(f64) -> Vec3,
) -> Miss {
    let n = step_count(horizon, dt);
    let h = horizon / n as f64;
    let mut x = *x0;
    let mut best = Miss {
        distance: (x.p - target(0.0)).norm(),
        time: 0.0,
        index: 0,
    };
    for k in 1..=n {
        x = ball_step(&x, h, params, integrator);
        let t = k as f64 * h;
        let d = (x.p - target(t)).norm();
        if d < best.distance {
            best = Miss {
                distance: d,
                time: t,
                index: k,
            };
        }
    }
    best
}

/// Like [`closest_approach`], but the ball–target offset is taken as linear
/// between grid samples, so the minimum is not limited by the grid spacing.
pub fn closest_approach_interpolated(
    x0: &BallState,
    horizon: f64,
    dt: f64,
    params: &BallParams,
    integrator: Integrator,
    mut target: impl FnMut(f64) -> Vec3,
) -> Miss {
    let n = step_count(horizon, dt);
    let h = horizon / n as f64;
    let mut x = *x0;
    let mut prev = x.p - target(0.0);
    let mut best = Miss {
        distance: prev.norm(),
        time: 0.0,
        index: 0,
    };
    for k in 1..=n {
        x = ball_step(&x, h, params, integrator);
        let t = k as f64 * h;
        let rel = x.p - target(t);
        let seg = rel - prev;
        let len2 = seg.norm_squared();
        let s = if len2 > 0.0 {
            (-prev.dot(&seg) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = (prev + seg * s).norm();
        if d < best.distance {
            best = Miss {
                distance: d,
                time: t - h + s * h,
                index: if s < 0.5 { k - 1 } else { k },
            };
        }
        prev = rel;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ball(v: Vec3, spin: f64) -> BallState {
        BallState {
            p: Vec3::zeros(),
            v,
            spin,
            axis: Vec3::y(),
        }
    }

    #[test]
    fn still_ball_feels_gravity_only() {
        let p = BallParams::default();
        let d = ball_derivative(&ball(Vec3::zeros(), 0.0), &p);
        assert_eq!(d.v, p.gravity);
        assert_eq!(d.spin, 0.0);
    }

    #[test]
    fn spinless_drag_magnitude() {
        let p = BallParams::default();
        let f = aero_forces(&ball(Vec3::new(10.0, 0.0, 0.0), 0.0), &p);
        assert_eq!(f.lift, Vec3::zeros());
        let expected = 0.5 * p.air_density * 100.0 * p.area() * p.drag_coeff;
        assert_relative_eq!(f.drag, Vec3::new(-expected, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn lift_vanishes_along_axis() {
        let p = BallParams::default();
        let f = aero_forces(&ball(Vec3::new(0.0, 7.0, 0.0), 500.0), &p);
        assert_eq!(f.lift, Vec3::zeros());
        assert!(f.drag.y < 0.0);
    }

    #[test]
    fn backspin_lifts_forward_ball() {
        let p = BallParams::default();
        let f = aero_forces(&ball(Vec3::new(20.0, 0.0, 0.0), 1000.0), &p);
        assert!(f.lift.z > 0.0);
        assert!(f.moment < 0.0);
    }

    #[test]
    fn vacuum_parabola() {
        let p = BallParams::vacuum();
        let traj = propagate_ball(&ball(Vec3::new(10.0, 0.0, 10.0), 0.0), 1.0, 0.005, &p, Integrator::Rk4)
            .unwrap();
        let end = traj.states.last().unwrap().p;
        assert_relative_eq!(end, Vec3::new(10.0, 0.0, 10.0 - 4.905), epsilon = 1e-5);
        assert_eq!(traj.len(), 201);
    }

    #[test]
    fn single_step_shape() {
        let traj = propagate_ball(
            &ball(Vec3::new(1.0, 0.0, 0.0), 0.0),
            0.005,
            0.005,
            &BallParams::default(),
            Integrator::Rk4,
        )
        .unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.times, [0.0, 0.005]);
    }

    #[test]
    fn propagate_rejects_bad_input() {
        let x = ball(Vec3::x(), 0.0);
        let p = BallParams::default();
        assert!(propagate_ball(&x, 0.0, 0.01, &p, Integrator::Rk4).is_err());
        assert!(propagate_ball(&x, 1.0, -0.01, &p, Integrator::Rk4).is_err());
        let mut bad = x;
        bad.p.x = f64::NAN;
        assert!(propagate_ball(&bad, 1.0, 0.01, &p, Integrator::Rk4).is_err());
    }

    #[test]
    fn backspin_raises_apex() {
        let p = BallParams::default();
        let release = Vec3::new(15.0, 0.0, 5.0);
        let apex = |spin| {
            propagate_ball(&ball(release, spin), 1.0, 0.005, &p, Integrator::Rk4)
                .unwrap()
                .positions()
                .map(|q| q.z)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert!(apex(1992.0) > apex(0.0));
    }

    #[test]
    fn miss_distance_cases() {
        let p = BallParams::vacuum();
        let x0 = ball(Vec3::new(10.0, 0.0, 0.0), 0.0);
        let traj = propagate_ball(&x0, 0.5, 0.005, &p, Integrator::Rk4).unwrap();
        let at_release = alloc::vec![x0.p; traj.len()];
        let m = min_miss_distance(&traj, &at_release).unwrap();
        assert_eq!(m.distance, 0.0);
        assert_eq!(m.time, 0.0);

        assert_eq!(
            min_miss_distance(&BallTrajectory::default(), &[]),
            Err(Error::EmptyTrajectory)
        );
        assert!(matches!(
            min_miss_distance(&traj, &at_release[..3]),
            Err(Error::LengthMismatch(..))
        ));
    }

    #[test]
    fn streaming_matches_stored() {
        let p = BallParams::default();
        let x0 = ball(Vec3::new(20.0, 1.0, 3.0), 1900.0);
        let target = |t: f64| Vec3::new(8.0 - 2.0 * t, 0.5, 1.5);
        let traj = propagate_ball(&x0, 1.0, 0.005, &p, Integrator::Rk4).unwrap();
        let tp: Vec<Vec3> = traj.times.iter().map(|&t| target(t)).collect();
        let a = min_miss_distance(&traj, &tp).unwrap();
        let b = closest_approach(&x0, 1.0, 0.005, &p, Integrator::Rk4, target);
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_resolves_between_samples() {
        // straight vacuum flight past a point halfway between two samples
        let p = BallParams::vacuum();
        let p = BallParams {
            gravity: Vec3::zeros(),
            ..p
        };
        let x0 = ball(Vec3::new(20.0, 0.0, 0.0), 0.0);
        let target = Vec3::new(1.1, 0.03, 0.0);
        let coarse = closest_approach(&x0, 0.2, 0.01, &p, Integrator::Rk4, |_| target);
        let fine = closest_approach_interpolated(&x0, 0.2, 0.01, &p, Integrator::Rk4, |_| target);
        assert_relative_eq!(coarse.distance, libm::hypot(0.1, 0.03), epsilon = 1e-12);
        assert_relative_eq!(fine.distance, 0.03, epsilon = 1e-12);
        assert_relative_eq!(fine.time, 0.055, epsilon = 1e-12);
    }
}
