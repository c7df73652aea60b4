use crate::dynamics::{project_feasible, ControlInput, MavParams, MavState, Vec3};

use super::PlanSolution;

/// Feedback around the planned feedforward.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrackingGains {
    /// Body-rate gain [1/s].
    pub rate: Vec3,
    /// Attitude error to rate correction [1/s].
    pub attitude: f64,
    /// Position error to thrust correction [1/s²].
    pub position: f64,
    /// Velocity error to thrust correction [1/s].
    pub velocity: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            rate: Vec3::new(60.0, 60.0, 60.0),
            attitude: 30.0,
            position: 4.0,
            velocity: 4.0,
        }
    }
}

impl TrackingGains {
    /// Pure feedforward.
    pub fn open_loop() -> Self {
        Self {
            rate: Vec3::zeros(),
            attitude: 0.0,
            position: 0.0,
            velocity: 0.0,
        }
    }
}

/// Control for time `t` (seconds since the plan start): zero-order-hold
/// feedforward plus rate, attitude and collective-thrust corrections toward
/// the linearly interpolated plan, projected onto the rotor box.
pub fn track_plan(
    plan: &PlanSolution,
    x: &MavState,
    t: f64,
    gains: &TrackingGains,
    params: &MavParams,
) -> ControlInput {
    let n = plan.controls.len();
    let s = (t / plan.mav_dt()).max(0.0);
    let k = (s as usize).min(n - 1);
    let frac = (s - k as f64).clamp(0.0, 1.0);
    track_knot(plan, x, k, frac, gains, params)
}

pub(crate) fn track_knot(
    plan: &PlanSolution,
    x: &MavState,
    k: usize,
    frac: f64,
    gains: &TrackingGains,
    params: &MavParams,
) -> ControlInput {
    let u = plan.controls[k];
    let a = &plan.mav_traj[k];
    let b = &plan.mav_traj[k + 1];
    let p_ref = a.p.lerp(&b.p, frac);
    let v_ref = a.v.lerp(&b.v, frac);
    let w_ref = a.w.lerp(&b.w, frac);
    let q_ref = a.attitude().slerp(&b.attitude(), frac);

    // body-frame rotation taking the current attitude onto the reference
    let err = x.attitude().inverse() * q_ref;
    let sign = if err.w < 0.0 { -1.0 } else { 1.0 };
    let att = err.imag() * (2.0 * sign);

    let w_cmd = w_ref + att * gains.attitude;
    let tau = u.tau + params.inertia.component_mul(&gains.rate.component_mul(&(w_cmd - x.w)));
    let accel = (p_ref - x.p) * gains.position + (v_ref - x.v) * gains.velocity;
    let f_sum = u.f_sum + params.mass * accel.dot(&(x.rotation() * Vec3::z()));
    project_feasible(&ControlInput::new(f_sum, tau), params)
}
