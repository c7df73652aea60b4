//! Rigid-body quadrotor model.
//!
//! State `x = [p, v, q, ω]` with `q` a scalar-first unit quaternion rotating
//! body vectors into the world frame and `ω` the body rates. The model is
//!
//! ```text
//! ṗ = v
//! v̇ = g + R(q) e₃ f_Σ / m
//! q̇ = ½ q ⊙ [0, ω]
//! ω̇ = J⁻¹ (τ − ω × J ω)
//! ```
//!
//! with the X-configuration mixer
//!
//! ```text
//! f_Σ = f₁ + f₂ + f₃ + f₄
//! τ   = [ l/√2 ( f₁ + f₂ − f₃ − f₄),
//!         l/√2 (−f₁ + f₂ + f₃ − f₄),
//!         c_τ  ( f₁ − f₂ + f₃ − f₄) ]
//! ```

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{ensure, Error, Result};

pub type Vec3 = Vector3<f64>;

const SQRT_2: f64 = core::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MavState {
    /// Position, world frame [m].
    pub p: Vec3,
    /// Velocity, world frame [m/s].
    pub v: Vec3,
    /// Body→world rotation, scalar-first Hamilton quaternion.
    pub q: Quaternion<f64>,
    /// Body rates [rad/s].
    pub w: Vec3,
}

impl MavState {
    /// Hovering at rest at `p` with level attitude.
    pub fn at_rest(p: Vec3) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            q: Quaternion::identity(),
            w: Vec3::zeros(),
        }
    }

    pub fn attitude(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.q)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        *self.attitude().to_rotation_matrix().matrix()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.q.coords.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.is_finite())
    }

    /// Roll, pitch, yaw (ZYX convention) in radians.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        self.attitude().euler_angles()
    }
}

/// Time derivative of a [`MavState`]; the quaternion part is not unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MavStateDot {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quaternion<f64>,
    pub w: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MavParams {
    /// Mass [kg].
    pub mass: f64,
    /// Principal moments of inertia [kg·m²].
    pub inertia: Vec3,
    /// Arm length [m].
    pub arm_length: f64,
    /// Rotor torque constant [m].
    pub torque_constant: f64,
    /// Per-rotor thrust ceiling [N].
    pub rotor_max_thrust: f64,
    /// Gravity, world frame [m/s²].
    pub gravity: Vec3,
}

impl Default for MavParams {
    fn default() -> Self {
        Self {
            mass: 0.5,
            inertia: Vec3::new(2.5e-3, 2.5e-3, 4.3e-3),
            arm_length: 0.12,
            torque_constant: 0.01,
            rotor_max_thrust: 5.0,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

impl MavParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.mass > 0.0, "mass", "must be positive")?;
        ensure(
            self.inertia.iter().all(|&j| j > 0.0),
            "inertia",
            "all principal moments must be positive",
        )?;
        ensure(self.arm_length > 0.0, "arm_length", "must be positive")?;
        ensure(
            self.torque_constant > 0.0,
            "torque_constant",
            "must be positive",
        )?;
        ensure(
            self.rotor_max_thrust > 0.0,
            "rotor_max_thrust",
            "must be positive",
        )?;
        ensure(
            self.gravity.iter().all(|g| g.is_finite()),
            "gravity",
            "must be finite",
        )
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity.norm()
    }

    pub fn max_collective_thrust(&self) -> f64 {
        4.0 * self.rotor_max_thrust
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlInput {
    /// Collective thrust [N].
    pub f_sum: f64,
    /// Body torque [N·m].
    pub tau: Vec3,
}

impl ControlInput {
    pub fn new(f_sum: f64, tau: Vec3) -> Self {
        Self { f_sum, tau }
    }

    pub fn hover(params: &MavParams) -> Self {
        Self::new(params.hover_thrust(), Vec3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.f_sum.is_finite() && self.tau.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RotorThrusts(pub [f64; 4]);

impl RotorThrusts {
    pub fn uniform(f: f64) -> Self {
        Self([f; 4])
    }

    pub fn is_within(&self, params: &MavParams) -> bool {
        self.0
            .iter()
            .all(|&f| (0.0..=params.rotor_max_thrust).contains(&f))
    }
}

/// Rotor mixing without validation; used inside the planner's rollouts where
/// finite-difference probes may step slightly outside the thrust box.
#[inline]
pub fn mix_unchecked(f: &[f64; 4], params: &MavParams) -> ControlInput {
    let a = params.arm_length / SQRT_2;
    let c = params.torque_constant;
    ControlInput {
        f_sum: f[0] + f[1] + f[2] + f[3],
        tau: Vec3::new(
            a * (f[0] + f[1] - f[2] - f[3]),
            a * (-f[0] + f[1] + f[2] - f[3]),
            c * (f[0] - f[1] + f[2] - f[3]),
        ),
    }
}

pub fn rotor_mix(f: &RotorThrusts, params: &MavParams) -> Result<ControlInput> {
    if f.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rotor thrusts"));
    }
    if f.0.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeThrust);
    }
    Ok(mix_unchecked(&f.0, params))
}

/// Solves the 4×4 mixing system for the per-rotor thrusts without any bound
/// check. The mixer's rows are mutually orthogonal, so the inverse is the
/// transpose scaled by the inverse row norms.
pub fn allocate(u: &ControlInput, params: &MavParams) -> [f64; 4] {
    let a = params.arm_length / SQRT_2;
    let c = params.torque_constant;
    let s = u.f_sum / 4.0;
    let x = u.tau.x / (4.0 * a);
    let y = u.tau.y / (4.0 * a);
    let z = u.tau.z / (4.0 * c);
    [s + x - y + z, s + x + y - z, s - x + y + z, s - x - y - z]
}

/// Recovers rotor thrusts from `u`; fails with [`Error::InvalidParameter`] when
/// any thrust leaves `[0, f_max]`.
pub fn inverse_mix(u: &ControlInput, params: &MavParams) -> Result<RotorThrusts> {
    if !u.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    let f = RotorThrusts(allocate(u, params));
    // a few ulps of slack so that mix ∘ inverse_mix round trips on the boundary
    let eps = 1e-12 * params.rotor_max_thrust;
    if f
        .0
        .iter()
        .all(|&fi| fi >= -eps && fi <= params.rotor_max_thrust + eps)
    {
        Ok(RotorThrusts(
            f.0.map(|fi| fi.clamp(0.0, params.rotor_max_thrust)),
        ))
    } else {
        Err(Error::InvalidParameter {
            name: "control input",
            reason: "infeasible: recovered rotor thrusts leave [0, f_max]",
        })
    }
}

/// Clamps every rotor to its thrust box and re-mixes.
pub fn project_feasible(u: &ControlInput, params: &MavParams) -> ControlInput {
    let f = allocate(u, params).map(|fi| {
        if fi.is_nan() {
            0.0
        } else {
            fi.clamp(0.0, params.rotor_max_thrust)
        }
    });
    mix_unchecked(&f, params)
}

pub fn mav_derivative(x: &MavState, u: &ControlInput, params: &MavParams) -> MavStateDot {
    let attitude = UnitQuaternion::from_quaternion(x.q);
    let thrust_dir = attitude * Vec3::z();
    let jw = params.inertia.component_mul(&x.w);
    let w_dot = (u.tau - x.w.cross(&jw)).component_div(&params.inertia);
    MavStateDot {
        p: x.v,
        v: params.gravity + thrust_dir * (u.f_sum / params.mass),
        q: x.q * Quaternion::from_imag(x.w) * 0.5,
        w: w_dot,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Integrator {
    /// Forward Euler; the planner's discrete model.
    Euler,
    #[default]
    Rk4,
}

fn advance(x: &MavState, d: &MavStateDot, h: f64) -> MavState {
    MavState {
        p: x.p + d.p * h,
        v: x.v + d.v * h,
        q: x.q + d.q * h,
        w: x.w + d.w * h,
    }
}

fn normalized(mut x: MavState) -> MavState {
    x.q = x.q.normalize();
    x
}

/// One integration step without input validation; the planner's inner loop.
#[inline]
pub fn step_unchecked(
    x: &MavState,
    u: &ControlInput,
    dt: f64,
    params: &MavParams,
    integrator: Integrator,
) -> MavState {
    match integrator {
        Integrator::Euler => normalized(advance(x, &mav_derivative(x, u, params), dt)),
        Integrator::Rk4 => {
            let k1 = mav_derivative(x, u, params);
            let k2 = mav_derivative(&advance(x, &k1, dt / 2.0), u, params);
            let k3 = mav_derivative(&advance(x, &k2, dt / 2.0), u, params);
            let k4 = mav_derivative(&advance(x, &k3, dt), u, params);
            let sum = MavStateDot {
                p: k1.p + (k2.p + k3.p) * 2.0 + k4.p,
                v: k1.v + (k2.v + k3.v) * 2.0 + k4.v,
                q: k1.q + (k2.q + k3.q) * 2.0 + k4.q,
                w: k1.w + (k2.w + k3.w) * 2.0 + k4.w,
            };
            normalized(advance(x, &sum, dt / 6.0))
        }
    }
}

pub fn integrate_step(
    x: &MavState,
    u: &ControlInput,
    dt: f64,
    params: &MavParams,
    integrator: Integrator,
) -> Result<MavState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("MAV state"));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    Ok(step_unchecked(x, u, dt, params, integrator))
}
