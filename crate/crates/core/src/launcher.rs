//! Friction-wheel launch device.
//!
//! The ball rolls along a chord of the wheel's contact circle. With wheel
//! radius `r_f`, ball radius `r_b` and wheel-to-tube offset `l_off`:
//!
//! ```text
//! l_b = 2 √((r_b + r_f)² − l_off²)        contact roll distance
//! θ   = 2 acos(l_off / (r_f + r_b))       wheel rolling angle
//! δt  = (θ + l_b / r_f) / ω_f             contact duration
//! v   = l_b / δt                          relative launch speed
//! ω_b = (r_f ω_f − v) / r_b               initial ball spin
//! ```

use crate::ballistics::BallState;
use crate::dynamics::{MavState, Vec3};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LauncherParams {
    /// Friction-wheel radius [m].
    pub wheel_radius: f64,
    /// Ball radius [m].
    pub ball_radius: f64,
    /// Perpendicular distance from the wheel centre to the tube axis [m].
    pub wheel_offset: f64,
    /// Wheel angular speed [rad/s].
    pub wheel_speed: f64,
    /// Launch point offset from the centre of mass along body x [m].
    pub mount_offset: f64,
}

impl Default for LauncherParams {
    fn default() -> Self {
        Self {
            wheel_radius: 0.02,
            ball_radius: 0.0085,
            wheel_offset: 0.025,
            wheel_speed: 2000.0,
            mount_offset: 0.05,
        }
    }
}

impl LauncherParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.wheel_radius > 0.0, "wheel_radius", "must be positive")?;
        ensure(self.ball_radius > 0.0, "ball_radius", "must be positive")?;
        ensure(self.wheel_speed > 0.0, "wheel_speed", "must be positive")?;
        ensure(self.mount_offset > 0.0, "mount_offset", "must be positive")?;
        ensure(self.wheel_offset >= 0.0, "wheel_offset", "must be non-negative")?;
        if self.wheel_offset >= self.wheel_radius + self.ball_radius {
            return Err(Error::NoContact);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LaunchKinematics {
    /// Launch speed relative to the device [m/s].
    pub v_launch: f64,
    /// Initial ball spin [rad/s].
    pub spin: f64,
    /// Contact roll distance [m].
    pub roll_distance: f64,
    /// Wheel rolling angle during contact [rad].
    pub roll_angle: f64,
    /// Contact duration [s].
    pub contact_time: f64,
}

pub fn launch_kinematics(params: &LauncherParams) -> Result<LaunchKinematics> {
    params.validate()?;
    let r = params.wheel_radius + params.ball_radius;
    let off = params.wheel_offset;
    let roll_distance = 2.0 * libm::sqrt(r * r - off * off);
    let roll_angle = 2.0 * libm::acos(off / r);
    let contact_time = (roll_angle + roll_distance / params.wheel_radius) / params.wheel_speed;
    let v_launch = roll_distance / contact_time;
    let spin = (params.wheel_radius * params.wheel_speed - v_launch) / params.ball_radius;
    Ok(LaunchKinematics {
        v_launch,
        spin,
        roll_distance,
        roll_angle,
        contact_time,
    })
}

/// World-frame state of a ball released from `x`.
///
/// The ball leaves along body x from a point `mount_offset` ahead of the
/// centre of mass, carrying the MAV velocity plus the tangential velocity of
/// that point, with backspin about body y.
pub fn ball_initial_state(x: &MavState, params: &LauncherParams, kin: &LaunchKinematics) -> BallState {
    let r = x.rotation();
    let launch_dir = r * Vec3::x();
    let lever = Vec3::x() * params.mount_offset;
    BallState {
        p: x.p + launch_dir * params.mount_offset,
        v: x.v + launch_dir * kin.v_launch + r * x.w.cross(&lever),
        spin: kin.spin,
        axis: r * Vec3::y(),
    }
}
