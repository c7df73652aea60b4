//! Ground-truth target motion models.

use crate::dynamics::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum TargetMotion {
    Static {
        position: Vec3,
    },
    ConstantVelocity {
        position: Vec3,
        velocity: Vec3,
    },
    /// Horizontal circle at fixed altitude.
    Circular {
        center: [f64; 2],
        radius: f64,
        angular_rate: f64,
        phase: f64,
        altitude: f64,
    },
}

impl Default for TargetMotion {
    fn default() -> Self {
        TargetMotion::Static {
            position: Vec3::new(0.0, 0.0, 4.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetState {
    pub p: Vec3,
    pub v: Vec3,
}

impl TargetMotion {
    /// Circle with the given tangential speed and centripetal acceleration.
    pub fn circular_from_speed(
        center: [f64; 2],
        altitude: f64,
        speed: f64,
        acceleration: f64,
        phase: f64,
    ) -> Self {
        TargetMotion::Circular {
            center,
            radius: speed * speed / acceleration,
            angular_rate: acceleration / speed,
            phase,
            altitude,
        }
    }

    pub fn state(&self, t: f64) -> TargetState {
        match *self {
            TargetMotion::Static { position } => TargetState {
                p: position,
                v: Vec3::zeros(),
            },
            TargetMotion::ConstantVelocity { position, velocity } => TargetState {
                p: position + velocity * t,
                v: velocity,
            },
            TargetMotion::Circular {
                center,
                radius,
                angular_rate,
                phase,
                altitude,
            } => {
                let (s, c) = libm::sincos(angular_rate * t + phase);
                TargetState {
                    p: Vec3::new(center[0] + radius * c, center[1] + radius * s, altitude),
                    v: Vec3::new(-radius * angular_rate * s, radius * angular_rate * c, 0.0),
                }
            }
        }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.state(t).p
    }

    /// Same motion with every position moved by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        match *self {
            TargetMotion::Static { position } => TargetMotion::Static {
                position: position + offset,
            },
            TargetMotion::ConstantVelocity { position, velocity } => {
                TargetMotion::ConstantVelocity {
                    position: position + offset,
                    velocity,
                }
            }
            TargetMotion::Circular {
                center,
                radius,
                angular_rate,
                phase,
                altitude,
            } => TargetMotion::Circular {
                center: [center[0] + offset.x, center[1] + offset.y],
                radius,
                angular_rate,
                phase,
                altitude: altitude + offset.z,
            },
        }
    }

    pub fn is_moving(&self) -> bool {
        !matches!(self, TargetMotion::Static { .. })
    }
}
