//! Quadrotor ball-launch capture: vehicle and projectile models, a
//! free-final-time capture planner, the capture MDP and a PPO learner.
//!
//! Everything here is `no_std` + `alloc` and deterministic; file formats,
//! configuration and the command line live in the `mavcap` crate.
#![no_std]

extern crate alloc;

pub mod ballistics;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod launcher;
pub mod optim;
pub mod planner;
pub mod ppo;
pub mod target;

pub use error::{Error, Result};
