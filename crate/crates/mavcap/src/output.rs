//! CSV and JSON artifacts.
//!
//! Floats are written in shortest round-trip form, so re-reading a CSV gives
//! back bit-identical values.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use mavcap_core::ballistics::BallTrajectory;
use mavcap_core::dynamics::{ControlInput, MavState, Vec3};
use mavcap_core::env::{Action, RewardBreakdown};
use mavcap_core::harness::{LaunchStats, Method, TrialOutcome, TrialRecord};
use serde::{Deserialize, Serialize};

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub w_b: f64,
}

/// One row per sample; `t0` is added to the stored times.
pub fn ball_rows(traj: &BallTrajectory, t0: f64) -> impl Iterator<Item = BallRow> + '_ {
    traj.times.iter().zip(&traj.states).map(move |(t, s)| BallRow {
        t: t0 + t,
        px: s.p.x,
        py: s.p.y,
        pz: s.p.z,
        vx: s.v.x,
        vy: s.v.y,
        vz: s.v.z,
        w_b: s.spin,
    })
}

/// Vehicle state and the control held from `t` to the next row (empty on
/// the final row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MavRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub f_sum: Option<f64>,
    pub tau_x: Option<f64>,
    pub tau_y: Option<f64>,
    pub tau_z: Option<f64>,
}

impl MavRow {
    pub fn new(t: f64, x: &MavState, u: Option<&ControlInput>) -> Self {
        Self {
            t,
            px: x.p.x,
            py: x.p.y,
            pz: x.p.z,
            vx: x.v.x,
            vy: x.v.y,
            vz: x.v.z,
            qw: x.q.w,
            qx: x.q.i,
            qy: x.q.j,
            qz: x.q.k,
            wx: x.w.x,
            wy: x.w.y,
            wz: x.w.z,
            f_sum: u.map(|u| u.f_sum),
            tau_x: u.map(|u| u.tau.x),
            tau_y: u.map(|u| u.tau.y),
            tau_z: u.map(|u| u.tau.z),
        }
    }
}

/// One environment step: the state reached, the applied control, the
/// commanded action and the reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub f_sum: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_z: f64,
    pub cmd_f_sum: f64,
    pub cmd_wx: f64,
    pub cmd_wy: f64,
    pub cmd_wz: f64,
    pub r_d: f64,
    pub r_b: f64,
    pub r_w: f64,
    pub r_a: f64,
    pub r_total: f64,
    pub d: f64,
    pub d_b: f64,
}

impl StepRow {
    pub fn new(step: usize, t: f64, x: &MavState, u: &ControlInput, action: &Action, r: &RewardBreakdown) -> Self {
        Self {
            step,
            t,
            px: x.p.x,
            py: x.p.y,
            pz: x.p.z,
            vx: x.v.x,
            vy: x.v.y,
            vz: x.v.z,
            qw: x.q.w,
            qx: x.q.i,
            qy: x.q.j,
            qz: x.q.k,
            wx: x.w.x,
            wy: x.w.y,
            wz: x.w.z,
            f_sum: u.f_sum,
            tau_x: u.tau.x,
            tau_y: u.tau.y,
            tau_z: u.tau.z,
            cmd_f_sum: action.f_sum,
            cmd_wx: action.w_cmd.x,
            cmd_wy: action.w_cmd.y,
            cmd_wz: action.w_cmd.z,
            r_d: r.r_d,
            r_b: r.r_b,
            r_w: r.r_w,
            r_a: r.r_a,
            r_total: r.r_total,
            d: r.d,
            d_b: r.d_b,
        }
    }
}

/// Flat CSV form of a [`TrialRecord`] without the ball flight and wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub start_x: f64,
    pub start_y: f64,
    pub start_z: f64,
    pub outcome: TrialOutcome,
    pub launch_time: Option<f64>,
    pub capture_time: Option<f64>,
    pub relative_speed: Option<f64>,
    pub relative_distance: Option<f64>,
    pub flight_time: Option<f64>,
    pub pitch: Option<f64>,
    pub roll: Option<f64>,
    pub angular_rate: Option<f64>,
    pub miss: f64,
    pub success: bool,
    pub replans: usize,
}

impl From<&TrialRecord> for TrialRow {
    fn from(r: &TrialRecord) -> Self {
        let l = r.launch.as_ref();
        Self {
            trial: r.trial,
            method: r.method,
            seed: r.seed,
            start_x: r.start.x,
            start_y: r.start.y,
            start_z: r.start.z,
            outcome: r.outcome,
            launch_time: r.launch_time,
            capture_time: r.capture_time,
            relative_speed: l.map(|l| l.relative_speed),
            relative_distance: l.map(|l| l.relative_distance),
            flight_time: l.map(|l| l.flight_time),
            pitch: l.map(|l| l.pitch),
            roll: l.map(|l| l.roll),
            angular_rate: l.map(|l| l.angular_rate),
            miss: r.miss,
            success: r.success,
            replans: r.replans,
        }
    }
}

impl TrialRow {
    pub fn into_record(self) -> TrialRecord {
        let launch = match (
            self.relative_speed,
            self.relative_distance,
            self.flight_time,
            self.pitch,
            self.roll,
            self.angular_rate,
        ) {
            (Some(relative_speed), Some(relative_distance), Some(flight_time), Some(pitch), Some(roll), Some(angular_rate)) => {
                Some(LaunchStats {
                    relative_speed,
                    relative_distance,
                    flight_time,
                    pitch,
                    roll,
                    angular_rate,
                })
            }
            _ => None,
        };
        TrialRecord {
            trial: self.trial,
            method: self.method,
            seed: self.seed,
            start: Vec3::new(self.start_x, self.start_y, self.start_z),
            outcome: self.outcome,
            launch_time: self.launch_time,
            capture_time: self.capture_time,
            launch,
            miss: self.miss,
            success: self.success,
            replans: self.replans,
            flight: None,
            wall_time: None,
        }
    }
}

pub fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_rows(path, records.iter().map(TrialRow::from))
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize::<TrialRow>()
        .map(|row| Ok(row.with_context(|| format!("bad trial row in {}", path.display()))?.into_record()))
        .collect()
}
