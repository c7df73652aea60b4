//! The subcommands. Each one writes into a staging directory that is moved
//! into place only once every artifact has been written.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use mavcap_core::ballistics::BallTrajectory;
use mavcap_core::env::{Action, CaptureEnv, EpisodeConfig, Termination};
use mavcap_core::harness::{batch_stats, run_trial, BatchSummary, Distribution, Method, TrialMethod, TrialOutcome, TrialRecord, TrialSetup};
use mavcap_core::planner::{replan_loop, ExecutionOptions, PlanProblem, PlanSolution, ReplanOutcome};
use mavcap_core::ppo::{Executor, IterationLog, PolicyNet, Trainer};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::output::{ball_rows, csv_writer, write_json, write_rows, write_trials, MavRow, StepRow};

/// Output directory that appears only when complete.
#[derive(Debug)]
pub struct Staged {
    target: PathBuf,
    staging: PathBuf,
    force: bool,
    done: bool,
}

impl Staged {
    /// Fails if `target` holds anything and `force` is off.
    pub fn new(target: &Path, force: bool) -> Result<Self> {
        if target.exists() {
            ensure!(target.is_dir(), "output path {} is not a directory", target.display());
            let empty = fs::read_dir(target)?.next().is_none();
            ensure!(
                empty || force,
                "output directory {} is not empty (use --force to replace it)",
                target.display()
            );
        }
        let name = target
            .file_name()
            .with_context(|| format!("output path {} has no final component", target.display()))?;
        let parent = target.parent().unwrap_or(Path::new(""));
        let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(".{}.partial", name.to_string_lossy()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            force,
            done: false,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.staging.join(rel)
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            if self.force {
                fs::remove_dir_all(&self.target)?;
            } else {
                fs::remove_dir(&self.target)?;
            }
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("cannot move outputs into {}", self.target.display()))?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn echo_config(out: &Staged, cfg: &RunConfig) -> Result<()> {
    fs::write(out.path("config.echo"), cfg.to_toml()?)?;
    Ok(())
}

/// `plan` succeeded in writing everything but at least one program was
/// infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanEntry {
    pub trial: usize,
    pub seed: u64,
    pub start: [f64; 3],
    pub feasible: bool,
    pub solution: PlanSolution,
    pub execution: ExecutionSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecutionSummary {
    pub outcome: ReplanOutcome,
    pub replans: usize,
    pub launch_time: Option<f64>,
    pub capture_time: Option<f64>,
    pub miss: Option<f64>,
    pub success: bool,
}

/// Solves the capture program from every scenario start and flies it
/// closed loop with receding replanning.
pub fn plan(cfg: &RunConfig, exec: &impl Executor, force: bool) -> Result<(PathBuf, PlanStatus)> {
    let physics = cfg.physics()?;
    let out = Staged::new(cfg.output_dir()?, force)?;
    echo_config(&out, cfg)?;
    let mut setups = cfg.scenario.setups(cfg.seed);
    let execution = ExecutionOptions::closed_loop(cfg.top.tracking);
    let results = exec.map(&mut setups, |s: &mut TrialSetup| -> Result<_> {
        let prob = PlanProblem::new(s.x0, 0.0, s.motion, physics.mav, physics.launcher, physics.ball, cfg.top)?;
        Ok((*s, replan_loop(&prob, &execution)))
    });

    let mut entries = Vec::new();
    for r in results {
        let (s, ep) = r?;
        let sol = &ep.initial_plan;
        let i = s.trial;
        let feasible = sol.terminal_miss <= cfg.top.sigma_d;
        let times = sol.mav_times();
        write_rows(
            &out.path(&format!("trajectories/plan_{i:03}_mav.csv")),
            sol.mav_traj
                .iter()
                .enumerate()
                .map(|(k, x)| MavRow::new(sol.t0 + times[k], x, sol.controls.get(k))),
        )?;
        write_rows(
            &out.path(&format!("trajectories/plan_{i:03}_ball.csv")),
            ball_rows(&sol.ball_traj, sol.t0 + sol.t1),
        )?;
        write_rows(
            &out.path(&format!("trajectories/exec_{i:03}_mav.csv")),
            ep.samples.iter().map(|s| MavRow::new(s.t, &s.state, Some(&s.control))),
        )?;
        if let Some(l) = &ep.launch {
            write_rows(&out.path(&format!("trajectories/exec_{i:03}_ball.csv")), ball_rows(&l.flight, l.t))?;
        }
        entries.push(PlanEntry {
            trial: i,
            seed: s.seed,
            start: s.x0.p.into(),
            feasible,
            solution: sol.clone(),
            execution: ExecutionSummary {
                outcome: ep.outcome,
                replans: ep.replans,
                launch_time: ep.launch.as_ref().map(|l| l.t),
                capture_time: ep.capture_time(0.0),
                miss: ep.launch.as_ref().map(|l| l.miss),
                success: ep.success(),
            },
        });
    }
    write_json(&out.path("solution.json"), &entries)?;
    let status = if entries.iter().all(|e| e.feasible) {
        PlanStatus::Feasible
    } else {
        PlanStatus::Infeasible
    };
    Ok((out.commit()?, status))
}

/// Trains from scratch, logging every iteration and checkpointing at each
/// evaluation and at the end.
pub fn train(cfg: &RunConfig, exec: &impl Executor, force: bool, mut progress: impl FnMut(&IterationLog)) -> Result<PathBuf> {
    let physics = cfg.physics()?;
    let out = Staged::new(cfg.output_dir()?, force)?;
    echo_config(&out, cfg)?;
    let mut trainer = Trainer::new(cfg.ppo, cfg.env.clone(), physics)?;
    fs::create_dir_all(out.path("checkpoints"))?;
    let mut log = csv_writer(&out.path("log.csv"))?;
    for _ in 0..cfg.ppo.iterations {
        let row = trainer.iterate(exec)?;
        log.serialize(row)?;
        log.flush()?;
        progress(&row);
        if row.eval_success.is_some() {
            checkpoint::save(trainer.net(), &out.path(&format!("checkpoints/iter_{:05}.ckpt", row.iteration)))?;
        }
    }
    log.flush()?;
    checkpoint::save(trainer.net(), &out.path("checkpoints/final.ckpt"))?;
    out.commit()
}

fn load_policy(cfg: &RunConfig) -> Result<Option<PolicyNet>> {
    if !cfg.scenario.methods.contains(&Method::Rl) {
        return Ok(None);
    }
    match &cfg.checkpoint {
        Some(p) => Ok(Some(checkpoint::load(p)?)),
        None => bail!("the scenario includes RL trials but no checkpoint was given (use --checkpoint)"),
    }
}

fn trial_method<'a>(method: Method, cfg: &RunConfig, policy: Option<&'a PolicyNet>) -> TrialMethod<'a> {
    match method {
        Method::Top => TrialMethod::Top {
            config: cfg.top,
            execution: ExecutionOptions::closed_loop(cfg.top.tracking),
        },
        Method::Rl => TrialMethod::Rl {
            policy: policy.expect("policy loaded for RL trials"),
            env: cfg.env.clone(),
        },
    }
}

/// Runs every scenario trial for every configured method. Records come back
/// ordered by method, then trial.
pub fn run_trials(cfg: &RunConfig, policy: Option<&PolicyNet>, exec: &impl Executor) -> Result<Vec<TrialRecord>> {
    let physics = cfg.physics()?;
    let setups = cfg.scenario.setups(cfg.seed);
    let mut jobs: Vec<(Method, TrialSetup)> = cfg
        .scenario
        .methods
        .iter()
        .flat_map(|m| setups.iter().map(move |s| (*m, *s)))
        .collect();
    Ok(exec.map(&mut jobs, |(m, s)| {
        let start = Instant::now();
        let mut rec = run_trial(&trial_method(*m, cfg, policy), s, &physics);
        rec.wall_time = Some(start.elapsed().as_secs_f64());
        rec
    }))
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    method: Method,
    wall_time: Distribution,
}

fn timing(records: &[TrialRecord]) -> Vec<Timing> {
    [Method::Top, Method::Rl]
        .into_iter()
        .filter_map(|m| {
            let t: Vec<f64> = records.iter().filter(|r| r.method == m).filter_map(|r| r.wall_time).collect();
            Distribution::of(&t).map(|wall_time| Timing { method: m, wall_time })
        })
        .collect()
}

/// Scenario trials: `trials.csv`, `summary.json` and the (machine-dependent)
/// `timing.json`.
pub fn eval(cfg: &RunConfig, exec: &impl Executor, force: bool) -> Result<(PathBuf, Vec<TrialRecord>)> {
    let policy = load_policy(cfg)?;
    let out = Staged::new(cfg.output_dir()?, force)?;
    echo_config(&out, cfg)?;
    let records = run_trials(cfg, policy.as_ref(), exec)?;
    write_trials(&out.path("trials.csv"), &records)?;
    if records.len() >= 2 {
        write_json(&out.path("summary.json"), &batch_stats(&records)?)?;
    }
    write_json(&out.path("timing.json"), &timing(&records))?;
    Ok((out.commit()?, records))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeEntry {
    pub trial: usize,
    pub method: Method,
    pub seed: u64,
    pub start: [f64; 3],
    pub outcome: TrialOutcome,
    pub steps: usize,
    pub launch_time: Option<f64>,
    pub miss: Option<f64>,
    pub success: bool,
}

fn simulate_rl(policy: &PolicyNet, env_cfg: &EpisodeConfig, s: &TrialSetup, cfg: &RunConfig) -> Result<(Vec<StepRow>, EpisodeEntry, Option<(f64, BallTrajectory)>)> {
    let env_cfg = EpisodeConfig {
        target: s.motion,
        ..env_cfg.clone()
    };
    let mut env = CaptureEnv::new(env_cfg.clone(), cfg.physics()?)?;
    let mut obs = env.reset_to(s.x0);
    let mut rows = Vec::new();
    loop {
        let out = policy.forward(&obs)?;
        let action = Action::from_normalized(&out.mean, &cfg.mav, env_cfg.omega_max);
        let r = env.step_normalized(&out.mean)?;
        let x = *env.state().context("environment lost its state")?;
        rows.push(StepRow::new(r.info.step, r.info.t, &x, &r.info.control, &action, &r.reward));
        obs = r.observation;
        if let Some(term) = r.info.termination {
            let launch = r.info.launch;
            let outcome = match (&launch, term) {
                (Some(l), _) if l.success => TrialOutcome::Captured,
                (Some(_), _) => TrialOutcome::Missed,
                (None, Termination::Ground) => TrialOutcome::Crashed,
                (None, _) => TrialOutcome::Timeout,
            };
            let entry = EpisodeEntry {
                trial: s.trial,
                method: Method::Rl,
                seed: s.seed,
                start: s.x0.p.into(),
                outcome,
                steps: r.info.step,
                launch_time: launch.as_ref().map(|l| l.t),
                miss: launch.as_ref().map(|l| l.miss),
                success: launch.as_ref().is_some_and(|l| l.success),
            };
            return Ok((rows, entry, launch.map(|l| (l.t, l.flight))));
        }
    }
}

/// Per-step logs of individual trials: `trajectories/<method>_<trial>.csv`,
/// the launched ball flights and `episodes.json`.
pub fn simulate(cfg: &RunConfig, exec: &impl Executor, force: bool) -> Result<PathBuf> {
    let policy = load_policy(cfg)?;
    let physics = cfg.physics()?;
    let out = Staged::new(cfg.output_dir()?, force)?;
    echo_config(&out, cfg)?;
    let setups = cfg.scenario.setups(cfg.seed);
    let mut jobs: Vec<(Method, TrialSetup)> = cfg
        .scenario
        .methods
        .iter()
        .flat_map(|m| setups.iter().map(move |s| (*m, *s)))
        .collect();
    let results = exec.map(&mut jobs, |(m, s)| -> Result<_> {
        let tag = format!("{}_{:03}", m.as_str().to_lowercase(), s.trial);
        match m {
            Method::Rl => {
                let (rows, entry, flight) = simulate_rl(policy.as_ref().expect("policy loaded"), &cfg.env, s, cfg)?;
                Ok((tag, SimRows::Steps(rows), entry, flight))
            }
            Method::Top => {
                let prob = PlanProblem::new(s.x0, 0.0, s.motion, physics.mav, physics.launcher, physics.ball, cfg.top)?;
                let ep = replan_loop(&prob, &ExecutionOptions::closed_loop(cfg.top.tracking));
                let rows = ep.samples.iter().map(|x| MavRow::new(x.t, &x.state, Some(&x.control))).collect();
                let entry = EpisodeEntry {
                    trial: s.trial,
                    method: Method::Top,
                    seed: s.seed,
                    start: s.x0.p.into(),
                    outcome: match ep.outcome {
                        ReplanOutcome::Captured => TrialOutcome::Captured,
                        ReplanOutcome::Missed => TrialOutcome::Missed,
                        ReplanOutcome::Crashed => TrialOutcome::Crashed,
                        ReplanOutcome::Timeout => TrialOutcome::Timeout,
                        ReplanOutcome::PlanFailed => TrialOutcome::PlanFailed,
                    },
                    steps: ep.samples.len(),
                    launch_time: ep.launch.as_ref().map(|l| l.t),
                    miss: ep.launch.as_ref().map(|l| l.miss),
                    success: ep.success(),
                };
                Ok((tag, SimRows::Samples(rows), entry, ep.launch.map(|l| (l.t, l.flight))))
            }
        }
    });
    let mut entries = Vec::new();
    for r in results {
        let (tag, rows, entry, flight) = r?;
        let path = out.path(&format!("trajectories/{tag}.csv"));
        match rows {
            SimRows::Steps(rows) => write_rows(&path, rows)?,
            SimRows::Samples(rows) => write_rows(&path, rows)?,
        }
        if let Some((t, flight)) = flight {
            write_rows(&out.path(&format!("trajectories/{tag}_ball.csv")), ball_rows(&flight, t))?;
        }
        entries.push(entry);
    }
    write_json(&out.path("episodes.json"), &entries)?;
    out.commit()
}

enum SimRows {
    Steps(Vec<StepRow>),
    Samples(Vec<MavRow>),
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionRow {
    pub method: Method,
    pub field: &'static str,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

fn distribution_rows(summary: &BatchSummary) -> Vec<DistributionRow> {
    let mut rows = Vec::new();
    for m in &summary.methods {
        let fields = [
            ("miss", &m.miss),
            ("relative_speed", &m.relative_speed),
            ("relative_distance", &m.relative_distance),
            ("flight_time", &m.flight_time),
            ("pitch", &m.pitch),
            ("roll", &m.roll),
            ("angular_rate", &m.angular_rate),
            ("capture_time", &m.capture_time),
        ];
        for (field, d) in fields {
            if let Some(d) = d {
                rows.push(DistributionRow {
                    method: m.method,
                    field,
                    n: d.n,
                    min: d.min,
                    q1: d.q1,
                    median: d.median,
                    q3: d.q3,
                    max: d.max,
                    mean: d.mean,
                    std: d.std,
                });
            }
        }
    }
    rows
}

/// Merges trial CSVs and writes `summary.json` and `distributions.csv`.
pub fn stats(inputs: &[PathBuf], cfg: &RunConfig, force: bool) -> Result<(PathBuf, BatchSummary)> {
    ensure!(!inputs.is_empty(), "stats needs at least one trial CSV");
    let mut records = Vec::new();
    for p in inputs {
        records.extend(crate::output::read_trials(p)?);
    }
    let summary = batch_stats(&records)?;
    let out = Staged::new(cfg.output_dir()?, force)?;
    echo_config(&out, cfg)?;
    write_json(&out.path("summary.json"), &summary)?;
    write_rows(&out.path("distributions.csv"), distribution_rows(&summary))?;
    Ok((out.commit()?, summary))
}
