use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mavcap::commands::{self, PlanStatus};
use mavcap::{Overrides, RayonExecutor, RunConfig};

/// Quadrotor ball-launch capture: time-optimal planning, PPO training and
/// scenario statistics.
///
/// Configuration precedence: built-in defaults < `--config` file < flags.
#[derive(Debug, Parser)]
#[command(name = "mavcap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (must be empty or absent unless --force).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the capture program from each scenario start and fly it with
    /// receding replanning. Exits 2 if a program is infeasible.
    Plan {
        /// Replanning period [s].
        #[arg(long)]
        replan: Option<f64>,
    },
    /// Train a policy with PPO.
    Train {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run the scenario trials and write per-trial records and statistics.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write per-step logs of individual scenario trials.
    Simulate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Merge trial CSVs into summary statistics.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut o = Overrides {
        seed: cli.common.seed,
        output: cli.common.out.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Plan { replan } => o.replan_period = *replan,
        Command::Train { iterations } => o.iterations = *iterations,
        Command::Eval { checkpoint, trials } | Command::Simulate { checkpoint, trials } => {
            o.checkpoint = checkpoint.clone();
            o.trials = *trials;
        }
        Command::Stats { .. } => {}
    }
    let cfg = RunConfig::load(cli.common.config.as_deref(), &o)?;
    let exec = RayonExecutor::new(cli.common.threads)?;
    let force = cli.common.force;
    match cli.command {
        Command::Plan { .. } => {
            let (dir, status) = commands::plan(&cfg, &exec, force)?;
            eprintln!("wrote {}", dir.display());
            if status == PlanStatus::Infeasible {
                eprintln!("error: at least one capture program is infeasible (see solution.json)");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Train { .. } => {
            let dir = commands::train(&cfg, &exec, force, |l| {
                let eval = l.eval_success.map(|s| format!(" eval success {:.2}", s)).unwrap_or_default();
                eprintln!(
                    "iter {:4} steps {:8} reward {:9.3} kl {:.4}{eval}",
                    l.iteration, l.env_steps, l.mean_reward, l.approx_kl
                );
            })?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Eval { .. } => {
            let (dir, records) = commands::eval(&cfg, &exec, force)?;
            let ok = records.iter().filter(|r| r.success).count();
            eprintln!("{ok}/{} trials captured; wrote {}", records.len(), dir.display());
        }
        Command::Simulate { .. } => {
            let dir = commands::simulate(&cfg, &exec, force)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Stats { inputs } => {
            let (dir, _) = commands::stats(&inputs, &cfg, force)?;
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
