//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mavcap_core::ballistics::BallParams;
use mavcap_core::dynamics::MavParams;
use mavcap_core::env::{EpisodeConfig, Physics};
use mavcap_core::harness::Scenario;
use mavcap_core::launcher::LauncherParams;
use mavcap_core::planner::TopConfig;
use mavcap_core::ppo::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a command needs. Every section is optional in the file and
/// unknown keys are rejected.
///
/// The top-level `seed` drives every random stream of a run; it is copied
/// into `ppo.seed` when the configuration is resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub output: Option<PathBuf>,
    /// Policy checkpoint for `eval` and `simulate`.
    pub checkpoint: Option<PathBuf>,
    pub mav: MavParams,
    pub launcher: LauncherParams,
    pub ball: BallParams,
    pub top: TopConfig,
    pub env: EpisodeConfig,
    pub ppo: TrainConfig,
    pub scenario: Scenario,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub replan_period: Option<f64>,
    pub iterations: Option<usize>,
    pub trials: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads `path` (or starts from defaults), applies `overrides` and
    /// validates the result. Relative paths inside the file resolve against
    /// the file's directory.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
                let mut cfg = Self::from_toml(&text).with_context(|| format!("invalid config file {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                cfg.checkpoint = cfg.checkpoint.map(|c| base.join(c));
                cfg.output = cfg.output.map(|o| base.join(o));
                cfg
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        if let Some(c) = &o.checkpoint {
            self.checkpoint = Some(c.clone());
        }
        if let Some(r) = o.replan_period {
            self.top.replan_period = r;
        }
        if let Some(n) = o.iterations {
            self.ppo.iterations = n;
        }
        if let Some(n) = o.trials {
            self.scenario.trials = n;
        }
        self.ppo.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.physics()?;
        self.top.validate()?;
        self.env.validate()?;
        self.ppo.validate()?;
        self.scenario.validate()?;
        if self.top.sigma_d != self.env.sigma_d {
            bail!(
                "top.sigma_d ({}) and env.sigma_d ({}) must agree: both methods are scored against the same capture threshold",
                self.top.sigma_d,
                self.env.sigma_d
            );
        }
        if let Some(c) = &self.checkpoint {
            if !c.is_file() {
                bail!("checkpoint {} does not exist", c.display());
            }
        }
        Ok(())
    }

    pub fn physics(&self) -> Result<Physics> {
        Ok(Physics::new(self.mav, self.launcher, self.ball)?)
    }

    pub fn output_dir(&self) -> Result<&Path> {
        match &self.output {
            Some(o) => Ok(o),
            None => bail!("no output directory: pass --out or set `output` in the config"),
        }
    }
}
