//! Experiment configuration: what to run, with which parameters and seed.
//!
//! Configs are plain JSON. A run manifest embeds its config under `config`,
//! and [`load_config`] accepts either form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twosize::analytics::DEFAULT_TOL;
use twosize::{Method, RhoSpec, SizeParams, StoppingRule};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Data file; standard output when absent (no manifest is written then).
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Extinction,
    Absorption,
    Stationary,
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    /// Finite-model trajectories.
    Simulate {
        x0: f64,
        gens: u64,
        reps: u64,
        #[serde(default)]
        rule: StoppingRule,
    },
    /// Euler–Maruyama paths, or a hitting-time summary when `max_t` is set.
    Sde {
        x0: f64,
        h: f64,
        t_end: f64,
        reps: u64,
        #[serde(default)]
        rule: StoppingRule,
        #[serde(default)]
        max_t: Option<f64>,
    },
    /// Scaled one-step moments on a uniform grid.
    DriftScan {
        grid: usize,
        nsim: u64,
        order: u32,
        #[serde(default)]
        rule: StoppingRule,
        #[serde(default = "default_method")]
        method: Method,
    },
    /// Exact law of the generation produced by one renewal run at probability `p`.
    Renewal {
        p: f64,
        #[serde(default)]
        rule: StoppingRule,
    },
    Analytics {
        quantity: Quantity,
        grid: usize,
        #[serde(default)]
        s: f64,
        #[serde(default)]
        beta0: f64,
        #[serde(default)]
        beta1: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default)]
        rule: StoppingRule,
    },
    Validate {
        /// Criterion groups or numbers; everything when empty.
        #[serde(default)]
        only: Vec<String>,
        /// Extra seeds for the Monte Carlo criteria (the root seed always runs).
        #[serde(default)]
        extra_seeds: Vec<u64>,
    },
}

fn default_method() -> Method {
    Method::Mc
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub params: SizeParams,
    #[serde(default = "neutral")]
    pub rho: RhoSpec,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
    /// Worker threads; the machine default when absent. Never changes results.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn neutral() -> RhoSpec {
    RhoSpec::Neutral
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite (got {v})")))
    }
}

fn unit(name: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must lie in [0,1] (got {v})")))
    }
}

impl ExperimentConfig {
    /// Checks every numeric field against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<(), CliError> {
        SizeParams::with_theta(self.params.theta, self.params.resources)?;
        self.rho.validate()?;
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        match &self.command {
            Command::Simulate { x0, reps, .. } => {
                unit("x0", *x0)?;
                if *reps == 0 {
                    return Err(CliError::Config("reps must be at least 1".into()));
                }
            }
            Command::Sde { x0, h, t_end, reps, max_t, .. } => {
                unit("x0", *x0)?;
                positive("h", *h)?;
                if max_t.is_none() {
                    positive("t_end", *t_end)?;
                }
                if let Some(m) = max_t {
                    positive("max_t", *m)?;
                }
                if *reps == 0 {
                    return Err(CliError::Config("reps must be at least 1".into()));
                }
            }
            Command::DriftScan { grid, nsim, order, method, .. } => {
                if *grid == 0 {
                    return Err(CliError::Config("grid must have at least one point".into()));
                }
                if !(1..=4).contains(order) {
                    return Err(twosize::Error::UnsupportedOrder(*order).into());
                }
                if *method == Method::Mc && *nsim < 2 {
                    return Err(CliError::Config("nsim must be at least 2".into()));
                }
            }
            Command::Renewal { p, .. } => unit("p", *p)?,
            Command::Analytics { grid, tol, beta0, beta1, .. } => {
                if *grid == 0 {
                    return Err(CliError::Config("grid must have at least one point".into()));
                }
                positive("tol", *tol)?;
                if *beta0 < 0.0 || *beta1 < 0.0 {
                    return Err(CliError::Config("mutation rates must be >= 0".into()));
                }
            }
            Command::Validate { .. } => {}
        }
        Ok(())
    }
}

/// Reads a config, or the config embedded in a run manifest.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
