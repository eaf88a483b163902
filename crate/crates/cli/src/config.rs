//! Run configuration: JSON file, then flags, then `CRITSYS_OUT`.

use std::path::{Path, PathBuf};

use clap::Args;
use critsys::radial::Grading;
use serde::{Deserialize, Serialize};

/// Everything a subcommand needs. Absent file fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub beta: Option<f64>,
    /// Absolute values; when absent `lambda_frac * λ1(ball)` is used.
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda_frac: f64,
    pub radius: f64,
    /// Grid cells and grading; each command has its own default.
    pub intervals: Option<usize>,
    pub grading: Option<Grading>,
    /// `auto`, `two-constraint`, `mountain-pass` or `subcritical`.
    pub mode: String,
    /// `auto`, `instanton:SCALE` or `bumps:SPLIT`.
    pub init: String,
    pub eps: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub betas: Vec<f64>,
    pub radii: Vec<f64>,
    pub branch_steps: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 6,
            mu1: 1.0,
            mu2: 1.0,
            beta: None,
            lambda1: None,
            lambda2: None,
            lambda_frac: -0.3,
            radius: 1.0,
            intervals: None,
            grading: None,
            mode: "auto".into(),
            init: "auto".into(),
            eps: vec![0.3, 0.1, 0.03],
            tol: 1e-7,
            max_iter: 100_000,
            betas: vec![-1.0, -10.0, -100.0, -1000.0, -10000.0],
            radii: vec![0.4, 0.3, 0.2, 0.15, 0.1, 0.07],
            branch_steps: 50,
            out: None,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long = "N", global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda2: Option<f64>,
    /// Both λi as a multiple of the ball's first Dirichlet eigenvalue.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda_frac: Option<f64>,
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    #[arg(long, global = true)]
    pub intervals: Option<usize>,
    /// `uniform`, `algebraic:POWER` or `exponential:RATE`.
    #[arg(long, global = true, value_parser = parse_grading)]
    pub grading: Option<Grading>,
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub init: Option<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub betas: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub branch_steps: Option<usize>,
    /// Output directory, created when missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

pub fn parse_grading(s: &str) -> Result<Grading, String> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let value = || {
        arg.parse::<f64>()
            .map_err(|e| format!("grading parameter {arg:?}: {e}"))
    };
    match kind {
        "uniform" => Ok(Grading::Uniform),
        "algebraic" => Ok(Grading::Algebraic { power: value()? }),
        "exponential" => Ok(Grading::Exponential { rate: value()? }),
        _ => Err(format!("unknown grading {kind:?}")),
    }
}

impl RunConfig {
    /// File (if any), then flags, then the `CRITSYS_OUT` override.
    pub fn resolve(flags: &ConfigFlags, env_out: Option<PathBuf>) -> Result<Self, String> {
        let mut c = match &flags.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = flags.$f.clone() { c.$f = v; })* };
        }
        set!(
            n,
            mu1,
            mu2,
            lambda_frac,
            radius,
            mode,
            init,
            eps,
            tol,
            max_iter
        );
        set!(betas, radii, branch_steps, seed, jobs);
        if flags.beta.is_some() {
            c.beta = flags.beta;
        }
        if flags.lambda1.is_some() {
            c.lambda1 = flags.lambda1;
        }
        if flags.lambda2.is_some() {
            c.lambda2 = flags.lambda2;
        }
        if flags.intervals.is_some() {
            c.intervals = flags.intervals;
        }
        if flags.grading.is_some() {
            c.grading = flags.grading;
        }
        if flags.out.is_some() {
            c.out = flags.out.clone();
        }
        if env_out.is_some() {
            c.out = env_out;
        }
        c.validate()?;
        Ok(c)
    }

    fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Checks that do not need a grid; admissibility of λ is checked by the solvers.
    pub fn validate(&self) -> Result<(), String> {
        if self.n < 5 {
            return Err(format!(
                "N = {} is not supported: the critical system is only posed for N >= 5",
                self.n
            ));
        }
        if !(self.mu1 > 0.0 && self.mu2 > 0.0) {
            return Err(format!(
                "mu1 = {} and mu2 = {} must be positive",
                self.mu1, self.mu2
            ));
        }
        if self.beta == Some(0.0) {
            return Err("beta must be nonzero".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(format!("radius = {} must be positive", self.radius));
        }
        if let Some(m) = self.intervals.filter(|&m| m < 16) {
            return Err(format!("intervals = {m} is below the minimum of 16"));
        }
        if !(self.lambda_frac > -1.0 && self.lambda_frac < 0.0) {
            return Err(format!(
                "lambda_frac = {} must lie in (-1, 0)",
                self.lambda_frac
            ));
        }
        if !(self.tol > 0.0) {
            return Err(format!("tol = {} must be positive", self.tol));
        }
        if self.jobs == 0 {
            return Err("jobs must be at least 1".into());
        }
        if !["auto", "two-constraint", "mountain-pass", "subcritical"].contains(&self.mode.as_str())
        {
            return Err(format!("unknown mode {:?}", self.mode));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("critsys-out"))
    }
}
