//! The subcommands. Each returns the JSON result or a classified failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use critsys::coupling::{
    beta0_target, check_region_uniqueness, continue_branch, jacobian_at, solve_beta0, solve_k0_l0,
};
use critsys::experiments::{
    beta_sweep_with, sign_changing_check, small_ball_law_with, tail_ratio, threshold_report,
    write_sweep_csv, SmallBallFit, SmallBallOptions, SweepOptions,
};
use critsys::instanton::sobolev_data;
use critsys::radial::{first_eigenvalue, Grading};
use critsys::solver::{solve_coupled_with, subcritical_chain, Init, Mode, SolveContext};
use critsys::{CouplingError, GridError, RadialGrid, SolverError, SolverOptions, SystemParams};
use serde_json::{json, Value};

use crate::config::RunConfig;

/// A failed run and its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Algebra(String),
    Solver(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Algebra(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Algebra(_) => "algebra",
            Failure::Solver(_) => "solver",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Algebra(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let numerical = e.is_convergence()
            || matches!(
                e,
                SolverError::Grid(GridError::Eigen(_) | GridError::Singular(_))
            );
        if numerical {
            Failure::Solver(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

/// A result and the file its JSON envelope goes to, if any.
pub struct Output {
    pub result: Value,
    pub json_path: Option<PathBuf>,
}

pub type Outcome = Result<Output, Failure>;

fn done(result: Value, json_path: Option<PathBuf>) -> Outcome {
    Ok(Output { result, json_path })
}

fn grid(c: &RunConfig, intervals: usize, grading: Grading) -> Result<Arc<RadialGrid>, Failure> {
    let m = c.intervals.unwrap_or(intervals);
    let g = c.grading.unwrap_or(grading);
    RadialGrid::shared(c.n, c.radius, m, g).map_err(|e| Failure::Config(e.to_string()))
}

/// Parameters with each λi either given or `lambda_frac` times λ1 of the grid's ball.
fn pde_params(c: &RunConfig, g: &Arc<RadialGrid>, beta: f64) -> Result<SystemParams, Failure> {
    let l1 = first_eigenvalue(g).map_err(SolverError::from)?;
    let lam = |given: Option<f64>| given.unwrap_or(c.lambda_frac * l1);
    SystemParams::new(c.n, c.mu1, c.mu2, beta, lam(c.lambda1), lam(c.lambda2))
        .map_err(|e| Failure::Config(e.to_string()))
}

fn solver_options(c: &RunConfig) -> SolverOptions {
    SolverOptions {
        tol: c.tol,
        max_iter: c.max_iter,
        ..SolverOptions::default()
    }
}

fn parse_init(s: &str) -> Result<Init<f64>, Failure> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let value = |default: f64| {
        if arg.is_empty() {
            Ok(default)
        } else {
            arg.parse::<f64>()
                .map_err(|e| Failure::Config(format!("init parameter {arg:?}: {e}")))
        }
    };
    match kind {
        "auto" => Ok(Init::Auto),
        "instanton" => Ok(Init::InstantonPair { scale: value(0.3)? }),
        "bumps" => Ok(Init::DisjointBumps { split: value(0.3)? }),
        _ => Err(Failure::Config(format!("unknown init {s:?}"))),
    }
}

fn out_dir(c: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = c.out_dir();
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn write_file(
    dir: &Path,
    name: &str,
    write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<String, Failure> {
    let mut buf = Vec::new();
    let path = dir.join(name);
    write(&mut buf).map_err(|e| io_failure(&path, e))?;
    fs::write(&path, buf).map_err(|e| io_failure(&path, e))?;
    Ok(path.display().to_string())
}

fn to_json<S: serde::Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("serializable result")
}

fn required_beta(c: &RunConfig) -> Result<f64, Failure> {
    c.beta
        .ok_or_else(|| Failure::Config("--beta is required".into()))
}

pub fn coupling(c: &RunConfig) -> Outcome {
    let algebra = |e: CouplingError| Failure::Algebra(e.to_string());
    let base = SystemParams::algebraic(c.n, c.mu1, c.mu2, c.beta.unwrap_or(1.0))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let beta0 = solve_beta0(&base).map_err(algebra)?;
    let mut out = json!({
        "p": base.p(),
        "classification_floor": base.classification_floor(),
        "beta0": beta0,
        "beta0_target": beta0_target(&base),
    });
    let Some(beta) = c.beta else {
        return done(out, None);
    };
    if beta < 0.0 {
        out["note"] = json!("no proportional positive solution is sought for beta < 0");
        return done(out, None);
    }
    let sol = solve_k0_l0(&base).map_err(algebra)?;
    let jac = jacobian_at(&base, &sol).map_err(algebra)?;
    out["solution"] = to_json(&sol);
    out["jacobian"] = to_json(&jac);
    if beta >= base.classification_floor() {
        let u = check_region_uniqueness(&base, &sol, 10_000).map_err(algebra)?;
        out["uniqueness"] = to_json(&u);
    }
    if c.out.is_some() {
        let dir = out_dir(c)?;
        // The table is optional; a fold on the way up is reported, not fatal.
        match continue_branch(&base, beta, c.branch_steps) {
            Ok(branch) => {
                let path = write_file(&dir, "branch.csv", |buf| {
                    writeln!(buf, "beta,k,l,residual,exceeds_single_bubble")?;
                    for b in &branch {
                        let s = &b.solution;
                        writeln!(
                            buf,
                            "{},{},{},{},{}",
                            b.beta, s.k, s.l, s.residual, b.exceeds_single_bubble
                        )?;
                    }
                    Ok(())
                })?;
                out["branch_csv"] = json!(path);
            }
            Err(e) => out["branch_error"] = json!(e.to_string()),
        }
        return done(out, Some(dir.join("coupling.json")));
    }
    done(out, None)
}

pub fn solve(c: &RunConfig) -> Outcome {
    let beta = required_beta(c)?;
    let g = grid(c, 512, Grading::Algebraic { power: 1.5 })?;
    let p = pde_params(c, &g, beta)?;
    if c.mode == "subcritical" {
        if c.eps.is_empty() {
            return Err(Failure::Config("--eps needs at least one value".into()));
        }
        let chain = subcritical_chain(&p, &g, &c.eps)?;
        let dir = out_dir(c)?;
        let mut stages = Vec::new();
        for (i, stage) in chain.iter().enumerate() {
            let path = write_file(&dir, &format!("stage_{i}.csv"), |buf| {
                stage.pair.write_csv(buf)
            })?;
            stages.push(json!({ "epsilon": stage.epsilon, "pair_csv": path, "report": to_json(&stage.report) }));
        }
        let out = json!({ "params": to_json(&p), "stages": stages });
        return done(out, Some(dir.join("report.json")));
    }
    let mode = match c.mode.as_str() {
        "two-constraint" => Mode::TwoConstraint,
        "mountain-pass" => Mode::MountainPass,
        _ => Mode::natural_for(beta),
    };
    let init = parse_init(&c.init)?;
    let ctx = SolveContext::new(&p, &g)?;
    let (pair, report) = solve_coupled_with(&p, &ctx, mode, init, &solver_options(c))?;
    let dir = out_dir(c)?;
    let path = write_file(&dir, "pair.csv", |buf| pair.write_csv(buf))?;
    let out = json!({
        "params": to_json(&p),
        "pair_csv": path,
        "report": to_json(&report),
        "thresholds": to_json(&threshold_report(&p, &report)),
    });
    done(out, Some(dir.join("report.json")))
}

pub fn sweep(c: &RunConfig) -> Outcome {
    let betas = &c.betas;
    if betas.is_empty() || betas.iter().any(|&b| b == 0.0) {
        return Err(Failure::Config("--betas needs nonzero values".into()));
    }
    let g = grid(c, 512, Grading::Algebraic { power: 1.5 })?;
    let p = pde_params(c, &g, betas[0])?;
    let opts = SweepOptions {
        solver: solver_options(c),
        ..SweepOptions::default()
    };
    let results = beta_sweep_with(&p, &g, betas, &opts)?;
    let dir = out_dir(c)?;
    let csv = write_file(&dir, "sweep.csv", |buf| write_sweep_csv(&results, buf))?;
    let last = results.last().expect("nonempty sweep");
    let mut out = json!({
        "params": to_json(&p),
        "sweep_csv": csv,
        "points": to_json(&results),
        "tail_ratio": tail_ratio(&results),
    });
    if let (Some(pair), Some(report)) = (&last.pair, &last.report) {
        let sobolev = sobolev_data(c.n).map_err(|e| Failure::Config(e.to_string()))?;
        let check = sign_changing_check(&p.with_beta(last.beta), pair, report.b_mu1, &sobolev);
        out["sign_changing"] = to_json(&check);
        out["last_pair_csv"] =
            json!(write_file(&dir, "sweep_last_pair.csv", |buf| pair.write_csv(buf))?);
    }
    done(out, Some(dir.join("sweep.json")))
}

fn write_small_ball_csv(fit: &SmallBallFit<f64>, buf: &mut Vec<u8>) -> std::io::Result<()> {
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    writeln!(buf, "radius,J_R,J_R_coarse,J_R_fine,deficit,used_in_fit")?;
    for q in &fit.points {
        writeln!(
            buf,
            "{},{},{},{},{},{}",
            q.radius,
            cell(q.j_r),
            cell(q.j_r_coarse),
            cell(q.j_r_fine),
            cell(q.deficit),
            q.used_in_fit
        )?;
    }
    Ok(())
}

pub fn small_ball(c: &RunConfig) -> Outcome {
    let defaults = SmallBallOptions::default();
    let opts = SmallBallOptions {
        intervals: c.intervals.unwrap_or(defaults.intervals),
        grading: c.grading.unwrap_or(defaults.grading),
        richardson: true,
        parallel: c.jobs > 1,
    };
    let g = grid(c, opts.intervals, opts.grading)?;
    let p = pde_params(c, &g, c.beta.unwrap_or(1.0))?;
    let fit = small_ball_law_with(&p, &c.radii, &opts)?;
    let dir = out_dir(c)?;
    let csv = write_file(&dir, "smallball.csv", |buf| write_small_ball_csv(&fit, buf))?;
    let out = json!({ "params": to_json(&p), "smallball_csv": csv, "fit": to_json(&fit) });
    done(out, Some(dir.join("smallball.json")))
}

pub fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value")
}
