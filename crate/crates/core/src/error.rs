//! Error types.

use thiserror::Error;

/// Failures of parameter validation and of the algebraic coupling routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("dimension N = {0} is not allowed, the system requires N >= 5")]
    Dimension(usize),
    #[error("mu1 = {mu1} and mu2 = {mu2} must both be positive")]
    NonPositiveMu { mu1: f64, mu2: f64 },
    #[error("parameter {name} = {value} is not finite")]
    NotFinite { name: &'static str, value: f64 },
    #[error("{what} is undefined at {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("beta = {0} must be positive here")]
    NeedPositiveBeta(f64),
    #[error("no sign change of f on a {points}-point logarithmic scan of (0, {k_max}]")]
    Bracket { points: usize, k_max: f64 },
    #[error("root polish left residual {0:e}")]
    Residual(f64),
    #[error("branch continuation failed beyond beta = {last_beta}")]
    Continuation { last_beta: f64 },
    #[error("no closed form for A when 0 < beta = {beta} < {lower}")]
    NoClosedForm { beta: f64, lower: f64 },
}

/// Failures of the radial grid and the linear algebra built on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("a radial grid needs at least 16 intervals, got {0}")]
    TooFewNodes(usize),
    #[error("ball radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("grading parameter {0} is invalid")]
    BadGrading(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field has {got} values, grid expects {expected}")]
    Length { expected: usize, got: usize },
    #[error("inverse iteration did not converge in {0} iterations")]
    Eigen(usize),
    #[error("singular matrix at pivot {0}")]
    Singular(usize),
}

/// Failures of the variational solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Params(#[from] CouplingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("lambda = {lambda} must lie in (-{lambda1_omega}, 0)")]
    Admissibility { lambda: f64, lambda1_omega: f64 },
    #[error("beta must be nonzero")]
    ZeroBeta,
    #[error("cannot project onto the Nehari set: {0}")]
    Projection(&'static str),
    #[error(
        "no convergence after {iterations} iterations (residual {residual:e}, energy {energy})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        energy: f64,
    },
    #[error("subcritical parameter eps = {0} must lie in (0, p - 1)")]
    BadEps(f64),
    #[error("at beta = {beta}: {source}")]
    AtBeta {
        beta: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error("at R = {radius}: {source}")]
    AtRadius {
        radius: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error("{0}")]
    Input(String),
}

impl SolverError {
    /// True when the error is (or wraps) a convergence failure rather than bad input.
    pub fn is_convergence(&self) -> bool {
        match self {
            SolverError::NotConverged { .. } | SolverError::Projection(_) => true,
            SolverError::AtBeta { source, .. } | SolverError::AtRadius { source, .. } => {
                source.is_convergence()
            }
            _ => false,
        }
    }
}
