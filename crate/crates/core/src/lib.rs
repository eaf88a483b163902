//! Least-energy solutions of the critically coupled Schrodinger system
//!
//! ```text
//! -Δu + λ1 u = μ1 u^(2p-1) + β u^(p-1) v^p
//! -Δv + λ2 v = μ2 v^(2p-1) + β v^(p-1) u^p,     2p = 2N/(N-2), N >= 5
//! ```
//!
//! on balls of R^N, together with the exact algebra of proportional solutions.
//! Everything numerical is generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64`.

pub mod banded;
pub mod coupling;
pub mod error;
pub mod experiments;
pub mod instanton;
pub mod radial;
pub mod real;
pub mod solver;

pub use coupling::Component;
pub use error::{CouplingError, GridError, SolverError};
pub use real::Real;

pub type SystemParams = coupling::SystemParams<f64>;
pub type CouplingSolution = coupling::CouplingSolution<f64>;
pub type RadialGrid = radial::RadialGrid<f64>;
pub type RadialField = radial::RadialField<f64>;
pub type FieldPair = solver::FieldPair<f64>;
pub type EnergyReport = solver::EnergyReport<f64>;
pub type SolverOptions = solver::SolverOptions<f64>;
pub type SobolevData = instanton::SobolevData<f64>;
pub type Instanton = instanton::Instanton<f64>;
