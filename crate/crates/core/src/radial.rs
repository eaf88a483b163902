//! Radial discretization of the ball `B(0, R)` in `R^N`.
//!
//! Unknowns live on nodes `r_0 = 0 < r_1 < ... < r_{M-1}`; the Dirichlet node
//! `r_M = R` carries the value 0. The Laplacian is the finite-volume form
//!
//! ```text
//! (Δ_h u)_i = [a_{i+1/2}(u_{i+1} - u_i) - a_{i-1/2}(u_i - u_{i-1})] / w_i
//! a_{i+1/2} = σ r_{i+1/2}^(N-1) / (r_{i+1} - r_i)
//! w_i       = σ (r_{i+1/2}^N - r_{i-1/2}^N) / N
//! ```
//!
//! with midpoints `r_{i+1/2}` and `r_{-1/2} = 0`. The weights `w_i` are the
//! volumes of the dual cells, so `Σ w_i = |B(0, R)|` exactly, and
//! `-Σ w_i u_i (Δ_h u)_i` is the discrete Dirichlet energy `Σ a (u_{i+1} - u_i)^2`.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::error::GridError;
use crate::real::{pow_pos, Real};

/// Node distribution on `[0, R]` as a map `s -> r/R` of `s = i/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    /// `r = R s^power`, clustering at the origin for `power > 1`.
    Algebraic {
        power: f64,
    },
    /// `r = R (e^(rate s) - 1)/(e^rate - 1)`, geometric growth away from the origin.
    Exponential {
        rate: f64,
    },
}

impl Grading {
    fn map<T: Real>(&self, s: T) -> T {
        match *self {
            Grading::Uniform => s,
            Grading::Algebraic { power } => pow_pos(s, T::lit(power)),
            Grading::Exponential { rate } => {
                let k = T::lit(rate);
                (k * s).exp_m1() / k.exp_m1()
            }
        }
    }

    fn validate(&self) -> Result<(), GridError> {
        match *self {
            Grading::Uniform => Ok(()),
            Grading::Algebraic { power } if power >= 1.0 && power.is_finite() => Ok(()),
            Grading::Exponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            Grading::Algebraic { power } => Err(GridError::BadGrading(power)),
            Grading::Exponential { rate } => Err(GridError::BadGrading(rate)),
        }
    }
}

/// Surface area `2 π^(N/2) / Γ(N/2)` of the unit sphere in `R^N`.
pub fn sphere_area<T: Real>(n: usize) -> T {
    let half_gamma = if n % 2 == 0 {
        // Γ(N/2) = (N/2 - 1)!
        (1..n / 2).fold(T::one(), |acc, j| acc * T::of_usize(j))
    } else {
        // Γ(m + 1/2) = sqrt(π) Π_{j=1..m} (j - 1/2)
        let m = (n - 1) / 2;
        (1..=m).fold(T::PI().sqrt(), |acc, j| {
            acc * (T::of_usize(j) - T::lit(0.5))
        })
    };
    T::lit(2.0) * pow_pos(T::PI(), T::of_usize(n) / T::lit(2.0)) / half_gamma
}

/// Volume of the unit ball in `R^N`.
pub fn unit_ball_volume<T: Real>(n: usize) -> T {
    sphere_area::<T>(n) / T::of_usize(n)
}

/// Immutable radial grid with precomputed finite-volume coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid<T> {
    #[serde(rename = "N")]
    n: usize,
    radius: T,
    grading: Grading,
    nodes: Vec<T>,
    #[serde(skip)]
    sigma: T,
    #[serde(skip)]
    weights: Vec<T>,
    #[serde(skip)]
    flux: Vec<T>,
}

impl<T: Real> RadialGrid<T> {
    /// Grid with `intervals` cells (`intervals` unknowns plus the Dirichlet node).
    pub fn new(n: usize, radius: T, intervals: usize, grading: Grading) -> Result<Self, GridError> {
        if intervals < 16 {
            return Err(GridError::TooFewNodes(intervals));
        }
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(GridError::BadRadius(radius.as_f64()));
        }
        grading.validate()?;
        let m = intervals;
        let mut nodes: Vec<T> = (0..=m)
            .map(|i| radius * grading.map(T::of_usize(i) / T::of_usize(m)))
            .collect();
        nodes[0] = T::zero();
        nodes[m] = radius;
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GridError::BadGrading(match grading {
                Grading::Uniform => 0.0,
                Grading::Algebraic { power } => power,
                Grading::Exponential { rate } => rate,
            }));
        }
        Ok(Self::from_nodes(n, grading, nodes))
    }

    /// Same as [`RadialGrid::new`], wrapped for sharing between fields.
    pub fn shared(
        n: usize,
        radius: T,
        intervals: usize,
        grading: Grading,
    ) -> Result<Arc<Self>, GridError> {
        Self::new(n, radius, intervals, grading).map(Arc::new)
    }

    fn from_nodes(n: usize, grading: Grading, nodes: Vec<T>) -> Self {
        let m = nodes.len() - 1;
        let sigma = sphere_area::<T>(n);
        let dim = T::of_usize(n);
        let half = T::lit(0.5);
        let mids: Vec<T> = nodes.windows(2).map(|w| (w[0] + w[1]) * half).collect();
        // Exact stiffness of piecewise-linear radial hats:
        // sigma (r1^N - r0^N) / (N h^2), with the difference quotient expanded.
        let flux = (0..m)
            .map(|i| {
                let (a, b) = (nodes[i], nodes[i + 1]);
                let mut avg = T::zero();
                let mut pa = T::one();
                for k in 0..n {
                    avg += pa * b.powi((n - 1 - k) as i32);
                    pa *= a;
                }
                sigma * avg / (dim * (b - a))
            })
            .collect();
        let weights = (0..=m)
            .map(|i| {
                let outer = if i == m { nodes[m] } else { mids[i] };
                let inner = if i == 0 { T::zero() } else { mids[i - 1] };
                sigma * (outer.powi(n as i32) - inner.powi(n as i32)) / dim
            })
            .collect();
        RadialGrid {
            n,
            radius: nodes[m],
            grading,
            nodes,
            sigma,
            weights,
            flux,
        }
    }

    /// Same nodes stretched to radius `radius`.
    pub fn rescaled(&self, radius: T) -> Result<Self, GridError> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(GridError::BadRadius(radius.as_f64()));
        }
        let s = radius / self.radius;
        let mut nodes: Vec<T> = self.nodes.iter().map(|&r| r * s).collect();
        *nodes.last_mut().unwrap() = radius;
        Ok(Self::from_nodes(self.n, self.grading, nodes))
    }

    /// Grid with every cell split at its midpoint.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push((w[0] + w[1]) * T::lit(0.5));
        }
        nodes.push(self.radius);
        Self::from_nodes(self.n, self.grading, nodes)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    /// Number of cells `M`, equal to the number of unknowns.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// All nodes including the Dirichlet node.
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// Dual-cell volumes for all nodes including the Dirichlet node.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Flux coefficients `a_{i+1/2}`, one per cell.
    pub fn flux(&self) -> &[T] {
        &self.flux
    }

    pub fn sphere_area(&self) -> T {
        self.sigma
    }

    /// Largest ratio of neighbouring cell widths.
    pub fn max_spacing_ratio(&self) -> T {
        let h: Vec<T> = self.nodes.windows(2).map(|w| w[1] - w[0]).collect();
        h.windows(2)
            .map(|w| (w[1] / w[0]).max(w[0] / w[1]))
            .fold(T::one(), T::max)
    }

    /// Largest cell width.
    pub fn max_spacing(&self) -> T {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(T::zero(), T::max)
    }

    /// `∫_{B(0,R)} f(|x|) dx` by the dual-cell rule.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * f(r))
            .sum()
    }

    /// `Σ w_i g(u_i)` over the unknowns, for a nodal field `u`.
    pub fn integrate_values<F: Fn(T) -> T>(&self, u: &[T], g: F) -> T {
        u.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    /// `K u`, where `u^T K u` is the discrete Dirichlet energy.
    pub fn apply_stiffness(&self, u: &[T]) -> Vec<T> {
        let m = self.intervals();
        let mut out = vec![T::zero(); m];
        for i in 0..m {
            let right = if i + 1 < m { u[i + 1] } else { T::zero() };
            let d = self.flux[i] * (u[i] - right);
            out[i] += d;
            if i + 1 < m {
                out[i + 1] -= d;
            }
        }
        out
    }

    /// `Σ a_{i+1/2} (u_{i+1} - u_i)^2 ≈ ∫|∇u|^2`.
    pub fn dirichlet_energy(&self, u: &[T]) -> T {
        let m = self.intervals();
        (0..m)
            .map(|i| {
                let right = if i + 1 < m { u[i + 1] } else { T::zero() };
                self.flux[i] * (right - u[i]).powi(2)
            })
            .sum()
    }

    /// Tridiagonal `K + c W` in banded storage.
    pub fn stiffness_plus_mass(&self, c: T) -> BandedMatrix<T> {
        let m = self.intervals();
        let mut a = BandedMatrix::zeros(m, 1, 1);
        for i in 0..m {
            a.add(i, i, c * self.weights[i] + self.flux[i]);
            if i > 0 {
                a.add(i, i, self.flux[i - 1]);
                a.add(i, i - 1, -self.flux[i - 1]);
                a.add(i - 1, i, -self.flux[i - 1]);
            }
        }
        a
    }
}

/// Nodal values of a radial function vanishing at `r = R`.
#[derive(Debug, Clone)]
pub struct RadialField<T> {
    grid: Arc<RadialGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> RadialField<T> {
    pub fn zeros(grid: Arc<RadialGrid<T>>) -> Self {
        let m = grid.intervals();
        RadialField {
            grid,
            values: vec![T::zero(); m],
        }
    }

    /// Samples `f` at the unknown nodes; the boundary value is forced to 0.
    pub fn from_fn<F: Fn(T) -> T>(grid: Arc<RadialGrid<T>>, f: F) -> Self {
        let m = grid.intervals();
        let values = grid.nodes()[..m].iter().map(|&r| f(r)).collect();
        RadialField { grid, values }
    }

    pub fn from_values(grid: Arc<RadialGrid<T>>, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != grid.intervals() {
            return Err(GridError::Length {
                expected: grid.intervals(),
                got: values.len(),
            });
        }
        Ok(RadialField { grid, values })
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Value at node `i`, including the Dirichlet node.
    pub fn at(&self, i: usize) -> T {
        self.values.get(i).copied().unwrap_or(T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &RadialField<T>) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// Writes `r,value` rows for every node, the boundary node included.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,value")?;
        for (i, r) in self.grid.nodes().iter().enumerate() {
            writeln!(out, "{},{}", r, self.at(i))?;
        }
        Ok(())
    }
}

/// Finite-volume Laplacian with the Dirichlet condition at `r = R`.
///
/// At the origin the stencil reduces to `N u''(0)` for smooth `u`.
pub fn laplacian<T: Real>(field: &RadialField<T>) -> RadialField<T> {
    let grid = field.grid();
    let ku = grid.apply_stiffness(field.values());
    let values = ku
        .iter()
        .zip(grid.weights())
        .map(|(&k, &w)| -k / w)
        .collect();
    RadialField {
        grid: grid.clone(),
        values,
    }
}

/// `∫ g(u) dx` over the ball for a field `u`.
pub fn integrate<T: Real, F: Fn(T) -> T>(field: &RadialField<T>, g: F) -> T {
    let grid = field.grid();
    let m = grid.intervals();
    grid.integrate_values(field.values(), &g) + grid.weights()[m] * g(T::zero())
}

/// Nodal radial derivative at every node (three-point formulas, `u'(0) = 0`).
pub fn gradient<T: Real>(field: &RadialField<T>) -> Vec<T> {
    let r = field.grid().nodes();
    let m = r.len() - 1;
    let u = |i: usize| field.at(i);
    let mut d = vec![T::zero(); m + 1];
    for i in 1..m {
        let h0 = r[i] - r[i - 1];
        let h1 = r[i + 1] - r[i];
        d[i] = -h1 / (h0 * (h0 + h1)) * u(i - 1)
            + (h1 - h0) / (h0 * h1) * u(i)
            + h0 / (h1 * (h0 + h1)) * u(i + 1);
    }
    let h1 = r[m] - r[m - 1];
    let h2 = r[m - 1] - r[m - 2];
    d[m] = (T::lit(2.0) * h1 + h2) / (h1 * (h1 + h2)) * u(m) - (h1 + h2) / (h1 * h2) * u(m - 1)
        + h1 / (h2 * (h1 + h2)) * u(m - 2);
    d
}

/// `∫|∇u|^2` from the nodal derivative, independent of the Laplacian stencil.
pub fn gradient_quadrature<T: Real>(field: &RadialField<T>) -> T {
    let d = gradient(field);
    d.iter()
        .zip(field.grid().weights())
        .map(|(&g, &w)| w * g * g)
        .sum()
}

/// First Dirichlet eigenpair of `-Δ_h` by inverse power iteration on `K x = λ W x`.
pub fn first_eigenpair<T: Real>(
    grid: &Arc<RadialGrid<T>>,
) -> Result<(T, RadialField<T>), GridError> {
    let m = grid.intervals();
    let w = &grid.weights()[..m];
    let lu = grid.stiffness_plus_mass(T::zero()).factor()?;
    let r = grid.radius();
    let mut x: Vec<T> = grid.nodes()[..m]
        .iter()
        .map(|&ri| T::one() - (ri / r).powi(2))
        .collect();
    let mut lambda = T::zero();
    let tol = T::lit(1e-13).max(T::lit(64.0) * T::epsilon());
    const MAX_ITER: usize = 10_000;
    for _ in 0..MAX_ITER {
        let mut y: Vec<T> = x.iter().zip(w).map(|(&a, &b)| a * b).collect();
        lu.solve_in_place(&mut y);
        let ky = grid.apply_stiffness(&y);
        let num: T = ky.iter().zip(&y).map(|(&a, &b)| a * b).sum();
        let den: T = y.iter().zip(w).map(|(&a, &b)| a * a * b).sum();
        let next = num / den;
        let norm = den.sqrt();
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= tol * next {
            let field = RadialField::from_values(grid.clone(), x)?;
            return Ok((next, field));
        }
        lambda = next;
    }
    Err(GridError::Eigen(MAX_ITER))
}

/// `λ1(B(0, R))` of the discrete operator.
pub fn first_eigenvalue<T: Real>(grid: &Arc<RadialGrid<T>>) -> Result<T, GridError> {
    first_eigenpair(grid).map(|(l, _)| l)
}
