//! Least-energy solutions on a radial grid.
//!
//! The discrete functional is
//!
//! ```text
//! E(u, v) = ½(Q1 + Q2) - (1/q)(M1 + 2X + M2)
//! Q1 = u^T K u + λ1 Σ w u²,  M1 = μ1 Σ w |u|^q,  X = β Σ w |u|^(q/2) |v|^(q/2)
//! ```
//!
//! with `q = 2p` (critical) or `q = 2p - 2ε` (subcritical). States are kept
//! nonnegative and on a Nehari set; the minimization alternates preconditioned
//! projected descent with a damped Newton polish of the Euler–Lagrange system.

use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::{BandedMatrix, EquilibratedLu};
use crate::coupling::{solve_k0_l0, Component, SystemParams};
use crate::error::SolverError;
use crate::instanton::{limit_energy_a, sobolev_data, Instanton, SobolevData};
use crate::radial::{first_eigenvalue, RadialField, RadialGrid};
use crate::real::{pow_pos, Real};

/// Which Nehari set the flow is projected on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Both component constraints, `Q1 = M1 + X` and `Q2 = M2 + X`.
    TwoConstraint,
    /// The combined constraint `Q1 + Q2 = M1 + 2X + M2` (mountain-pass level).
    MountainPass,
}

impl Mode {
    /// Two constraints for repulsive coupling, the combined one otherwise.
    pub fn natural_for<T: Real>(beta: T) -> Self {
        if beta < T::zero() {
            Mode::TwoConstraint
        } else {
            Mode::MountainPass
        }
    }
}

/// Starting state of [`solve_coupled`].
#[derive(Debug, Clone)]
pub enum Init<T> {
    /// `(sqrt(k0) U_ε, sqrt(l0) U_ε)` times `(1 - r²/R²)`, `ε = scale R`.
    /// Falls back to `μi^(-(N-2)/4) U_ε` when `β <= 0`.
    InstantonPair { scale: T },
    /// `u` a bump on `[0, split R]`, `v` a bump on the annulus `[split R, R]`.
    DisjointBumps { split: T },
    /// Both presets above with their default shapes; the lower resolved energy wins.
    Auto,
    /// Explicit state, e.g. a warm start.
    Pair(FieldPair<T>),
}

/// Stopping rules and line-search constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<T> {
    /// Discrete L² residual of each Euler–Lagrange equation.
    pub tol: T,
    /// Relative energy change allowed over `energy_window` accepted steps.
    pub energy_tol: T,
    pub energy_window: usize,
    pub max_iter: usize,
    pub armijo: T,
    pub min_step: T,
    /// Attempt a Newton polish every this many descent steps.
    pub newton_every: usize,
    pub newton_max_iter: usize,
    pub newton: bool,
    /// Add the repulsive-coupling curvature to the descent metric.
    pub coupling_metric: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            tol: T::lit(1e-7),
            energy_tol: T::lit(1e-12),
            energy_window: 10,
            max_iter: 100_000,
            armijo: T::lit(1e-4),
            min_step: T::lit(1e-14),
            newton_every: 100,
            newton_max_iter: 60,
            newton: true,
            coupling_metric: true,
        }
    }
}

impl<T: Real> SolverOptions<T> {
    /// Defaults with the scalar residual target `1e-8`.
    pub fn scalar() -> Self {
        SolverOptions {
            tol: T::lit(1e-8),
            ..Self::default()
        }
    }
}

/// Integrals that define energy and constraints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Integrals<T> {
    pub q1: T,
    pub q2: T,
    pub m1: T,
    pub m2: T,
    pub x: T,
}

/// State `(u, v)` of the coupled solver with cached integrals.
#[derive(Debug, Clone)]
pub struct FieldPair<T> {
    pub u: RadialField<T>,
    pub v: RadialField<T>,
    integrals: Integrals<T>,
}

impl<T: Real> FieldPair<T> {
    pub fn new(
        params: &SystemParams<T>,
        u: RadialField<T>,
        v: RadialField<T>,
    ) -> Result<Self, SolverError> {
        if !u.same_grid(&v) {
            return Err(crate::error::GridError::GridMismatch.into());
        }
        let engine = Engine::critical(params, u.grid(), 2, Mode::TwoConstraint);
        let integrals = engine.integrals(&[u.values().to_vec(), v.values().to_vec()]);
        Ok(FieldPair { u, v, integrals })
    }

    pub fn integrals(&self) -> Integrals<T> {
        self.integrals
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        self.u.grid()
    }

    /// Recomputes the cached integrals for new parameters.
    pub fn refresh(&mut self, params: &SystemParams<T>) {
        let engine = Engine::critical(params, self.u.grid(), 2, Mode::TwoConstraint);
        self.integrals = engine.integrals(&[self.u.values().to_vec(), self.v.values().to_vec()]);
    }

    /// Writes `r,u,v` rows for every node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,u,v")?;
        for (i, r) in self.grid().nodes().iter().enumerate() {
            writeln!(out, "{},{},{}", r, self.u.at(i), self.v.at(i))?;
        }
        Ok(())
    }

    fn state(&self) -> Vec<Vec<T>> {
        vec![self.u.values().to_vec(), self.v.values().to_vec()]
    }
}

/// One inequality `value < bound` of a threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold<T> {
    pub name: String,
    pub value: T,
    pub bound: T,
    /// `bound - value`; positive when the inequality holds.
    pub margin: T,
    pub holds: bool,
}

/// Energy quantities of one coupled solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport<T> {
    #[serde(rename = "B")]
    pub b: T,
    /// `(1/N)(Q1 + Q2)` (critical) or `(1/2 - 1/q)(Q1 + Q2)` (subcritical).
    pub b_identity: T,
    #[serde(rename = "B_mu1")]
    pub b_mu1: T,
    #[serde(rename = "B_mu2")]
    pub b_mu2: T,
    /// Limit energy on `R^N` when a closed form exists.
    #[serde(rename = "A")]
    pub a: Option<T>,
    #[serde(rename = "S")]
    pub s: T,
    pub lambda1_omega: T,
    pub thresholds: Vec<Threshold<T>>,
    pub residual_u: T,
    pub residual_v: T,
    pub residual_norm: T,
    /// Relative violation of the Nehari constraint(s) at the returned pair.
    pub constraint_residual: T,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub integrals: Integrals<T>,
    /// Relative standard deviation of `u/v` where both exceed `1e-3` of their max.
    pub ratio_deviation: Option<T>,
    /// Mean of `u/v` on the same nodes.
    pub ratio_mean: Option<T>,
    /// False when a component collapses onto the first few grid cells.
    pub resolved: bool,
    pub mode: Mode,
    /// Every initialization tried, with its converged energy or failure.
    pub basins: Vec<Basin<T>>,
    pub warnings: Vec<String>,
    /// Energy after each accepted step.
    #[serde(skip)]
    pub energy_trace: Vec<T>,
}

/// Outcome of one initialization of a coupled solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basin<T> {
    pub init: String,
    pub energy: Option<T>,
    pub resolved: bool,
    pub error: Option<String>,
}

/// Scalar least-energy levels used as thresholds.
#[derive(Debug, Clone)]
pub struct ScalarLevels<T> {
    pub b_mu1: T,
    pub b_mu2: T,
    pub u_mu1: RadialField<T>,
    pub u_mu2: RadialField<T>,
}

/// Result of a scalar solve.
#[derive(Debug, Clone)]
pub struct ScalarSolution<T> {
    pub field: RadialField<T>,
    pub energy: T,
    pub residual: T,
    pub iterations: usize,
    pub newton_iterations: usize,
}

/// Trace of a finished run of the minimization engine.
#[derive(Debug, Clone)]
struct RunOutcome<T> {
    state: Vec<Vec<T>>,
    energy: T,
    residual: [T; 2],
    iterations: usize,
    newton_iterations: usize,
    trace: Vec<T>,
}

/// Discrete functional with one or two components.
#[derive(Debug, Clone)]
pub(crate) struct Engine<'a, T> {
    grid: &'a RadialGrid<T>,
    nc: usize,
    mu: [T; 2],
    lambda: [T; 2],
    beta: T,
    q: T,
    mode: Mode,
}

impl<'a, T: Real> Engine<'a, T> {
    fn critical(params: &SystemParams<T>, grid: &'a RadialGrid<T>, nc: usize, mode: Mode) -> Self {
        Engine {
            grid,
            nc,
            mu: [params.mu1, params.mu2],
            lambda: [params.lambda1, params.lambda2],
            beta: params.beta,
            q: params.two_star(),
            mode,
        }
    }

    fn scalar(n_params: &SystemParams<T>, which: Component, grid: &'a RadialGrid<T>) -> Self {
        let (mu, lambda) = (n_params.mu(which), n_params.lambda(which));
        Engine {
            grid,
            nc: 1,
            mu: [mu, mu],
            lambda: [lambda, lambda],
            beta: T::zero(),
            q: n_params.two_star(),
            mode: Mode::MountainPass,
        }
    }

    fn m(&self) -> usize {
        self.grid.intervals()
    }

    fn w(&self) -> &[T] {
        &self.grid.weights()[..self.m()]
    }

    fn half_q(&self) -> T {
        self.q / T::lit(2.0)
    }

    fn integrals(&self, z: &[Vec<T>]) -> Integrals<T> {
        let w = self.w();
        let mut out = Integrals::default();
        let q = self.q;
        let hq = self.half_q();
        out.q1 = self.grid.dirichlet_energy(&z[0])
            + self.lambda[0] * z[0].iter().zip(w).map(|(&a, &b)| a * a * b).sum::<T>();
        out.m1 = self.mu[0]
            * z[0]
                .iter()
                .zip(w)
                .map(|(&a, &b)| b * pow_pos(a.abs(), q))
                .sum::<T>();
        if self.nc == 2 {
            out.q2 = self.grid.dirichlet_energy(&z[1])
                + self.lambda[1] * z[1].iter().zip(w).map(|(&a, &b)| a * a * b).sum::<T>();
            out.m2 = self.mu[1]
                * z[1]
                    .iter()
                    .zip(w)
                    .map(|(&a, &b)| b * pow_pos(a.abs(), q))
                    .sum::<T>();
            if self.beta != T::zero() {
                out.x = self.beta
                    * z[0]
                        .iter()
                        .zip(&z[1])
                        .zip(w)
                        .map(|((&a, &b), &c)| c * pow_pos((a * b).abs(), hq))
                        .sum::<T>();
            }
        }
        out
    }

    fn energy_of(&self, s: &Integrals<T>) -> T {
        (s.q1 + s.q2) / T::lit(2.0) - (s.m1 + s.m2 + T::lit(2.0) * s.x) / self.q
    }

    /// Nehari identity value of the energy: `(1/2 - 1/q)(Q1 + Q2)`.
    fn energy_identity(&self, s: &Integrals<T>) -> T {
        (T::lit(0.5) - T::one() / self.q) * (s.q1 + s.q2)
    }

    /// Euclidean gradient with respect to the nodal values.
    fn gradient(&self, z: &[Vec<T>]) -> Vec<Vec<T>> {
        let w = self.w();
        let q = self.q;
        let hq = self.half_q();
        (0..self.nc)
            .map(|c| {
                let mut g = self.grid.apply_stiffness(&z[c]);
                for i in 0..self.m() {
                    let a = z[c][i];
                    let mut f = self.mu[c] * pow_pos(a.abs(), q - T::lit(2.0)) * a;
                    if self.nc == 2 && self.beta != T::zero() && a != T::zero() {
                        let b = z[1 - c][i];
                        f += self.beta
                            * pow_pos(a.abs(), hq - T::lit(2.0))
                            * a
                            * pow_pos(b.abs(), hq);
                    }
                    g[i] += w[i] * (self.lambda[c] * a - f);
                }
                g
            })
            .collect()
    }

    /// Discrete L² norms of the strong residuals `g / w`.
    fn residual_norms(&self, g: &[Vec<T>]) -> [T; 2] {
        let w = self.w();
        let mut out = [T::zero(); 2];
        for c in 0..self.nc {
            out[c] = g[c]
                .iter()
                .zip(w)
                .map(|(&a, &b)| a * a / b)
                .sum::<T>()
                .sqrt();
        }
        out
    }

    /// Residual level explained by rounding of the state alone:
    /// `eps ‖ |K + λW| |z| / w ‖` in the residual norm.
    fn rounding_floor(&self, z: &[Vec<T>]) -> T {
        let w = self.w();
        let flux = self.grid.flux();
        let mut acc = T::zero();
        for c in 0..self.nc {
            for i in 0..self.m() {
                let left = if i > 0 { flux[i - 1] } else { T::zero() };
                let row = left + flux[i] + w[i] * self.lambda[c].abs();
                let x = row * z[c][i].abs();
                acc += x * x / w[i];
            }
        }
        T::epsilon() * acc.sqrt()
    }

    fn floor_of(&self, z: &[T]) -> T {
        let top = z.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        top * T::epsilon() * T::epsilon() + T::min_positive_value()
    }

    fn banded(&self) -> BandedMatrix<T> {
        BandedMatrix::zeros(self.m() * self.nc, self.nc, self.nc)
    }

    fn add_stiffness(&self, a: &mut BandedMatrix<T>, shift: [T; 2]) {
        let m = self.m();
        let nc = self.nc;
        let flux = self.grid.flux();
        let w = self.w();
        for c in 0..nc {
            for i in 0..m {
                let id = i * nc + c;
                a.add(id, id, flux[i] + shift[c] * w[i]);
                if i > 0 {
                    let jd = (i - 1) * nc + c;
                    a.add(id, id, flux[i - 1]);
                    a.add(id, jd, -flux[i - 1]);
                    a.add(jd, id, -flux[i - 1]);
                }
            }
        }
    }

    /// Hessian of the energy (banded, components interleaved node by node).
    fn hessian(&self, z: &[Vec<T>]) -> BandedMatrix<T> {
        let m = self.m();
        let nc = self.nc;
        let w = self.w();
        let q = self.q;
        let hq = self.half_q();
        let two = T::lit(2.0);
        let mut a = self.banded();
        self.add_stiffness(&mut a, self.lambda);
        let floors: Vec<T> = z.iter().map(|c| self.floor_of(c)).collect();
        for i in 0..m {
            for c in 0..nc {
                let x = z[c][i].abs();
                let mut d = (q - T::one()) * self.mu[c] * pow_pos(x, q - two);
                if nc == 2 && self.beta != T::zero() {
                    let y = z[1 - c][i].abs();
                    d += self.beta
                        * (hq - T::one())
                        * pow_pos(x.max(floors[c]), hq - two)
                        * pow_pos(y, hq);
                }
                a.add(i * nc + c, i * nc + c, -w[i] * d);
            }
            if nc == 2 && self.beta != T::zero() {
                let (x, y) = (z[0][i].abs(), z[1][i].abs());
                let off =
                    -w[i] * self.beta * hq * pow_pos(x, hq - T::one()) * pow_pos(y, hq - T::one());
                a.add(i * nc, i * nc + 1, off);
                a.add(i * nc + 1, i * nc, off);
            }
        }
        a
    }

    /// Descent metric `K + c W`, plus the repulsive coupling curvature if asked.
    fn metric(&self, z: &[Vec<T>], coupling: bool) -> Result<EquilibratedLu<T>, SolverError> {
        let c = self.lambda[0].abs().max(self.lambda[1].abs()) + T::one();
        let mut a = self.banded();
        self.add_stiffness(&mut a, [c, c]);
        if coupling && self.nc == 2 && self.beta < T::zero() {
            let hq = self.half_q();
            let w = self.w();
            for c in 0..2 {
                let fl = self.floor_of(&z[c]);
                for i in 0..self.m() {
                    let y = z[1 - c][i].abs();
                    if y > T::zero() {
                        let d = -self.beta
                            * pow_pos(z[c][i].abs().max(fl), hq - T::lit(2.0))
                            * pow_pos(y, hq);
                        a.add(i * 2 + c, i * 2 + c, w[i] * d);
                    }
                }
            }
        }
        Ok(a.factor_equilibrated()?)
    }

    /// Scalings `(t, s)` that move a state with integrals `s0` onto the Nehari set.
    fn projection(&self, s0: &Integrals<T>) -> Result<(T, T), SolverError> {
        let q = self.q;
        let zero = T::zero();
        let single = self.nc == 1 || self.mode == Mode::MountainPass;
        if single {
            let num = s0.q1 + s0.q2;
            let den = s0.m1 + s0.m2 + T::lit(2.0) * s0.x;
            if !(num > zero) || !(den > zero) || !num.is_finite() || !den.is_finite() {
                return Err(SolverError::Projection(
                    "combined constraint has no positive scaling",
                ));
            }
            let t = pow_pos(num / den, T::one() / (q - T::lit(2.0)));
            return Ok((t, t));
        }
        two_constraint_scaling(s0.q1, s0.q2, s0.m1, s0.m2, s0.x, q)
    }

    fn scaled(&self, s: &Integrals<T>, t: T, u: T) -> Integrals<T> {
        let q = self.q;
        Integrals {
            q1: s.q1 * t * t,
            q2: s.q2 * u * u,
            m1: s.m1 * pow_pos(t, q),
            m2: s.m2 * pow_pos(u, q),
            x: s.x * pow_pos(t * u, q / T::lit(2.0)),
        }
    }

    /// Absolute value, then Nehari scaling, in place.
    fn project(&self, z: &mut [Vec<T>]) -> Result<Integrals<T>, SolverError> {
        for c in z.iter_mut() {
            for v in c.iter_mut() {
                *v = v.abs();
            }
        }
        let s = self.integrals(z);
        let (t, u) = self.projection(&s)?;
        for v in z[0].iter_mut() {
            *v = *v * t;
        }
        if self.nc == 2 {
            for v in z[1].iter_mut() {
                *v = *v * u;
            }
        }
        Ok(self.scaled(&s, t, u))
    }

    /// Damped Newton on `∇E = 0`; returns the polished state if the residual target is met.
    fn newton(
        &self,
        z0: &[Vec<T>],
        tol: T,
        accept: T,
        max_iter: usize,
    ) -> Option<(Vec<Vec<T>>, [T; 2], usize)> {
        let mut z: Vec<Vec<T>> = z0.to_vec();
        let mut g = self.gradient(&z);
        let mut res = self.residual_norms(&g);
        let merit = |r: [T; 2]| r[0].max(r[1]);
        for it in 0..max_iter {
            if merit(res) < tol {
                return Some((z, res, it));
            }
            let h = self.hessian(&z);
            let lu = h.factor_equilibrated().ok()?;
            let mut rhs: Vec<T> = (0..self.m() * self.nc)
                .map(|id| -g[id % self.nc][id / self.nc])
                .collect();
            lu.solve_in_place(&mut rhs);
            if rhs.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let mut step = T::one();
            let mut accepted = false;
            while step > T::lit(1e-6) {
                let trial: Vec<Vec<T>> = (0..self.nc)
                    .map(|c| {
                        (0..self.m())
                            .map(|i| (z[c][i] + step * rhs[i * self.nc + c]).max(T::zero()))
                            .collect()
                    })
                    .collect();
                let tg = self.gradient(&trial);
                let tr = self.residual_norms(&tg);
                if merit(tr) < merit(res) * (T::one() - T::lit(1e-4) * step) {
                    z = trial;
                    g = tg;
                    res = tr;
                    accepted = true;
                    break;
                }
                step = step / T::lit(2.0);
            }
            if !accepted {
                return (merit(res) < accept).then_some((z, res, it));
            }
        }
        if merit(res) < accept {
            Some((z, res, max_iter))
        } else {
            None
        }
    }

    /// Projected preconditioned descent with periodic Newton polish.
    fn run(
        &self,
        mut z: Vec<Vec<T>>,
        opts: &SolverOptions<T>,
    ) -> Result<RunOutcome<T>, SolverError> {
        let mut e = self.energy_of(&self.project(&mut z)?);
        let mut trace: Vec<T> = vec![e];
        let mut newton_total = 0;
        let mut last_newton = 0usize;
        let window_ok = |h: &[T], e: T| {
            h.len() > opts.energy_window && {
                let old = h[h.len() - 1 - opts.energy_window];
                (old - e).abs() <= opts.energy_tol * e.abs().max(T::one())
            }
        };
        let fixed_metric = if opts.coupling_metric && self.nc == 2 && self.beta < T::zero() {
            None
        } else {
            Some(self.metric(&z, false)?)
        };
        let jitter = |e: T| T::lit(1e-12) * e.abs().max(T::one());
        let mut stalled = false;
        let mut res = [T::zero(); 2];
        for it in 0..opts.max_iter {
            let g = self.gradient(&z);
            res = self.residual_norms(&g);
            let r = res[0].max(res[1]);
            let tol = opts.tol.max(self.rounding_floor(&z));
            let done = |z, e, trace, it, nt| RunOutcome {
                state: z,
                energy: e,
                residual: res,
                iterations: it,
                newton_iterations: nt,
                trace,
            };
            if r < tol && window_ok(&trace, e) {
                return Ok(done(z, e, trace, it, newton_total));
            }
            let newton_due =
                opts.newton && r >= tol && (stalled || (it >= last_newton + opts.newton_every));
            if newton_due {
                last_newton = it;
                if let Some((mut zn, _, k)) =
                    self.newton(&z, tol * T::lit(0.1), tol, opts.newton_max_iter)
                {
                    newton_total += k;
                    // Stay on the constraint set and refuse jumps to other critical levels.
                    if let Ok(sn) = self.project(&mut zn) {
                        let en = self.energy_of(&sn);
                        if en <= e + jitter(e) {
                            z = zn;
                            e = en;
                            trace.push(e);
                            stalled = false;
                            continue;
                        }
                    }
                }
                if stalled {
                    break;
                }
            }
            let lu = match &fixed_metric {
                Some(lu) => lu.clone(),
                None => self.metric(&z, true)?,
            };
            let n = self.m() * self.nc;
            let mut d: Vec<T> = (0..n).map(|id| -g[id % self.nc][id / self.nc]).collect();
            lu.solve_in_place(&mut d);
            let slope: T = (0..n).map(|id| g[id % self.nc][id / self.nc] * d[id]).sum();
            let mut step = T::one();
            let mut accepted = false;
            while step >= opts.min_step {
                let mut trial: Vec<Vec<T>> = (0..self.nc)
                    .map(|c| {
                        (0..self.m())
                            .map(|i| z[c][i] + step * d[i * self.nc + c])
                            .collect()
                    })
                    .collect();
                if let Ok(st) = self.project(&mut trial) {
                    let et = self.energy_of(&st);
                    if et <= e + opts.armijo * step * slope {
                        z = trial;
                        e = et;
                        accepted = true;
                        break;
                    }
                }
                step = step / T::lit(2.0);
            }
            if !accepted {
                // No decrease left at this resolution.
                if r < tol {
                    return Ok(done(z, e, trace, it, newton_total));
                }
                if !opts.newton || stalled {
                    break;
                }
                stalled = true;
                continue;
            }
            trace.push(e);
        }
        Err(SolverError::NotConverged {
            iterations: trace.len(),
            residual: res[0].max(res[1]).as_f64(),
            energy: e.as_f64(),
        })
    }
}

/// Solves `T^a Q1 = T M1 + S X`, `S^a Q2 = S M2 + T X` with `a = 4/q - 1`,
/// `T = t^(q/2)`, `S = s^(q/2)`, and returns `(t, s)`.
fn two_constraint_scaling<T: Real>(
    q1: T,
    q2: T,
    m1: T,
    m2: T,
    x: T,
    q: T,
) -> Result<(T, T), SolverError> {
    let zero = T::zero();
    if !(q1 > zero && q2 > zero && m1 > zero && m2 > zero) {
        return Err(SolverError::Projection("a component vanishes"));
    }
    let expo = T::lit(2.0) / q;
    let gap = T::lit(2.0) - T::lit(4.0) / q;
    if x == zero {
        return Ok((
            pow_pos(q1 / m1, T::one() / (q - T::lit(2.0))),
            pow_pos(q2 / m2, T::one() / (q - T::lit(2.0))),
        ));
    }
    if x < zero && m1 * m2 <= x * x {
        return Err(SolverError::Projection(
            "components overlap too much (M1 M2 <= X^2)",
        ));
    }
    let a = T::lit(4.0) / q - T::one();
    let f = |t: T, s: T| {
        (
            pow_pos(t, a) * q1 - t * m1 - s * x,
            pow_pos(s, a) * q2 - s * m2 - t * x,
        )
    };
    let on_set = |t: T, s: T| {
        let (f1, f2) = f(t, s);
        let tol = T::lit(1e-10);
        f1.abs() <= tol * t * m1.max(s * x.abs()) && f2.abs() <= tol * s * m2.max(t * x.abs())
    };
    let finish = |t: T, s: T| {
        if t > zero && s > zero && on_set(t, s) {
            Ok((pow_pos(t, expo), pow_pos(s, expo)))
        } else {
            Err(SolverError::Projection(
                "scaling system not solved to tolerance",
            ))
        }
    };
    // Nearly decoupled: S(T) below divides rounding noise by X, so run Newton
    // from the decoupled scalings instead.
    if x.abs() < T::lit(1e-3) * (m1 * m2).sqrt() {
        let mut t = pow_pos(q1 / m1, T::one() / gap);
        let mut s = pow_pos(q2 / m2, T::one() / gap);
        for _ in 0..50 {
            let (f1, f2) = f(t, s);
            let j11 = a * pow_pos(t, a - T::one()) * q1 - m1;
            let j22 = a * pow_pos(s, a - T::one()) * q2 - m2;
            let det = j11 * j22 - x * x;
            let dt = (-f1 * j22 - x * f2) / det;
            let ds = (-f2 * j11 - x * f1) / det;
            t = (t + dt).max(t / T::lit(2.0));
            s = (s + ds).max(s / T::lit(2.0));
            if dt.abs() <= T::epsilon() * t && ds.abs() <= T::epsilon() * s {
                break;
            }
        }
        return finish(t, s);
    }
    let s_of = |t: T| ((pow_pos(t, a) * q1 - t * m1) / x).max(zero);
    let phi = |t: T| {
        let s = s_of(t);
        pow_pos(s, a) * q2 - s * m2 - t * x
    };
    let t_edge = pow_pos(q1 / m1, T::one() / gap);
    // phi(t_edge) = -t_edge X; walk away from the edge until phi changes sign.
    let (mut lo, mut hi) = if x < zero {
        let mut hi = t_edge * T::lit(2.0);
        let mut k = 0;
        while phi(hi) >= zero {
            hi = hi * T::lit(2.0);
            k += 1;
            if k > 2000 || !hi.is_finite() {
                return Err(SolverError::Projection(
                    "no sign change of the reduced constraint",
                ));
            }
        }
        (t_edge, hi)
    } else {
        let mut lo = t_edge / T::lit(2.0);
        let mut k = 0;
        while phi(lo) <= zero {
            lo = lo / T::lit(2.0);
            k += 1;
            if k > 2000 || lo == zero {
                return Err(SolverError::Projection(
                    "no sign change of the reduced constraint",
                ));
            }
        }
        (lo, t_edge)
    };
    let f_lo_pos = phi(lo) > zero;
    for _ in 0..2000 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if (phi(mid) > zero) == f_lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let big_t = lo + (hi - lo) / T::lit(2.0);
    let big_s = s_of(big_t);
    if !(big_s > zero) {
        return Err(SolverError::Projection("degenerate scaling"));
    }
    finish(big_t, big_s)
}

fn check_admissible<T: Real>(lambda: T, lambda1: T) -> Result<(), SolverError> {
    if !(lambda < T::zero() && lambda > -lambda1) {
        return Err(SolverError::Admissibility {
            lambda: lambda.as_f64(),
            lambda1_omega: lambda1.as_f64(),
        });
    }
    Ok(())
}

/// `E(u, v)` at the critical exponent.
pub fn energy<T: Real>(params: &SystemParams<T>, pair: &FieldPair<T>) -> T {
    let e = Engine::critical(params, pair.grid(), 2, Mode::TwoConstraint);
    e.energy_of(&e.integrals(&pair.state()))
}

/// Discrete L² norms of both Euler–Lagrange residuals.
pub fn residual<T: Real>(params: &SystemParams<T>, pair: &FieldPair<T>) -> (T, T) {
    let e = Engine::critical(params, pair.grid(), 2, Mode::TwoConstraint);
    let r = e.residual_norms(&e.gradient(&pair.state()));
    (r[0], r[1])
}

/// Euclidean gradient of `E` with respect to the nodal values of `u` and `v`.
pub fn energy_gradient<T: Real>(params: &SystemParams<T>, pair: &FieldPair<T>) -> (Vec<T>, Vec<T>) {
    let e = Engine::critical(params, pair.grid(), 2, Mode::TwoConstraint);
    let mut g = e.gradient(&pair.state());
    let v = g.pop().unwrap();
    (g.pop().unwrap(), v)
}

/// Scalar functional `J(u) = ½∫(|∇u|² + λ u²) - (1/2*) μ ∫|u|^(2*)` with the
/// parameters of component `which`.
pub fn scalar_energy<T: Real>(params: &SystemParams<T>, which: Component, u: &RadialField<T>) -> T {
    let e = Engine::scalar(params, which, u.grid());
    e.energy_of(&e.integrals(&[u.values().to_vec()]))
}

/// Strong residual norm of `-Δu + λu = μ u^(2*-1)` for component `which`.
pub fn scalar_residual<T: Real>(
    params: &SystemParams<T>,
    which: Component,
    u: &RadialField<T>,
) -> T {
    let e = Engine::scalar(params, which, u.grid());
    e.residual_norms(&e.gradient(&[u.values().to_vec()]))[0]
}

/// Scaling `t` with `(t u, t v)` on the combined Nehari set.
pub fn project_single_constraint<T: Real>(
    params: &SystemParams<T>,
    pair: &FieldPair<T>,
) -> Result<T, SolverError> {
    let e = Engine::critical(params, pair.grid(), 2, Mode::MountainPass);
    let s = pair.integrals();
    let den = s.m1 + s.m2 + T::lit(2.0) * s.x;
    if !(den > T::zero()) {
        return Err(SolverError::Projection("degenerate denominator"));
    }
    e.projection(&s).map(|(t, _)| t)
}

/// Scalings `(t, s)` with `(t u, s v)` on the two-constraint Nehari set.
pub fn project_two_constraint<T: Real>(
    params: &SystemParams<T>,
    pair: &FieldPair<T>,
) -> Result<(T, T), SolverError> {
    let s = pair.integrals();
    two_constraint_scaling(s.q1, s.q2, s.m1, s.m2, s.x, params.two_star())
}

fn bump_profile<T: Real>(grid: &Arc<RadialGrid<T>>, lo: T, hi: T) -> RadialField<T> {
    RadialField::from_fn(grid.clone(), |r| {
        if r <= lo && lo == T::zero() {
            T::one()
        } else if r > lo && r < hi {
            let s = (r - lo) / (hi - lo);
            if lo == T::zero() {
                (T::one() - s * s).powi(2)
            } else {
                (T::PI() * s).sin().powi(2)
            }
        } else {
            T::zero()
        }
    })
}

/// Builds the starting pair for a preset.
pub fn initial_pair<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    init: Init<T>,
) -> Result<FieldPair<T>, SolverError> {
    let init = match init {
        Init::Auto => {
            if params.beta > T::zero() {
                Init::InstantonPair { scale: T::lit(0.3) }
            } else {
                Init::DisjointBumps { split: T::lit(0.3) }
            }
        }
        other => other,
    };
    let r_max = grid.radius();
    match init {
        Init::Pair(p) => {
            if !p.u.same_grid(&RadialField::zeros(grid.clone())) {
                return Err(crate::error::GridError::GridMismatch.into());
            }
            let mut p = p;
            p.refresh(params);
            Ok(p)
        }
        Init::InstantonPair { scale } => {
            let inst = Instanton::centered(params.n, scale * r_max);
            let (a, b) = if params.beta > T::zero() {
                let s = solve_k0_l0(params)?;
                (s.k.sqrt(), s.l.sqrt())
            } else {
                let e = params.half_n_minus_2() / T::lit(2.0);
                (pow_pos(params.mu1, -e), pow_pos(params.mu2, -e))
            };
            let cut = |r: T| T::one() - (r / r_max).powi(2);
            let u = RadialField::from_fn(grid.clone(), |r| a * inst.profile(r) * cut(r));
            let v = RadialField::from_fn(grid.clone(), |r| b * inst.profile(r) * cut(r));
            FieldPair::new(params, u, v)
        }
        Init::DisjointBumps { split } => {
            if !(split > T::zero() && split < T::one()) {
                return Err(SolverError::Input("split must lie in (0, 1)".into()));
            }
            let u = bump_profile(grid, T::zero(), split * r_max);
            let v = bump_profile(grid, split * r_max, r_max);
            FieldPair::new(params, u, v)
        }
        Init::Auto => unreachable!(),
    }
}

/// Positive radial least-energy solution of `-Δu + λi u = μi u^(2*-1)`.
pub fn scalar_ground_state<T: Real>(
    params: &SystemParams<T>,
    which: Component,
    grid: &Arc<RadialGrid<T>>,
) -> Result<(RadialField<T>, T), SolverError> {
    scalar_ground_state_with(params, which, grid, &SolverOptions::scalar(), None)
        .map(|s| (s.field, s.energy))
}

/// [`scalar_ground_state`] with explicit options and optional starting profile.
pub fn scalar_ground_state_with<T: Real>(
    params: &SystemParams<T>,
    which: Component,
    grid: &Arc<RadialGrid<T>>,
    opts: &SolverOptions<T>,
    init: Option<&[T]>,
) -> Result<ScalarSolution<T>, SolverError> {
    params.validate()?;
    let l1 = first_eigenvalue(grid)?;
    check_admissible(params.lambda(which), l1)?;
    let engine = Engine::scalar(params, which, grid);
    let z0 = match init {
        Some(v) if v.len() == grid.intervals() => v.to_vec(),
        Some(v) => {
            return Err(crate::error::GridError::Length {
                expected: grid.intervals(),
                got: v.len(),
            }
            .into())
        }
        None => {
            let inst = Instanton::centered(params.n, T::lit(0.3) * grid.radius());
            let r = grid.radius();
            grid.nodes()[..grid.intervals()]
                .iter()
                .map(|&x| inst.profile(x) * (T::one() - (x / r).powi(2)))
                .collect()
        }
    };
    let out = engine.run(vec![z0], opts)?;
    let field = RadialField::from_values(grid.clone(), out.state.into_iter().next().unwrap())?;
    Ok(ScalarSolution {
        field,
        energy: out.energy,
        residual: out.residual[0],
        iterations: out.iterations,
        newton_iterations: out.newton_iterations,
    })
}

/// Both scalar levels `B_mu1`, `B_mu2` for the potentials of `params`.
pub fn scalar_levels<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
) -> Result<ScalarLevels<T>, SolverError> {
    let opts = SolverOptions::scalar();
    let a = scalar_ground_state_with(params, Component::First, grid, &opts, None)?;
    let b = if params.mu1 == params.mu2 && params.lambda1 == params.lambda2 {
        a.clone()
    } else {
        scalar_ground_state_with(params, Component::Second, grid, &opts, None)?
    };
    Ok(ScalarLevels {
        b_mu1: a.energy,
        b_mu2: b.energy,
        u_mu1: a.field,
        u_mu2: b.field,
    })
}

/// Threshold inequalities that apply to `b` at coupling `params.beta`.
///
/// Repulsive coupling: `B < B_mu1 + (1/N) mu2^(-(N-2)/2) S^(N/2)`, the mirrored
/// bound, and `B < A`. Attractive coupling: `B < B_mu1`, `B < B_mu2`, and
/// `B < A` where `A` has a closed form.
pub fn threshold_table<T: Real>(
    params: &SystemParams<T>,
    b: T,
    b_mu1: T,
    b_mu2: T,
    a: Option<T>,
    sobolev: &SobolevData<T>,
) -> Vec<Threshold<T>> {
    let mk = |name: &str, bound: T| Threshold {
        name: name.to_string(),
        value: b,
        bound,
        margin: bound - b,
        holds: b < bound,
    };
    let mut out = Vec::new();
    if params.beta < T::zero() {
        out.push(mk(
            "B_mu1 + bubble(mu2)",
            b_mu1 + sobolev.bubble_energy(params.mu2),
        ));
        out.push(mk(
            "B_mu2 + bubble(mu1)",
            b_mu2 + sobolev.bubble_energy(params.mu1),
        ));
    } else {
        out.push(mk("B_mu1", b_mu1));
        out.push(mk("B_mu2", b_mu2));
    }
    if let Some(a) = a {
        out.push(mk("A", a));
    }
    out
}

/// Relative standard deviation and mean of `u/v` where both exceed `1e-3` of their max.
pub fn ratio_statistics<T: Real>(pair: &FieldPair<T>) -> Option<(T, T)> {
    let (mu, mv) = (pair.u.max_abs(), pair.v.max_abs());
    let cut = T::lit(1e-3);
    let ratios: Vec<T> = pair
        .u
        .values()
        .iter()
        .zip(pair.v.values())
        .filter(|(&a, &b)| a > cut * mu && b > cut * mv)
        .map(|(&a, &b)| a / b)
        .collect();
    if ratios.len() < 2 {
        return None;
    }
    let n = T::of_usize(ratios.len());
    let mean = ratios.iter().copied().sum::<T>() / n;
    let var = ratios.iter().map(|&r| (r - mean).powi(2)).sum::<T>() / n;
    Some((var.sqrt() / mean, mean))
}

/// Shared inputs of repeated coupled solves on one grid.
#[derive(Debug, Clone)]
pub struct SolveContext<T> {
    pub grid: Arc<RadialGrid<T>>,
    pub sobolev: SobolevData<T>,
    pub lambda1_omega: T,
    pub levels: ScalarLevels<T>,
}

impl<T: Real> SolveContext<T> {
    pub fn new(params: &SystemParams<T>, grid: &Arc<RadialGrid<T>>) -> Result<Self, SolverError> {
        params.validate()?;
        let lambda1_omega = first_eigenvalue(grid)?;
        check_admissible(params.lambda1, lambda1_omega)?;
        check_admissible(params.lambda2, lambda1_omega)?;
        Ok(SolveContext {
            grid: grid.clone(),
            sobolev: sobolev_data(params.n)?,
            lambda1_omega,
            levels: scalar_levels(params, grid)?,
        })
    }
}

/// Least-energy positive pair of the coupled system.
///
/// With [`Init::Auto`] both presets are tried and the lowest converged energy
/// is returned, preferring states that the grid resolves; every attempt is
/// listed in [`EnergyReport::basins`].
pub fn solve_coupled<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    mode: Mode,
    init: Init<T>,
) -> Result<(FieldPair<T>, EnergyReport<T>), SolverError> {
    let ctx = SolveContext::new(params, grid)?;
    solve_coupled_with(params, &ctx, mode, init, &SolverOptions::default())
}

/// [`solve_coupled`] reusing a [`SolveContext`].
pub fn solve_coupled_with<T: Real>(
    params: &SystemParams<T>,
    ctx: &SolveContext<T>,
    mode: Mode,
    init: Init<T>,
    opts: &SolverOptions<T>,
) -> Result<(FieldPair<T>, EnergyReport<T>), SolverError> {
    params.validate()?;
    if params.beta == T::zero() {
        return Err(SolverError::ZeroBeta);
    }
    check_admissible(params.lambda1, ctx.lambda1_omega)?;
    check_admissible(params.lambda2, ctx.lambda1_omega)?;
    let attempts: Vec<(String, Init<T>)> = match init {
        Init::Auto => {
            let inst = Init::InstantonPair { scale: T::lit(0.3) };
            let bumps = Init::DisjointBumps { split: T::lit(0.3) };
            if params.beta > T::zero() {
                vec![
                    ("instanton_pair".into(), inst),
                    ("disjoint_bumps".into(), bumps),
                ]
            } else {
                vec![
                    ("disjoint_bumps".into(), bumps),
                    ("instanton_pair".into(), inst),
                ]
            }
        }
        other => vec![(init_label(&other), other)],
    };
    let mut basins = Vec::new();
    let mut best: Option<(FieldPair<T>, EnergyReport<T>)> = None;
    let mut first_err = None;
    for (label, init) in attempts {
        match solve_once(params, ctx, mode, init, opts) {
            Ok((pair, report)) => {
                basins.push(Basin {
                    init: label,
                    energy: Some(report.b),
                    resolved: report.resolved,
                    error: None,
                });
                let better = best.as_ref().map_or(true, |(_, b)| {
                    (report.resolved, -report.b.as_f64()) > (b.resolved, -b.b.as_f64())
                });
                if better {
                    best = Some((pair, report));
                }
            }
            Err(e) => {
                basins.push(Basin {
                    init: label,
                    energy: None,
                    resolved: false,
                    error: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((pair, mut report)) => {
            report.basins = basins;
            Ok((pair, report))
        }
        None => Err(first_err.expect("at least one attempt")),
    }
}

/// Whether both components are resolved near the origin: a drop of more than
/// half the peak across the first two cells marks a grid-scale spike.
pub fn is_resolved<T: Real>(pair: &FieldPair<T>) -> bool {
    [&pair.u, &pair.v].iter().all(|f| {
        let v = f.values();
        let peak = v.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        peak == T::zero() || v.len() < 3 || (v[0] - v[2]).abs() <= T::lit(0.5) * peak
    })
}

fn init_label<T>(init: &Init<T>) -> String {
    match init {
        Init::InstantonPair { .. } => "instanton_pair",
        Init::DisjointBumps { .. } => "disjoint_bumps",
        Init::Auto => "auto",
        Init::Pair(_) => "given_pair",
    }
    .to_string()
}

fn solve_once<T: Real>(
    params: &SystemParams<T>,
    ctx: &SolveContext<T>,
    mode: Mode,
    init: Init<T>,
    opts: &SolverOptions<T>,
) -> Result<(FieldPair<T>, EnergyReport<T>), SolverError> {
    let start = initial_pair(params, &ctx.grid, init)?;
    let engine = Engine::critical(params, &ctx.grid, 2, mode);
    let out = engine.run(start.state(), opts)?;
    let (pair, mut report) = finish(params, ctx, &engine, out, mode)?;
    report.thresholds = threshold_table(
        params,
        report.b,
        ctx.levels.b_mu1,
        ctx.levels.b_mu2,
        report.a,
        &ctx.sobolev,
    );
    for t in &report.thresholds {
        if !t.holds {
            report.warnings.push(format!(
                "threshold {} violated by {}",
                t.name,
                -t.margin.as_f64()
            ));
        }
    }
    Ok((pair, report))
}

/// Report without threshold comparisons.
fn finish<T: Real>(
    params: &SystemParams<T>,
    ctx: &SolveContext<T>,
    engine: &Engine<'_, T>,
    out: RunOutcome<T>,
    mode: Mode,
) -> Result<(FieldPair<T>, EnergyReport<T>), SolverError> {
    let grid = &ctx.grid;
    let mut it = out.state.into_iter();
    let u = RadialField::from_values(grid.clone(), it.next().unwrap())?;
    let v = RadialField::from_values(grid.clone(), it.next().unwrap())?;
    let integrals = engine.integrals(&[u.values().to_vec(), v.values().to_vec()]);
    let constraint_residual = match mode {
        Mode::TwoConstraint => ((integrals.q1 - integrals.m1 - integrals.x) / integrals.q1)
            .abs()
            .max(((integrals.q2 - integrals.m2 - integrals.x) / integrals.q2).abs()),
        Mode::MountainPass => {
            let q = integrals.q1 + integrals.q2;
            ((q - integrals.m1 - integrals.m2 - T::lit(2.0) * integrals.x) / q).abs()
        }
    };
    let pair = FieldPair { u, v, integrals };
    let stats = ratio_statistics(&pair);
    let mut warnings = Vec::new();
    if !is_resolved(&pair) {
        warnings
            .push("a component concentrates on the first grid cells; refine the grid".to_string());
    }
    let report = EnergyReport {
        b: out.energy,
        b_identity: engine.energy_identity(&integrals),
        b_mu1: ctx.levels.b_mu1,
        b_mu2: ctx.levels.b_mu2,
        a: limit_energy_a(params, &ctx.sobolev, None).ok(),
        s: ctx.sobolev.s,
        lambda1_omega: ctx.lambda1_omega,
        thresholds: Vec::new(),
        residual_u: out.residual[0],
        residual_v: out.residual[1],
        residual_norm: out.residual[0].max(out.residual[1]),
        constraint_residual,
        iterations: out.iterations,
        newton_iterations: out.newton_iterations,
        integrals,
        ratio_deviation: stats.map(|s| s.0),
        ratio_mean: stats.map(|s| s.1),
        resolved: is_resolved(&pair),
        mode,
        basins: Vec::new(),
        warnings,
        energy_trace: out.trace,
    };
    Ok((pair, report))
}

/// One stage of [`subcritical_chain`].
#[derive(Debug, Clone)]
pub struct SubcriticalStage<T> {
    pub epsilon: T,
    pub pair: FieldPair<T>,
    /// `B` is the value of the regularized functional with exponent `2p - 2ε`.
    pub report: EnergyReport<T>,
}

/// Regularized problem with self powers `2p - 2ε` and coupling powers `p - ε`,
/// solved for each `ε` of a decreasing schedule with warm starts; returns the last stage.
pub fn solve_subcritical<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    eps_schedule: &[T],
) -> Result<(FieldPair<T>, EnergyReport<T>), SolverError> {
    let mut chain = subcritical_chain(params, grid, eps_schedule)?;
    let last = chain
        .pop()
        .ok_or_else(|| SolverError::Input("empty eps schedule".into()))?;
    Ok((last.pair, last.report))
}

/// Every stage of the warm-started regularization chain, in schedule order.
///
/// Uses the combined constraint; `λi = 0` is allowed here.
pub fn subcritical_chain<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    eps_schedule: &[T],
) -> Result<Vec<SubcriticalStage<T>>, SolverError> {
    params.validate()?;
    if params.beta == T::zero() {
        return Err(SolverError::ZeroBeta);
    }
    let p = params.p();
    if eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(SolverError::Input(
            "eps schedule must be strictly decreasing".into(),
        ));
    }
    if let Some(&bad) = eps_schedule
        .iter()
        .find(|&&eps| !(eps > T::zero() && eps < p - T::one()))
    {
        return Err(SolverError::BadEps(bad.as_f64()));
    }
    let lambda1_omega = first_eigenvalue(grid)?;
    for l in [params.lambda1, params.lambda2] {
        if !(l > -lambda1_omega && l <= T::zero()) {
            return Err(SolverError::Admissibility {
                lambda: l.as_f64(),
                lambda1_omega: lambda1_omega.as_f64(),
            });
        }
    }
    let ctx = SolveContext {
        grid: grid.clone(),
        sobolev: sobolev_data(params.n)?,
        lambda1_omega,
        levels: ScalarLevels {
            b_mu1: T::nan(),
            b_mu2: T::nan(),
            u_mu1: RadialField::zeros(grid.clone()),
            u_mu2: RadialField::zeros(grid.clone()),
        },
    };
    let mode = Mode::MountainPass;
    let mut state = initial_pair(params, grid, Init::Auto)?.state();
    let opts = SolverOptions::default();
    let mut out = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let mut engine = Engine::critical(params, grid, 2, mode);
        engine.q = T::lit(2.0) * (p - eps);
        let run = engine.run(state, &opts)?;
        state = run.state.clone();
        let (pair, report) = finish(params, &ctx, &engine, run, mode)?;
        out.push(SubcriticalStage {
            epsilon: eps,
            pair,
            report,
        });
    }
    Ok(out)
}

/// Result of comparing the analytic gradient with finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck<T> {
    pub directions: usize,
    pub max_relative_error: T,
    pub errors: Vec<T>,
}

/// Compares `<∇E, d>` with a fourth-order central difference of `E` along
/// `directions` random relative perturbations `d = ξ ⊙ (u, v)`, `ξ ~ U(-1, 1)`.
pub fn gradient_check<T: Real>(
    params: &SystemParams<T>,
    pair: &FieldPair<T>,
    directions: usize,
    seed: u64,
) -> GradientCheck<T> {
    let engine = Engine::critical(params, pair.grid(), 2, Mode::TwoConstraint);
    let z = pair.state();
    let g = engine.gradient(&z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = engine.m();
    let h = T::lit(1e-3);
    let mut errors = Vec::with_capacity(directions);
    for _ in 0..directions {
        let d: Vec<Vec<T>> = z
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&x| x * T::lit(rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let at = |t: T| {
            let zt: Vec<Vec<T>> = (0..2)
                .map(|c| (0..m).map(|i| z[c][i] + t * d[c][i]).collect())
                .collect();
            engine.energy_of(&engine.integrals(&zt))
        };
        let two = T::lit(2.0);
        let fd =
            (T::lit(8.0) * (at(h) - at(-h)) - (at(two * h) - at(-two * h))) / (T::lit(12.0) * h);
        let an: T = (0..2)
            .map(|c| (0..m).map(|i| g[c][i] * d[c][i]).sum::<T>())
            .sum();
        let scale = fd.abs().max(an.abs()).max(T::min_positive_value());
        errors.push((fd - an).abs() / scale);
    }
    let max_relative_error = errors.iter().copied().fold(T::zero(), T::max);
    GradientCheck {
        directions,
        max_relative_error,
        errors,
    }
}

/// Least-squares slope of `log(u + v)` against `log r` on `[r_lo, r_hi]`.
pub fn decay_slope<T: Real>(pair: &FieldPair<T>, r_lo: T, r_hi: T) -> Option<T> {
    let nodes = pair.grid().nodes();
    let pts: Vec<(T, T)> = nodes
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= r_lo && r <= r_hi)
        .map(|(i, &r)| (r, pair.u.at(i) + pair.v.at(i)))
        .filter(|(_, s)| *s > T::zero())
        .map(|(r, s)| (r.ln(), s.ln()))
        .collect();
    least_squares_slope(&pts).map(|(s, _)| s)
}

/// Slope and intercept of the least-squares line through `pts`.
pub fn least_squares_slope<T: Real>(pts: &[(T, T)]) -> Option<(T, T)> {
    if pts.len() < 2 {
        return None;
    }
    let n = T::of_usize(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::Grading;
    use approx::assert_relative_eq;

    fn grid(n: usize, m: usize) -> Arc<RadialGrid<f64>> {
        RadialGrid::shared(n, 1.0, m, Grading::Algebraic { power: 1.5 }).unwrap()
    }

    fn params(n: usize, beta: f64, lam: f64) -> SystemParams<f64> {
        SystemParams::new(n, 1.0, 1.0, beta, lam, lam).unwrap()
    }

    fn positive_pair(p: &SystemParams<f64>, g: &Arc<RadialGrid<f64>>) -> FieldPair<f64> {
        let u = RadialField::from_fn(g.clone(), |r| (1.0 - r * r) * (2.0 + r));
        let v = RadialField::from_fn(g.clone(), |r| (1.0 - r) * (1.0 + 3.0 * r * r));
        FieldPair::new(p, u, v).unwrap()
    }

    #[test]
    fn zero_pair_has_zero_energy() {
        let g = grid(6, 64);
        let p = params(6, -1.0, -1.0);
        let z = FieldPair::new(&p, RadialField::zeros(g.clone()), RadialField::zeros(g)).unwrap();
        assert_eq!(energy(&p, &z), 0.0);
    }

    #[test]
    fn energy_with_v_zero_is_scalar_functional() {
        let g = grid(5, 64);
        let p = params(5, 2.0, -3.0);
        let u = RadialField::from_fn(g.clone(), |r| 1.0 - r * r);
        let pair = FieldPair::new(&p, u.clone(), RadialField::zeros(g.clone())).unwrap();
        // Independent evaluation of J.
        let q = g.dirichlet_energy(u.values()) - 3.0 * g.integrate_values(u.values(), |x| x * x);
        let m = g.integrate_values(u.values(), |x| x.abs().powf(10.0 / 3.0));
        let want = 0.5 * q - 0.3 * m;
        assert_relative_eq!(energy(&p, &pair), want, max_relative = 1e-13);
        assert_relative_eq!(
            scalar_energy(&p, Component::First, &u),
            want,
            max_relative = 1e-13
        );
    }

    #[test]
    fn gradient_agrees_with_differences() {
        let g = grid(6, 128);
        for beta in [-2.0, 1.5] {
            let p = params(6, beta, -4.0);
            let c = gradient_check(&p, &positive_pair(&p, &g), 20, 11);
            assert!(c.max_relative_error < 1e-6, "{:?}", c.max_relative_error);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        for (n, beta) in [(5, -1.5), (6, 1.2), (6, -2.0)] {
            let g = grid(n, 32);
            let p = params(n, beta, -2.0);
            let pair = positive_pair(&p, &g);
            let e = Engine::critical(&p, &g, 2, Mode::TwoConstraint);
            let z = pair.state();
            let h = e.hessian(&z);
            let m = e.m();
            for node in (0..m).step_by(3) {
                for comp in 0..2 {
                    let step = 1e-6 * z[comp][node];
                    let mut zp = z.clone();
                    zp[comp][node] += step;
                    let mut zm = z.clone();
                    zm[comp][node] -= step;
                    let (gp, gm) = (e.gradient(&zp), e.gradient(&zm));
                    for c in 0..2 {
                        for i in node.saturating_sub(1)..(node + 2).min(m) {
                            let fd = (gp[c][i] - gm[c][i]) / (2.0 * step);
                            let an = h.get(i * 2 + c, node * 2 + comp);
                            let scale = h.get(i * 2 + c, i * 2 + c).abs();
                            assert!(
                                (fd - an).abs() <= 1e-6 * scale,
                                "n={n} beta={beta} ({i},{c})x({node},{comp}): {fd} {an}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn residual_matches_strong_form() {
        // Residual norm against an independent evaluation through the discrete Laplacian.
        let g = grid(5, 96);
        let p = params(5, 1.0, -2.5);
        let u = RadialField::from_fn(g.clone(), |r| (1.0 - r * r) * (1.0 + r));
        let lap = crate::radial::laplacian(&u);
        let w = &g.weights()[..96];
        let want: f64 = (0..96)
            .map(|i| {
                let x = u.values()[i];
                let f = -lap.values()[i] - 2.5 * x - x.powf(7.0 / 3.0);
                f * f * w[i]
            })
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(
            scalar_residual(&p, Component::First, &u),
            want,
            max_relative = 1e-10
        );
    }

    #[test]
    fn two_constraint_projection_cases() {
        // Already on the set.
        let (t, s) = two_constraint_scaling(3.0, 2.5, 2.0, 1.5, 1.0, 3.0).unwrap();
        assert_relative_eq!(t, 1.0, max_relative = 1e-12);
        assert_relative_eq!(s, 1.0, max_relative = 1e-12);
        let (t, s) = two_constraint_scaling(3.0, 2.0, 4.0, 2.5, -0.5, 3.0).unwrap();
        assert!(t > 0.0 && s > 0.0);
        // Closed form when X = 0.
        let (t, s) = two_constraint_scaling(3.0, 2.0, 5.0, 7.0, 0.0, 3.0).unwrap();
        assert_relative_eq!(t, 0.6, max_relative = 1e-14);
        assert_relative_eq!(s, 2.0 / 7.0, max_relative = 1e-14);
        assert!(two_constraint_scaling(1.0, 1.0, 1.0, 1.0, -2.0, 3.0).is_err());
        // Tiny overlap stays next to the decoupled scalings, on either side.
        for x in [-1e-25, 1e-25, -1e-6] {
            let (t, s) = two_constraint_scaling(3.0, 2.0, 5.0, 7.0, x, 3.0).unwrap();
            assert_relative_eq!(t, 0.6, max_relative = 1e-5);
            assert_relative_eq!(s, 2.0 / 7.0, max_relative = 1e-5);
        }
    }

    #[test]
    fn two_constraint_projection_oracle_n5() {
        // Brute-force oracle: minimize the constraint residual on a fine (t, s) grid, then refine.
        let g = grid(5, 128);
        let p = params(5, -1.0, -2.0);
        let inst = Instanton::centered(5, 0.3);
        let u = RadialField::from_fn(g.clone(), |r| inst.profile(r) * (1.0 - r * r));
        let inst2 = Instanton::centered(5, 0.5);
        let v = RadialField::from_fn(g.clone(), |r| inst2.profile(r) * (1.0 - r * r));
        let pair = FieldPair::new(&p, u, v).unwrap();
        let s = pair.integrals();
        let res = |t: f64, u: f64| {
            let a = t * t * s.q1 - t.powf(10.0 / 3.0) * s.m1 - (t * u).powf(5.0 / 3.0) * s.x;
            let b = u * u * s.q2 - u.powf(10.0 / 3.0) * s.m2 - (t * u).powf(5.0 / 3.0) * s.x;
            (a / (t * t * s.q1)).abs() + (b / (u * u * s.q2)).abs()
        };
        let (mut bt, mut bs, mut best) = (1.0, 1.0, f64::INFINITY);
        let (mut lo_t, mut hi_t, mut lo_s, mut hi_s) = (1e-3, 10.0, 1e-3, 10.0);
        for _ in 0..12 {
            for i in 0..=200 {
                for j in 0..=200 {
                    let t = lo_t + (hi_t - lo_t) * i as f64 / 200.0;
                    let u = lo_s + (hi_s - lo_s) * j as f64 / 200.0;
                    let r = res(t, u);
                    if r < best {
                        best = r;
                        bt = t;
                        bs = u;
                    }
                }
            }
            let (wt, ws) = ((hi_t - lo_t) / 50.0, (hi_s - lo_s) / 50.0);
            lo_t = (bt - wt).max(1e-6);
            hi_t = bt + wt;
            lo_s = (bs - ws).max(1e-6);
            hi_s = bs + ws;
        }
        let (t, u) = project_two_constraint(&p, &pair).unwrap();
        assert_relative_eq!(t, bt, max_relative = 1e-8);
        assert_relative_eq!(u, bs, max_relative = 1e-8);
    }

    #[test]
    fn single_constraint_scaling() {
        let g = grid(6, 64);
        let p = params(6, 1.0, -2.0);
        let pair = positive_pair(&p, &g);
        let t = project_single_constraint(&p, &pair).unwrap();
        let scaled = FieldPair::new(
            &p,
            RadialField::from_values(g.clone(), pair.u.values().iter().map(|x| 3.0 * x).collect())
                .unwrap(),
            RadialField::from_values(g.clone(), pair.v.values().iter().map(|x| 3.0 * x).collect())
                .unwrap(),
        )
        .unwrap();
        assert_relative_eq!(
            project_single_constraint(&p, &scaled).unwrap(),
            t / 3.0,
            max_relative = 1e-12
        );
        let on = FieldPair::new(
            &p,
            RadialField::from_values(g.clone(), pair.u.values().iter().map(|x| t * x).collect())
                .unwrap(),
            RadialField::from_values(g.clone(), pair.v.values().iter().map(|x| t * x).collect())
                .unwrap(),
        )
        .unwrap();
        assert_relative_eq!(
            project_single_constraint(&p, &on).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn scalar_ground_state_bounds_and_identity() {
        let g = grid(5, 256);
        let l1 = first_eigenvalue(&g).unwrap();
        let p = params(5, 1.0, -0.3 * l1);
        let (u, b) = scalar_ground_state(&p, Component::First, &g).unwrap();
        let d = sobolev_data::<f64>(5).unwrap();
        let upper = d.bubble_energy(1.0);
        let lower = ((l1 - 0.3 * l1) / l1).powf(2.5) * upper;
        assert!(b < upper && b > lower, "{lower} {b} {upper}");
        assert!(scalar_residual(&p, Component::First, &u) < 1e-8);
        assert!(u.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn admissibility_is_checked() {
        let g = grid(5, 64);
        let p = params(5, 1.0, 1.0);
        assert!(matches!(
            scalar_ground_state(&p, Component::First, &g),
            Err(SolverError::Admissibility { .. })
        ));
    }

    #[test]
    fn residual_positive_for_random_pair() {
        let g = grid(6, 64);
        let p = params(6, 1.0, -1.0);
        let (a, b) = residual(&p, &positive_pair(&p, &g));
        assert!(a > 0.0 && b > 0.0);
    }

    #[test]
    fn least_squares_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64 - 1.0)).collect();
        let (s, c) = least_squares_slope(&pts).unwrap();
        assert_relative_eq!(s, 2.0, max_relative = 1e-14);
        assert_relative_eq!(c, -1.0, max_relative = 1e-14);
    }
}
