//! Aubin–Talenti instantons, the Sobolev constant, and limit energies.

use serde::{Deserialize, Serialize};

use crate::coupling::{solve_k0_l0, Component, CouplingSolution, SystemParams};
use crate::error::{CouplingError, GridError};
use crate::radial::{sphere_area, Grading, RadialGrid};
use crate::real::{pow_pos, Real};

/// `U(x) = [N(N-2)]^((N-2)/4) (ε / (ε^2 + |x - y|^2))^((N-2)/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instanton<T> {
    pub epsilon: T,
    pub center: Vec<T>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl<T: Real> Instanton<T> {
    /// Instanton centred at the origin.
    pub fn centered(n: usize, epsilon: T) -> Self {
        Instanton {
            epsilon,
            center: vec![T::zero(); n],
            n,
        }
    }

    /// `[N(N-2)]^((N-2)/4)`.
    pub fn amplitude(&self) -> T {
        let n = T::of_usize(self.n);
        pow_pos(n * (n - T::lit(2.0)), (n - T::lit(2.0)) / T::lit(4.0))
    }

    /// Value at distance `r` from the centre.
    pub fn profile(&self, r: T) -> T {
        let n = T::of_usize(self.n);
        let e = self.epsilon;
        self.amplitude() * pow_pos(e / (e * e + r * r), (n - T::lit(2.0)) / T::lit(2.0))
    }

    /// Radial derivative `-c (N-2) r ε^((N-2)/2) (ε^2 + r^2)^(-N/2)`.
    pub fn profile_derivative(&self, r: T) -> T {
        let n = T::of_usize(self.n);
        let e = self.epsilon;
        -self.amplitude()
            * (n - T::lit(2.0))
            * r
            * pow_pos(e, (n - T::lit(2.0)) / T::lit(2.0))
            * pow_pos(e * e + r * r, -n / T::lit(2.0))
    }

    /// `U(x)`; panics if `x` does not have `N` coordinates.
    pub fn evaluate(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.center.len(), "point dimension mismatch");
        let r2: T = x
            .iter()
            .zip(&self.center)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.profile(r2.sqrt())
    }
}

/// Both instanton integrals and the constant `S` they define.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevData<T> {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: T,
    /// `∫|∇U|^2` over `R^N`.
    pub integral_grad: T,
    /// `∫U^(2*)` over `R^N`.
    pub integral_crit: T,
    /// Analytic tail beyond the grid, relative to the integral.
    pub tail_fraction: T,
    /// The tail exceeded `1e-8` of the integral.
    pub tail_warning: bool,
}

impl<T: Real> SobolevData<T> {
    /// `S^(N/2)`.
    pub fn s_pow_half_n(&self) -> T {
        self.integral_grad
    }

    /// `(1/N) μ^(-(N-2)/2) S^(N/2)`, the energy of one instanton scaled to strength `μ`.
    pub fn bubble_energy(&self, mu: T) -> T {
        let n = T::of_usize(self.n);
        pow_pos(mu, -(n - T::lit(2.0)) / T::lit(2.0)) * self.integral_grad / n
    }
}

/// Default quadrature grid for [`compute_s`]: radius `10^3 ε`, exponential grading.
pub fn default_instanton_grid<T: Real>(n: usize, epsilon: T) -> Result<RadialGrid<T>, GridError> {
    RadialGrid::new(
        n,
        T::lit(1e3) * epsilon,
        1 << 13,
        Grading::Exponential {
            rate: 1e3f64.ln() + 2.0,
        },
    )
}

fn trapezoid<T: Real, F: Fn(T) -> T>(nodes: &[T], stride: usize, f: &F) -> T {
    let picked: Vec<T> = nodes.iter().step_by(stride).copied().collect();
    picked
        .windows(2)
        .map(|w| (w[1] - w[0]) * (f(w[0]) + f(w[1])) / T::lit(2.0))
        .sum()
}

/// Integrals of `|∇U_ε|^2` and `U_ε^(2*)` over `R^N` on the nodes of `grid`,
/// with Richardson extrapolation against the every-other-node subgrid plus an
/// analytic tail beyond `R`. The grid needs an even number of cells.
pub fn compute_s<T: Real>(
    n: usize,
    epsilon: T,
    grid: &RadialGrid<T>,
) -> Result<SobolevData<T>, CouplingError> {
    if n < 5 {
        return Err(CouplingError::Dimension(n));
    }
    if !(epsilon > T::zero()) {
        return Err(CouplingError::Domain {
            what: "instanton scale",
            value: epsilon.as_f64(),
        });
    }
    if grid.intervals() % 2 != 0 {
        return Err(CouplingError::Domain {
            what: "instanton quadrature (odd number of cells)",
            value: grid.intervals() as f64,
        });
    }
    let inst = Instanton::centered(n, epsilon);
    let sigma = sphere_area::<T>(n);
    let nn = T::of_usize(n);
    let two_star = T::lit(2.0) * nn / (nn - T::lit(2.0));
    let grad = |r: T| sigma * r.powi(n as i32 - 1) * inst.profile_derivative(r).powi(2);
    let crit = |r: T| sigma * r.powi(n as i32 - 1) * pow_pos(inst.profile(r), two_star);
    let rich = |f: &dyn Fn(T) -> T| {
        let fine = trapezoid(grid.nodes(), 1, &f);
        let coarse = trapezoid(grid.nodes(), 2, &f);
        fine + (fine - coarse) / T::lit(3.0)
    };
    let r = grid.radius();
    let c = inst.amplitude();
    let tail_grad = sigma
        * c
        * c
        * (nn - T::lit(2.0))
        * pow_pos(epsilon, nn - T::lit(2.0))
        * pow_pos(r, T::lit(2.0) - nn);
    let tail_crit = sigma * pow_pos(c, two_star) * pow_pos(epsilon, nn) * pow_pos(r, -nn) / nn;
    let integral_grad = rich(&grad) + tail_grad;
    let integral_crit = rich(&crit) + tail_crit;
    let tail_fraction = (tail_grad / integral_grad).max(tail_crit / integral_crit);
    Ok(SobolevData {
        n,
        s: pow_pos(integral_grad, T::lit(2.0) / nn),
        integral_grad,
        integral_crit,
        tail_fraction,
        tail_warning: tail_fraction > T::lit(1e-8),
    })
}

/// [`compute_s`] with `ε = 1` on [`default_instanton_grid`].
pub fn sobolev_data<T: Real>(n: usize) -> Result<SobolevData<T>, CouplingError> {
    let grid = default_instanton_grid(n, T::one()).map_err(|_| CouplingError::Dimension(n))?;
    compute_s(n, T::one(), &grid)
}

/// Least energy `A` of the limit problem on `R^N`.
///
/// For `beta < 0` it is the sum of two decoupled instanton energies, for
/// `beta >= (p-1) max(mu1, mu2)` it is `(1/N)(k0 + l0) S^(N/2)`. The root is
/// computed when `coupling` is `None`.
pub fn limit_energy_a<T: Real>(
    params: &SystemParams<T>,
    sobolev: &SobolevData<T>,
    coupling: Option<&CouplingSolution<T>>,
) -> Result<T, CouplingError> {
    let n = params.dim();
    if params.beta < T::zero() {
        let w = params.mu_weight(Component::First) + params.mu_weight(Component::Second);
        return Ok(w * sobolev.s_pow_half_n() / n);
    }
    let floor = params.classification_floor();
    if params.beta < floor {
        return Err(CouplingError::NoClosedForm {
            beta: params.beta.as_f64(),
            lower: floor.as_f64(),
        });
    }
    let sol = match coupling {
        Some(s) => *s,
        None => solve_k0_l0(params)?,
    };
    Ok((sol.k + sol.l) * sobolev.s_pow_half_n() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gamma_half(n: usize) -> f64 {
        // Γ(n/2), independent of the crate's sphere-area helper.
        let mut g = if n % 2 == 0 {
            1.0
        } else {
            std::f64::consts::PI.sqrt()
        };
        let mut a = if n % 2 == 0 { 1.0 } else { 0.5 };
        while a < n as f64 / 2.0 - 1e-9 {
            g *= a;
            a += 1.0;
        }
        g
    }

    fn s_closed_form(n: usize) -> f64 {
        let nf = n as f64;
        let gamma_n: f64 = (1..n).map(|k| k as f64).product();
        std::f64::consts::PI * nf * (nf - 2.0) * (gamma_half(n) / gamma_n).powf(2.0 / nf)
    }

    #[test]
    fn evaluate_values() {
        let u = Instanton::<f64>::centered(5, 1.0);
        assert_relative_eq!(
            u.evaluate(&[0.0; 5]),
            15f64.powf(0.75),
            max_relative = 1e-15
        );
        let v = Instanton {
            epsilon: 2.0,
            center: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            n: 6,
        };
        assert_relative_eq!(
            v.evaluate(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            1.5,
            max_relative = 1e-15
        );
    }

    #[test]
    fn scaling_identity() {
        let e = 0.37;
        let u = Instanton::<f64>::centered(7, e);
        let one = Instanton::<f64>::centered(7, 1.0);
        for &r in &[0.0, 0.1, 1.0, 5.0] {
            assert_relative_eq!(
                u.profile(r),
                e.powf(-2.5) * one.profile(r / e),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let u = Instanton::<f64>::centered(6, 0.8);
        for &r in &[0.05, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (u.profile(r + h) - u.profile(r - h)) / (2.0 * h);
            assert_relative_eq!(u.profile_derivative(r), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn s_matches_closed_form() {
        for n in 5..=8 {
            let d = sobolev_data::<f64>(n).unwrap();
            assert!(!d.tail_warning, "N={n} tail {}", d.tail_fraction);
            assert_relative_eq!(d.s, s_closed_form(n), max_relative = 1e-8);
            assert!((d.integral_grad - d.integral_crit).abs() < 1e-8 * d.integral_grad);
        }
        // Frozen fixture for N = 5 (closed form above as the oracle).
        let d5 = sobolev_data::<f64>(5).unwrap();
        assert_relative_eq!(d5.s, s_closed_form(5), max_relative = 1e-9);
    }

    #[test]
    fn epsilon_invariance() {
        let base = sobolev_data::<f64>(5).unwrap().s;
        for e in [0.5, 2.0] {
            let g = default_instanton_grid(5, e).unwrap();
            let d = compute_s(5, e, &g).unwrap();
            assert_relative_eq!(d.s, base, max_relative = 1e-9);
        }
    }

    #[test]
    fn limit_energy_cases() {
        let d = sobolev_data::<f64>(6).unwrap();
        let s3 = d.s.powi(3);
        let neg = SystemParams::<f64>::algebraic(6, 1.0, 1.0, -2.0).unwrap();
        assert_relative_eq!(
            limit_energy_a(&neg, &d, None).unwrap(),
            2.0 * s3 / 6.0,
            max_relative = 1e-8
        );
        let pos = SystemParams::<f64>::algebraic(6, 1.0, 1.0, 1.0).unwrap();
        let a = limit_energy_a(&pos, &d, None).unwrap();
        assert_relative_eq!(a, 0.5 * s3 / 6.0, max_relative = 1e-8);
        assert!(limit_energy_a(&neg, &d, None).unwrap() > a);
        let mid = pos.with_beta(0.3);
        assert!(matches!(
            limit_energy_a(&mid, &d, None),
            Err(CouplingError::NoClosedForm { .. })
        ));
    }

    #[test]
    fn limit_energy_decreases_in_beta() {
        let d = sobolev_data::<f64>(5).unwrap();
        let p = SystemParams::<f64>::algebraic(5, 1.5, 1.5, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let b = 1.0 + 0.5 * i as f64;
            let a = limit_energy_a(&p.with_beta(b), &d, None).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }
}
