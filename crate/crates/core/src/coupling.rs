//! Algebraic coupling system for proportional solutions.
//!
//! A pair `(sqrt(k) w, sqrt(l) w)` built from one scalar profile `w` solves the
//! coupled system exactly when
//!
//! ```text
//! alpha1(k, l) = mu1 k^(p-1) + beta k^(p/2-1) l^(p/2) - 1 = 0
//! alpha2(k, l) = mu2 l^(p-1) + beta l^(p/2-1) k^(p/2) - 1 = 0
//! ```
//!
//! with `p = N/(N-2)`. For `beta > 0` the routines below locate the root with
//! the smallest `k`, the threshold coupling `beta0`, and follow the branch that
//! starts at the uncoupled solution `beta = 0`.

use serde::{Deserialize, Serialize};

use crate::error::CouplingError;
use crate::real::{pow_pos, Real};

/// Which of the two components an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    First,
    Second,
}

/// Analytic parameters of the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<T> {
    #[serde(rename = "N")]
    pub n: usize,
    pub mu1: T,
    pub mu2: T,
    pub beta: T,
    pub lambda1: T,
    pub lambda2: T,
}

impl<T: Real> SystemParams<T> {
    /// Validated constructor.
    pub fn new(
        n: usize,
        mu1: T,
        mu2: T,
        beta: T,
        lambda1: T,
        lambda2: T,
    ) -> Result<Self, CouplingError> {
        let params = SystemParams {
            n,
            mu1,
            mu2,
            beta,
            lambda1,
            lambda2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters without linear potentials, enough for the algebra.
    pub fn algebraic(n: usize, mu1: T, mu2: T, beta: T) -> Result<Self, CouplingError> {
        Self::new(n, mu1, mu2, beta, T::zero(), T::zero())
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if self.n < 5 {
            return Err(CouplingError::Dimension(self.n));
        }
        for (name, value) in [
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("beta", self.beta),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !value.is_finite() {
                return Err(CouplingError::NotFinite {
                    name,
                    value: value.as_f64(),
                });
            }
        }
        if self.mu1 <= T::zero() || self.mu2 <= T::zero() {
            return Err(CouplingError::NonPositiveMu {
                mu1: self.mu1.as_f64(),
                mu2: self.mu2.as_f64(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> T {
        T::of_usize(self.n)
    }

    /// `p = N/(N-2)`, so that `2p` is the critical Sobolev exponent.
    pub fn p(&self) -> T {
        self.dim() / (self.dim() - T::lit(2.0))
    }

    /// `2* = 2N/(N-2)`.
    pub fn two_star(&self) -> T {
        T::lit(2.0) * self.p()
    }

    /// `(N-2)/2 = 1/(p-1)`.
    pub fn half_n_minus_2(&self) -> T {
        (self.dim() - T::lit(2.0)) / T::lit(2.0)
    }

    pub fn with_beta(&self, beta: T) -> Self {
        SystemParams { beta, ..*self }
    }

    /// Exchanges the roles of the two components.
    pub fn swapped(&self) -> Self {
        SystemParams {
            n: self.n,
            mu1: self.mu2,
            mu2: self.mu1,
            beta: self.beta,
            lambda1: self.lambda2,
            lambda2: self.lambda1,
        }
    }

    pub fn mu(&self, which: Component) -> T {
        match which {
            Component::First => self.mu1,
            Component::Second => self.mu2,
        }
    }

    pub fn lambda(&self, which: Component) -> T {
        match which {
            Component::First => self.lambda1,
            Component::Second => self.lambda2,
        }
    }

    /// `mu^(-(N-2)/2)`, the coefficient of a single-component instanton energy.
    pub fn mu_weight(&self, which: Component) -> T {
        pow_pos(self.mu(which), -self.half_n_minus_2())
    }

    /// `(p-1) max(mu1, mu2)`, the lower edge of the classification range.
    pub fn classification_floor(&self) -> T {
        (self.p() - T::one()) * self.mu1.max(self.mu2)
    }
}

/// Positive root `(k, l)` of the coupling system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSolution<T> {
    pub k: T,
    pub l: T,
    /// `k` is the first root of the reduced function on the scan.
    pub is_minimal_k: bool,
    /// `max(|alpha1|, |alpha2|)` at `(k, l)`.
    pub residual: T,
    /// An argument was within rounding distance of a domain endpoint and was clamped.
    pub endpoint_clamped: bool,
}

/// Analytic Jacobian of `(alpha1, alpha2)` at a root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jacobian<T> {
    pub matrix: [[T; 2]; 2],
    pub det: T,
    /// `(p/2)(p-1) k^-1 l^-1 (mu1 k^(p-1) + mu2 l^(p-1) - 2/p)`.
    pub det_closed_form: T,
}

/// Result of sampling the region `k + l <= k0 + l0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport<T> {
    pub samples: usize,
    /// Sample points other than `(k0, l0)` with `alpha1 >= 0` and `alpha2 >= 0`.
    pub violations: Vec<(T, T)>,
    /// `max(mu1, mu2) (k0 + l0)^(p-1)`, must stay below 1.
    pub max_mu_sum_power: T,
    pub passed: bool,
}

/// One accepted point of [`continue_branch`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint<T> {
    pub beta: T,
    pub solution: CouplingSolution<T>,
    /// `k + l > min(mu1^(-(N-2)/2), mu2^(-(N-2)/2))`: the proportional pair
    /// costs more than a single instanton and cannot be least energy.
    pub exceeds_single_bubble: bool,
}

/// Knobs of [`solve_k0_l0_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    /// Points of the logarithmic scan.
    pub scan_points: usize,
    /// Decades below `mu1^(-1/(p-1))` where the scan starts.
    pub scan_decades: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            scan_points: 10_000,
            scan_decades: 40,
        }
    }
}

pub(crate) fn tol<T: Real>(x: f64) -> T {
    T::lit(x).max(T::lit(64.0) * T::epsilon())
}

fn alpha_value<T: Real>(mu: T, beta: T, p: T, x: T, y: T) -> T {
    let half = p / T::lit(2.0);
    let coupling = if y == T::zero() {
        T::zero()
    } else if beta == T::zero() {
        T::zero()
    } else {
        beta * pow_pos(x, half - T::one()) * pow_pos(y, half)
    };
    mu * pow_pos(x, p - T::one()) + coupling - T::one()
}

/// `alpha1(k, l)`; needs `k > 0` and `l >= 0`.
pub fn alpha1<T: Real>(params: &SystemParams<T>, k: T, l: T) -> Result<T, CouplingError> {
    if !(k > T::zero()) {
        return Err(CouplingError::Domain {
            what: "alpha1 (k must be positive)",
            value: k.as_f64(),
        });
    }
    if l < T::zero() {
        return Err(CouplingError::Domain {
            what: "alpha1 (l must be nonnegative)",
            value: l.as_f64(),
        });
    }
    Ok(alpha_value(params.mu1, params.beta, params.p(), k, l))
}

/// `alpha2(k, l)`; needs `l > 0` and `k >= 0`.
pub fn alpha2<T: Real>(params: &SystemParams<T>, k: T, l: T) -> Result<T, CouplingError> {
    if !(l > T::zero()) {
        return Err(CouplingError::Domain {
            what: "alpha2 (l must be positive)",
            value: l.as_f64(),
        });
    }
    if k < T::zero() {
        return Err(CouplingError::Domain {
            what: "alpha2 (k must be nonnegative)",
            value: k.as_f64(),
        });
    }
    Ok(alpha_value(params.mu2, params.beta, params.p(), l, k))
}

/// Both coupling functions at a point with `k, l > 0`.
pub fn alpha<T: Real>(params: &SystemParams<T>, k: T, l: T) -> Result<(T, T), CouplingError> {
    Ok((alpha1(params, k, l)?, alpha2(params, k, l)?))
}

fn residual_of<T: Real>(params: &SystemParams<T>, k: T, l: T) -> T {
    match alpha(params, k, l) {
        Ok((a, b)) => a.abs().max(b.abs()),
        Err(_) => T::infinity(),
    }
}

/// Largest admissible argument of `h_i`: `mu_i^(-1/(p-1))`.
pub fn h_domain_end<T: Real>(params: &SystemParams<T>, which: Component) -> T {
    pow_pos(params.mu(which), -params.half_n_minus_2())
}

/// `1 - mu x^(p-1)` evaluated as `-expm1((p-1) ln(x / x_end))`, exact zero at the end point.
fn one_minus_mu_pow<T: Real>(params: &SystemParams<T>, x: T, which: Component) -> T {
    let end = h_domain_end(params, which);
    -((params.p() - T::one()) * (x / end).ln()).exp_m1()
}

/// Clamps `x` onto `(0, end]` when it overshoots `end` by rounding only.
fn clamp_to_end<T: Real>(x: T, end: T, what: &'static str) -> Result<(T, bool), CouplingError> {
    if !(x > T::zero()) || !x.is_finite() {
        return Err(CouplingError::Domain {
            what,
            value: x.as_f64(),
        });
    }
    if x <= end {
        return Ok((x, false));
    }
    if x <= end * (T::one() + tol(1e-14)) {
        return Ok((end, true));
    }
    Err(CouplingError::Domain {
        what,
        value: x.as_f64(),
    })
}

/// `h1(k) = beta^(-2/p) (k^(1-p/2) - mu1 k^(p/2))^(2/p)`, or `h2` with the roles swapped.
///
/// The curve `l = h1(k)` is the zero set of `alpha1`.
pub fn h_curve<T: Real>(
    params: &SystemParams<T>,
    x: T,
    which: Component,
) -> Result<T, CouplingError> {
    if !(params.beta > T::zero()) {
        return Err(CouplingError::NeedPositiveBeta(params.beta.as_f64()));
    }
    let (x, _) = clamp_to_end(x, h_domain_end(params, which), "h curve")?;
    let p = params.p();
    let half = p / T::lit(2.0);
    let bracket = pow_pos(x, T::one() - half) * one_minus_mu_pow(params, x, which);
    let two_over_p = T::lit(2.0) / p;
    Ok(pow_pos(params.beta, -two_over_p) * pow_pos(bracket.max(T::zero()), two_over_p))
}

/// Reduced function
/// `f(k) = (1/(beta k^(p-1)) - mu1/beta)^((2-p)/p) - mu2/beta - ((beta^2 - mu1 mu2)/beta) k^(p-1)`.
///
/// Along `l = h1(k)` one has `alpha2 = -l^(p/2-1) k^(1-p/2) f(k)`, so roots of
/// `f` are exactly the roots of the coupling system.
pub fn reduced_f<T: Real>(params: &SystemParams<T>, k: T) -> Result<T, CouplingError> {
    if !(params.beta > T::zero()) {
        return Err(CouplingError::NeedPositiveBeta(params.beta.as_f64()));
    }
    let (k, _) = clamp_to_end(k, h_domain_end(params, Component::First), "reduced f")?;
    Ok(reduced_f_unchecked(params, k))
}

fn reduced_f_unchecked<T: Real>(params: &SystemParams<T>, k: T) -> T {
    let p = params.p();
    let b = params.beta;
    let kp = pow_pos(k, p - T::one());
    let y = (one_minus_mu_pow(params, k, Component::First) / (b * kp)).max(T::zero());
    pow_pos(y, (T::lit(2.0) - p) / p)
        - params.mu2 / b
        - ((b * b - params.mu1 * params.mu2) / b) * kp
}

fn reduced_f_prime<T: Real>(params: &SystemParams<T>, k: T) -> T {
    let p = params.p();
    let b = params.beta;
    let kp = pow_pos(k, p - T::one());
    let y = T::one() / (b * kp) - params.mu1 / b;
    let dy = -(p - T::one()) / (b * kp * k);
    let a = (T::lit(2.0) - p) / p;
    a * pow_pos(y, a - T::one()) * dy
        - ((b * b - params.mu1 * params.mu2) / b) * (p - T::one()) * kp / k
}

/// Root `(k0, l0)` with minimal `k` for `beta > 0`, using the default scan.
pub fn solve_k0_l0<T: Real>(
    params: &SystemParams<T>,
) -> Result<CouplingSolution<T>, CouplingError> {
    solve_k0_l0_with(params, RootOptions::default())
}

/// Root `(k0, l0)` with minimal `k`: logarithmic scan for the first sign
/// change of [`reduced_f`], bisection, Newton polish, then `l0 = h1(k0)`.
pub fn solve_k0_l0_with<T: Real>(
    params: &SystemParams<T>,
    opts: RootOptions,
) -> Result<CouplingSolution<T>, CouplingError> {
    params.validate()?;
    if !(params.beta > T::zero()) {
        return Err(CouplingError::NeedPositiveBeta(params.beta.as_f64()));
    }
    let k_max = h_domain_end(params, Component::First);
    let points = opts.scan_points.max(16);
    let bracket_err = CouplingError::Bracket {
        points,
        k_max: k_max.as_f64(),
    };
    // f blows up at 0; find a left end where it is already positive.
    let mut log_lo = -T::of_usize(opts.scan_decades.max(1)) * T::LN_10();
    let mut tries = 0;
    while !(reduced_f_unchecked(params, k_max * log_lo.exp()) > T::zero()) {
        log_lo = log_lo * T::lit(2.0);
        tries += 1;
        if tries > 6 || (k_max * log_lo.exp()) == T::zero() {
            return Err(bracket_err);
        }
    }
    let step = -log_lo / T::of_usize(points);
    let mut a = k_max * log_lo.exp();
    let mut fa = reduced_f_unchecked(params, a);
    let mut found = None;
    for i in 1..=points {
        let b = if i == points {
            k_max
        } else {
            k_max * (log_lo + step * T::of_usize(i)).exp()
        };
        let fb = reduced_f_unchecked(params, b);
        if fb <= T::zero() {
            found = Some((a, b, fa, fb));
            break;
        }
        a = b;
        fa = fb;
    }
    let (mut lo, mut hi, _, fhi) = found.ok_or(bracket_err)?;
    let k = if fhi == T::zero() {
        hi
    } else {
        // Keep f(lo) > 0 >= f(hi).
        for _ in 0..400 {
            let mid = lo + (hi - lo) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if reduced_f_unchecked(params, mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut k = lo + (hi - lo) / T::lit(2.0);
        for _ in 0..3 {
            let d = reduced_f_prime(params, k);
            if d == T::zero() || !d.is_finite() {
                break;
            }
            let next = k - reduced_f_unchecked(params, k) / d;
            if next >= lo && next <= hi && next.is_finite() {
                k = next;
            } else {
                break;
            }
        }
        k
    };
    let (k, clamped) = clamp_to_end(k, k_max, "k0")?;
    let l = h_curve(params, k, Component::First)?;
    let residual = residual_of(params, k, l);
    if !(residual < tol::<T>(1e-10)) {
        return Err(CouplingError::Residual(residual.as_f64()));
    }
    Ok(CouplingSolution {
        k,
        l,
        is_minimal_k: true,
        residual,
        endpoint_clamped: clamped,
    })
}

/// Samples `{k + l <= k0 + l0, k, l >= 0}` on a triangular lattice with about
/// `samples` points and lists every point other than `(k0, l0)` where both
/// coupling functions are nonnegative.
pub fn check_region_uniqueness<T: Real>(
    params: &SystemParams<T>,
    sol: &CouplingSolution<T>,
    samples: usize,
) -> Result<UniquenessReport<T>, CouplingError> {
    params.validate()?;
    let floor = params.classification_floor();
    if params.beta < floor {
        return Err(CouplingError::Domain {
            what: "uniqueness check (needs beta >= (p-1) max mu)",
            value: params.beta.as_f64(),
        });
    }
    let p = params.p();
    let s = sol.k + sol.l;
    let n = (((2 * samples.max(3)) as f64).sqrt().floor() as usize).max(2);
    let exclusion = s * tol::<T>(1e-6);
    let mut violations = Vec::new();
    let mut count = 0;
    for i in 0..=n {
        for j in 0..=(n - i) {
            if i == 0 && j == 0 {
                continue;
            }
            count += 1;
            let k = s * T::of_usize(i) / T::of_usize(n);
            let l = s * T::of_usize(j) / T::of_usize(n);
            let d = ((k - sol.k).powi(2) + (l - sol.l).powi(2)).sqrt();
            if d < exclusion {
                continue;
            }
            // On an axis the coupling term of the other equation is +infinity.
            let a1 = if k == T::zero() {
                T::infinity()
            } else {
                alpha_value(params.mu1, params.beta, p, k, l)
            };
            let a2 = if l == T::zero() {
                T::infinity()
            } else {
                alpha_value(params.mu2, params.beta, p, l, k)
            };
            if a1 >= T::zero() && a2 >= T::zero() {
                violations.push((k, l));
            }
        }
    }
    let max_mu_sum_power = params.mu1.max(params.mu2) * pow_pos(s, p - T::one());
    let passed = violations.is_empty() && max_mu_sum_power < T::one();
    Ok(UniquenessReport {
        samples: count,
        violations,
        max_mu_sum_power,
        passed,
    })
}

/// `g(beta) = (p-1) mu1 mu2 beta^(2/p-2) + beta^(2/p)` for `beta >= (p-1) max(mu1, mu2)`.
pub fn g_of_beta<T: Real>(params: &SystemParams<T>, beta: T) -> Result<T, CouplingError> {
    let floor = params.classification_floor();
    if !(beta >= floor * (T::one() - tol(1e-14))) {
        return Err(CouplingError::Domain {
            what: "g(beta) below (p-1) max mu",
            value: beta.as_f64(),
        });
    }
    Ok(g_unchecked(params, beta))
}

fn g_unchecked<T: Real>(params: &SystemParams<T>, beta: T) -> T {
    let p = params.p();
    let tp = T::lit(2.0) / p;
    (p - T::one()) * params.mu1 * params.mu2 * pow_pos(beta, tp - T::lit(2.0)) + pow_pos(beta, tp)
}

/// Right-hand constant `p (p-1)^(2/p-1) max(mu1^(2/p), mu2^(2/p))` of the `beta0` equation.
pub fn beta0_target<T: Real>(params: &SystemParams<T>) -> T {
    let p = params.p();
    let tp = T::lit(2.0) / p;
    p * pow_pos(p - T::one(), tp - T::one()) * pow_pos(params.mu1.max(params.mu2), tp)
}

/// Threshold coupling `beta0`, the root of `g(beta0) = beta0_target` above `(p-1) max mu`.
///
/// Equal strengths give `(p-1) mu` exactly.
pub fn solve_beta0<T: Real>(params: &SystemParams<T>) -> Result<T, CouplingError> {
    params.validate()?;
    let floor = params.classification_floor();
    if params.mu1 == params.mu2 {
        return Ok(floor);
    }
    let target = beta0_target(params);
    let m = params.mu1.max(params.mu2);
    let mut lo = floor;
    if g_unchecked(params, lo) >= target {
        return Ok(lo);
    }
    let mut width = T::lit(10.0) * m;
    let mut hi = floor + width;
    while g_unchecked(params, hi) < target {
        lo = hi;
        width = width * T::lit(2.0);
        hi = floor + width;
    }
    for _ in 0..400 {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_unchecked(params, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let glo = (g_unchecked(params, lo) - target).abs();
    let ghi = (g_unchecked(params, hi) - target).abs();
    Ok(if glo <= ghi { lo } else { hi })
}

fn jacobian_entries<T: Real>(params: &SystemParams<T>, k: T, l: T) -> [[T; 2]; 2] {
    let p = params.p();
    let b = params.beta;
    let half = p / T::lit(2.0);
    let one = T::one();
    let two = T::lit(2.0);
    let j11 = (p - one) * params.mu1 * pow_pos(k, p - two)
        + (half - one) * b * pow_pos(k, half - two) * pow_pos(l, half);
    let off = half * b * pow_pos(k, half - one) * pow_pos(l, half - one);
    let j22 = (p - one) * params.mu2 * pow_pos(l, p - two)
        + (half - one) * b * pow_pos(l, half - two) * pow_pos(k, half);
    [[j11, off], [off, j22]]
}

/// Analytic Jacobian of `(alpha1, alpha2)` at `sol` and its determinant.
pub fn jacobian_at<T: Real>(
    params: &SystemParams<T>,
    sol: &CouplingSolution<T>,
) -> Result<Jacobian<T>, CouplingError> {
    if !(sol.k > T::zero() && sol.l > T::zero()) {
        return Err(CouplingError::Domain {
            what: "jacobian (k and l must be positive)",
            value: sol.k.min(sol.l).as_f64(),
        });
    }
    let m = jacobian_entries(params, sol.k, sol.l);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let p = params.p();
    let det_closed_form = (p / T::lit(2.0)) * (p - T::one()) / (sol.k * sol.l)
        * (params.mu1 * pow_pos(sol.k, p - T::one()) + params.mu2 * pow_pos(sol.l, p - T::one())
            - T::lit(2.0) / p);
    Ok(Jacobian {
        matrix: m,
        det,
        det_closed_form,
    })
}

/// Newton corrector at fixed `beta`; `None` if it fails to reach the residual gate.
fn newton_corrector<T: Real>(params: &SystemParams<T>, mut k: T, mut l: T) -> Option<(T, T, T)> {
    let gate = tol::<T>(1e-10);
    let mut res = residual_of(params, k, l);
    for _ in 0..40 {
        if res < gate * T::lit(1e-2) {
            break;
        }
        let (a1, a2) = alpha(params, k, l).ok()?;
        let m = jacobian_entries(params, k, l);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let dk = (m[1][1] * a1 - m[0][1] * a2) / det;
        let dl = (m[0][0] * a2 - m[1][0] * a1) / det;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let (nk, nl) = (k - t * dk, l - t * dl);
            if nk > T::zero() && nl > T::zero() {
                let nr = residual_of(params, nk, nl);
                if nr < res || nr < gate * T::lit(1e-2) {
                    k = nk;
                    l = nl;
                    res = nr;
                    accepted = true;
                    break;
                }
            }
            t = t / T::lit(2.0);
        }
        if !accepted {
            break;
        }
    }
    if res < gate {
        Some((k, l, res))
    } else {
        None
    }
}

/// Follows the root branch `(k(beta), l(beta))` from the uncoupled point
/// `(mu1^(-(N-2)/2), mu2^(-(N-2)/2))` at `beta = 0` up to `beta_max`.
///
/// Natural-parameter continuation with a tangent predictor and a Newton
/// corrector. The step starts at `beta_max / steps` and is halved on failure
/// down to `1e-8`.
pub fn continue_branch<T: Real>(
    params: &SystemParams<T>,
    beta_max: T,
    steps: usize,
) -> Result<Vec<BranchPoint<T>>, CouplingError> {
    params.validate()?;
    if !(beta_max > T::zero()) {
        return Err(CouplingError::NeedPositiveBeta(beta_max.as_f64()));
    }
    let p = params.p();
    let half = p / T::lit(2.0);
    let bubble = params
        .mu_weight(Component::First)
        .min(params.mu_weight(Component::Second));
    let mut k = params.mu_weight(Component::First);
    let mut l = params.mu_weight(Component::Second);
    let mut beta = T::zero();
    let base = beta_max / T::of_usize(steps.max(1));
    let min_step = T::lit(1e-8).max(T::lit(16.0) * T::epsilon() * beta_max);
    let mut h = base;
    let point = |beta: T, k: T, l: T, res: T| {
        let here = params.with_beta(beta);
        let minimal = beta > T::zero()
            && solve_k0_l0(&here)
                .map(|s| (s.k - k).abs() <= tol::<T>(1e-8) * k.max(T::one()))
                .unwrap_or(false);
        BranchPoint {
            beta,
            solution: CouplingSolution {
                k,
                l,
                is_minimal_k: minimal,
                residual: res,
                endpoint_clamped: false,
            },
            exceeds_single_bubble: k + l > bubble,
        }
    };
    let mut out = vec![point(
        beta,
        k,
        l,
        residual_of(&params.with_beta(beta), k, l),
    )];
    while beta < beta_max {
        let target = (beta + h).min(beta_max);
        let dt = target - beta;
        // Tangent: J dz/dbeta = -d(alpha)/d(beta).
        let here = params.with_beta(beta);
        let m = jacobian_entries(&here, k, l);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let g1 = pow_pos(k, half - T::one()) * pow_pos(l, half);
        let g2 = pow_pos(l, half - T::one()) * pow_pos(k, half);
        let (pk, pl) = if det != T::zero() && det.is_finite() {
            (
                k - dt * (m[1][1] * g1 - m[0][1] * g2) / det,
                l - dt * (m[0][0] * g2 - m[1][0] * g1) / det,
            )
        } else {
            (k, l)
        };
        let guess = if pk > T::zero() && pl > T::zero() {
            (pk, pl)
        } else {
            (k, l)
        };
        match newton_corrector(&params.with_beta(target), guess.0, guess.1) {
            Some((nk, nl, res)) => {
                beta = target;
                k = nk;
                l = nl;
                out.push(point(beta, k, l, res));
                h = (h * T::lit(2.0)).min(base);
            }
            None => {
                h = h / T::lit(2.0);
                if h < min_step {
                    return Err(CouplingError::Continuation {
                        last_beta: beta.as_f64(),
                    });
                }
            }
        }
    }
    Ok(out)
}
