//! Scripted studies: repulsive-coupling sweeps and segregation, the
//! sign-changing limit equation, threshold tables, and the small-ball energy law.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{Component, SystemParams};
use crate::error::SolverError;
use crate::instanton::{sobolev_data, SobolevData};
use crate::radial::{Grading, RadialGrid};
use crate::real::{pow_pos, Real};
use crate::solver::{
    least_squares_slope, scalar_ground_state_with, solve_coupled_with, threshold_table,
    EnergyReport, FieldPair, Init, Mode, SolveContext, SolverOptions, Threshold,
};

/// Amplitude fraction below which a node counts as outside a field's support.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Diagnostics of one point of a repulsive-coupling sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult<T> {
    pub beta: T,
    #[serde(rename = "B_beta")]
    pub b_beta: T,
    /// `∫ u^p v^p`.
    pub overlap: T,
    /// `|β| ∫ u^p v^p`.
    pub beta_overlap: T,
    /// Outer edge of the support for a field that is present at the origin,
    /// inner edge otherwise.
    pub support_radius_u: T,
    pub support_radius_v: T,
    /// Fraction of nodes where `min(u, v)` is below the support threshold.
    pub disjoint_fraction: T,
    pub sign_changing_residual: T,
    pub solver_residual: T,
    /// Initialization that produced the kept state.
    pub basin: String,
    /// A cold restart beat the warm start at this point.
    pub basin_switch: bool,
    #[serde(skip)]
    pub pair: Option<FieldPair<T>>,
    #[serde(skip)]
    pub report: Option<EnergyReport<T>>,
}

/// Knobs of [`beta_sweep_with`].
#[derive(Debug, Clone)]
pub struct SweepOptions<T> {
    /// Inner-ball fractions of the disjoint-bump cold starts.
    pub cold_splits: Vec<T>,
    pub solver: SolverOptions<T>,
}

impl<T: Real> Default for SweepOptions<T> {
    fn default() -> Self {
        SweepOptions {
            cold_splits: vec![T::lit(0.3), T::lit(0.5)],
            solver: SolverOptions::default(),
        }
    }
}

/// `∫ |u|^p |v|^p` on the shared grid.
pub fn overlap<T: Real>(params: &SystemParams<T>, pair: &FieldPair<T>) -> T {
    let p = params.p();
    let prod: Vec<T> = pair
        .u
        .values()
        .iter()
        .zip(pair.v.values())
        .map(|(&a, &b)| pow_pos((a * b).abs(), p))
        .collect();
    pair.grid().integrate_values(&prod, |x| x)
}

/// Support radius of a nodal field, see [`SweepResult::support_radius_u`].
pub fn support_radius<T: Real>(values: &[T], nodes: &[T]) -> T {
    let top = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let cut = T::lit(SUPPORT_THRESHOLD) * top;
    let inside: Vec<usize> = (0..values.len())
        .filter(|&i| values[i].abs() >= cut)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&0), Some(&last)) => nodes[last],
        (Some(&first), _) => nodes[first],
        _ => T::zero(),
    }
}

/// Fraction of nodes where `min(u, v) < 1e-3 max(max u, max v)`.
pub fn disjoint_fraction<T: Real>(pair: &FieldPair<T>) -> T {
    let top = pair.u.max_abs().max(pair.v.max_abs());
    let cut = T::lit(SUPPORT_THRESHOLD) * top;
    let n = pair.u.values().len();
    let hits = pair
        .u
        .values()
        .iter()
        .zip(pair.v.values())
        .filter(|(&a, &b)| a.min(b) < cut)
        .count();
    T::of_usize(hits) / T::of_usize(n)
}

/// Warm-started sweep over decreasing negative `betas` with default options.
pub fn beta_sweep<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    betas: &[T],
) -> Result<Vec<SweepResult<T>>, SolverError> {
    beta_sweep_with(params, grid, betas, &SweepOptions::default())
}

/// Warm-started sweep; every new decade of `|β|` also runs cold starts from
/// disjoint bumps and keeps the lowest converged energy.
pub fn beta_sweep_with<T: Real>(
    params: &SystemParams<T>,
    grid: &Arc<RadialGrid<T>>,
    betas: &[T],
    opts: &SweepOptions<T>,
) -> Result<Vec<SweepResult<T>>, SolverError> {
    if betas.is_empty() {
        return Err(SolverError::Input("empty beta list".into()));
    }
    if betas.iter().any(|&b| !(b < T::zero())) {
        return Err(SolverError::Input("sweep betas must be negative".into()));
    }
    if betas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(SolverError::Input(
            "sweep betas must be strictly decreasing".into(),
        ));
    }
    let ctx = SolveContext::new(params, grid)?;
    let mut out: Vec<SweepResult<T>> = Vec::with_capacity(betas.len());
    let mut last_decade: Option<i64> = None;
    for &beta in betas {
        let at = params.with_beta(beta);
        let decade = beta.abs().log10().floor().to_i64().unwrap_or(0);
        let mut candidates: Vec<(String, Init<T>)> = Vec::new();
        if let Some(prev) = out.last().and_then(|r| r.pair.clone()) {
            candidates.push(("warm".into(), Init::Pair(prev)));
        }
        if candidates.is_empty() || last_decade != Some(decade) {
            for &split in &opts.cold_splits {
                candidates.push((
                    format!("cold_split_{}", split),
                    Init::DisjointBumps { split },
                ));
            }
        }
        last_decade = Some(decade);
        let mut best: Option<(String, FieldPair<T>, EnergyReport<T>)> = None;
        let mut warm_energy = None;
        let mut first_err = None;
        for (label, init) in candidates {
            match solve_coupled_with(&at, &ctx, Mode::TwoConstraint, init, &opts.solver) {
                Ok((pair, report)) => {
                    if label == "warm" {
                        warm_energy = Some(report.b);
                    }
                    if best.as_ref().map_or(true, |b| report.b < b.2.b) {
                        best = Some((label, pair, report));
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let (label, pair, report) = match best {
            Some(b) => b,
            None => {
                return Err(SolverError::AtBeta {
                    beta: beta.as_f64(),
                    source: Box::new(first_err.expect("a failed attempt")),
                })
            }
        };
        let switch =
            label != "warm" && warm_energy.is_some_and(|w| report.b < w - T::lit(1e-9) * w.abs());
        let ov = overlap(&at, &pair);
        let nodes = &grid.nodes()[..grid.intervals()];
        let sc = sign_changing_check(&at, &pair, ctx.levels.b_mu1, &ctx.sobolev);
        out.push(SweepResult {
            beta,
            b_beta: report.b,
            overlap: ov,
            beta_overlap: beta.abs() * ov,
            support_radius_u: support_radius(pair.u.values(), nodes),
            support_radius_v: support_radius(pair.v.values(), nodes),
            disjoint_fraction: disjoint_fraction(&pair),
            sign_changing_residual: sc.residual,
            solver_residual: report.residual_norm,
            basin: label,
            basin_switch: switch,
            pair: Some(pair),
            report: Some(report),
        });
    }
    Ok(out)
}

/// `|β| overlap` at the last point relative to the first.
pub fn tail_ratio<T: Real>(results: &[SweepResult<T>]) -> Option<T> {
    let (first, last) = (results.first()?, results.last()?);
    Some(last.beta_overlap / first.beta_overlap)
}

/// Writes the sweep table as CSV.
pub fn write_sweep_csv<T: Real, W: Write>(
    results: &[SweepResult<T>],
    mut out: W,
) -> io::Result<()> {
    writeln!(
        out,
        "beta,B_beta,overlap,beta_overlap,support_u,support_v,signchange_residual"
    )?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.beta,
            r.b_beta,
            r.overlap,
            r.beta_overlap,
            r.support_radius_u,
            r.support_radius_v,
            r.sign_changing_residual
        )?;
    }
    Ok(())
}

/// Checks of `w = u - v` against the sign-changing limit equation
/// `-Δw + λ1 w⁺ - λ2 w⁻ = μ1 (w⁺)^(2*-1) - μ2 (w⁻)^(2*-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignChangingReport<T> {
    /// Discrete L² residual of the limit equation at `w`.
    pub residual: T,
    /// `J(w) = ½∫|∇w|² + ½∫(λ1 (w⁺)² + λ2 (w⁻)²) - (1/2*)∫(μ1 (w⁺)^2* + μ2 (w⁻)^2*)`.
    pub j_w: T,
    /// `B_mu1 + (1/N) μ1^(-(N-2)/2) S^(N/2)`.
    pub bound: T,
    pub margin: T,
    /// `residual / (|β| overlap + solver residual)`.
    pub coupling_constant: T,
    /// `w⁺ = u` and `w⁻ = v` at every node.
    pub parts_match: bool,
    /// Set for `N = 5`, where the limit is not known to be sign-changing.
    pub caveat: Option<String>,
}

/// Residual and energy bound of `w = u - v`; `b_mu1` is the scalar level of the first component.
pub fn sign_changing_check<T: Real>(
    params: &SystemParams<T>,
    pair: &FieldPair<T>,
    b_mu1: T,
    sobolev: &SobolevData<T>,
) -> SignChangingReport<T> {
    let grid = pair.grid();
    let m = grid.intervals();
    let w_vals: Vec<T> = (0..m)
        .map(|i| pair.u.values()[i] - pair.v.values()[i])
        .collect();
    let q = params.two_star();
    let zero = T::zero();
    let plus = |x: T| x.max(zero);
    let minus = |x: T| (-x).max(zero);
    let kw = grid.apply_stiffness(&w_vals);
    let weights = &grid.weights()[..m];
    let mut res2 = zero;
    for i in 0..m {
        let x = w_vals[i];
        let f = params.lambda1 * plus(x)
            - params.lambda2 * minus(x)
            - params.mu1 * pow_pos(plus(x), q - T::one())
            + params.mu2 * pow_pos(minus(x), q - T::one());
        let g = kw[i] + weights[i] * f;
        res2 += g * g / weights[i];
    }
    let residual = res2.sqrt();
    let half = T::lit(0.5);
    let j_w = half * grid.dirichlet_energy(&w_vals)
        + half
            * grid.integrate_values(&w_vals, |x| {
                params.lambda1 * plus(x) * plus(x) + params.lambda2 * minus(x) * minus(x)
            })
        - grid.integrate_values(&w_vals, |x| {
            params.mu1 * pow_pos(plus(x), q) + params.mu2 * pow_pos(minus(x), q)
        }) / q;
    let bound = b_mu1 + sobolev.bubble_energy(params.mu1);
    let parts_match = (0..m)
        .all(|i| plus(w_vals[i]) == pair.u.values()[i] && minus(w_vals[i]) == pair.v.values()[i]);
    let (ru, rv) = crate::solver::residual(params, pair);
    let ov = overlap(params, pair);
    let denom = params.beta.abs() * ov + ru.max(rv);
    SignChangingReport {
        residual,
        j_w,
        bound,
        margin: bound - j_w,
        coupling_constant: if denom > zero {
            residual / denom
        } else {
            T::infinity()
        },
        parts_match,
        caveat: (params.n == 5).then(|| "unverified regime: N = 5".to_string()),
    }
}

/// Threshold comparisons of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport<T> {
    pub beta: T,
    pub entries: Vec<Threshold<T>>,
    /// For `β < 0` and `N >= 6` the mixed bounds also hold uniformly in `β`;
    /// these entries restate them for this solve.
    pub uniform_entries: Vec<Threshold<T>>,
    pub all_hold: bool,
    pub min_margin: T,
}

/// Evaluates every inequality that applies to `report` at `params.beta`.
pub fn threshold_report<T: Real>(
    params: &SystemParams<T>,
    report: &EnergyReport<T>,
) -> ThresholdReport<T> {
    let sobolev = SobolevData {
        s: report.s,
        ..sobolev_data::<T>(params.n).unwrap_or(SobolevData {
            n: params.n,
            s: report.s,
            integral_grad: T::nan(),
            integral_crit: T::nan(),
            tail_fraction: T::zero(),
            tail_warning: false,
        })
    };
    let entries = threshold_table(
        params,
        report.b,
        report.b_mu1,
        report.b_mu2,
        report.a,
        &sobolev,
    );
    let uniform_entries: Vec<Threshold<T>> = if params.beta < T::zero() && params.n >= 6 {
        entries
            .iter()
            .filter(|t| t.name != "A")
            .map(|t| Threshold {
                name: format!("uniform in beta: {}", t.name),
                ..t.clone()
            })
            .collect()
    } else {
        Vec::new()
    };
    let min_margin = entries
        .iter()
        .chain(&uniform_entries)
        .map(|t| t.margin)
        .fold(T::infinity(), T::min);
    ThresholdReport {
        beta: params.beta,
        all_hold: entries.iter().chain(&uniform_entries).all(|t| t.holds),
        entries,
        uniform_entries,
        min_margin,
    }
}

/// `sup_β B_β` over a sweep against the mixed bounds.
pub fn uniform_threshold_check<T: Real>(
    params: &SystemParams<T>,
    results: &[SweepResult<T>],
    b_mu1: T,
    b_mu2: T,
    sobolev: &SobolevData<T>,
) -> Vec<Threshold<T>> {
    let sup = results
        .iter()
        .map(|r| r.b_beta)
        .fold(T::neg_infinity(), T::max);
    let mut at = *params;
    at.beta = -T::one();
    threshold_table(&at, sup, b_mu1, b_mu2, None, sobolev)
        .into_iter()
        .map(|t| Threshold {
            name: format!("sup over beta: {}", t.name),
            ..t
        })
        .collect()
}

/// Discretization of [`small_ball_law_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBallOptions {
    /// Cells of the coarse grid; the fine grid has twice as many.
    pub intervals: usize,
    pub grading: Grading,
    /// Extrapolate `J_R` from the two grids assuming second-order error.
    pub richardson: bool,
    /// Run the two grid levels on separate threads.
    pub parallel: bool,
}

impl Default for SmallBallOptions {
    fn default() -> Self {
        SmallBallOptions {
            intervals: 1024,
            grading: Grading::Exponential { rate: 6.0 },
            richardson: true,
            parallel: true,
        }
    }
}

/// One radius of the small-ball study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallPoint<T> {
    pub radius: T,
    /// Extrapolated (or fine-grid) `J_R`.
    pub j_r: Option<T>,
    pub j_r_coarse: Option<T>,
    pub j_r_fine: Option<T>,
    pub deficit: Option<T>,
    pub used_in_fit: bool,
    pub error: Option<String>,
}

/// Fit of `log D(R)` against `log R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallFit<T> {
    #[serde(rename = "N")]
    pub n: usize,
    /// `(1/N) μ2^(-(N-2)/2) S^(N/2)`.
    pub threshold: T,
    /// `(2N - 4)/(N - 4)`.
    pub predicted_exponent: T,
    pub slope: Option<T>,
    pub intercept: Option<T>,
    /// `max D(R) / R^γ` over the fitted radii (so `D <= Ĉ1 R^γ`).
    pub c1_hat: Option<T>,
    /// `min D(R) / R^γ` over the fitted radii.
    pub c2_hat: Option<T>,
    pub points: Vec<SmallBallPoint<T>>,
    pub all_deficits_positive: bool,
    pub options: SmallBallOptions,
}

/// Small-ball study with default discretization.
pub fn small_ball_law<T: Real>(
    params: &SystemParams<T>,
    radii: &[T],
) -> Result<SmallBallFit<T>, SolverError> {
    small_ball_law_with(params, radii, &SmallBallOptions::default())
}

/// Solves `-Δu + λ2 u = μ2 u^(2*-1)` on `B(0, R)` for each radius (warm-started
/// in `R`), and regresses the deficit `D(R)` below the single-bubble level.
pub fn small_ball_law_with<T: Real>(
    params: &SystemParams<T>,
    radii: &[T],
    opts: &SmallBallOptions,
) -> Result<SmallBallFit<T>, SolverError> {
    params.validate()?;
    let n = params.n;
    if n < 5 {
        return Err(SolverError::Input("the small-ball law needs N >= 5".into()));
    }
    if radii.is_empty()
        || radii.windows(2).any(|w| !(w[1] < w[0]))
        || !(radii[radii.len() - 1] > T::zero())
    {
        return Err(SolverError::Input(
            "radii must be positive and strictly decreasing".into(),
        ));
    }
    let sobolev = sobolev_data::<T>(n)?;
    let threshold = sobolev.bubble_energy(params.mu2);
    let gamma = T::of_usize(2 * n - 4) / T::of_usize(n - 4);
    let solver = SolverOptions::scalar();
    let base_coarse = RadialGrid::<T>::new(n, T::one(), opts.intervals, opts.grading)?;
    let base_fine = RadialGrid::<T>::new(n, T::one(), 2 * opts.intervals, opts.grading)?;
    let mut warm: [Option<Vec<T>>; 2] = [None, None];
    let mut points = Vec::with_capacity(radii.len());
    for &radius in radii {
        let grids = [
            Arc::new(base_coarse.rescaled(radius)?),
            Arc::new(base_fine.rescaled(radius)?),
        ];
        let solve = |k: usize| {
            scalar_ground_state_with(
                params,
                Component::Second,
                &grids[k],
                &solver,
                warm[k].as_deref(),
            )
        };
        let (a, b) = if opts.parallel {
            std::thread::scope(|s| {
                let h = s.spawn(|| solve(1));
                let a = solve(0);
                (a, h.join().expect("solver thread"))
            })
        } else {
            (solve(0), solve(1))
        };
        let mut point = SmallBallPoint {
            radius,
            j_r: None,
            j_r_coarse: None,
            j_r_fine: None,
            deficit: None,
            used_in_fit: false,
            error: None,
        };
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let j = if opts.richardson {
                    b.energy + (b.energy - a.energy) / T::lit(3.0)
                } else {
                    b.energy
                };
                point.j_r = Some(j);
                point.j_r_coarse = Some(a.energy);
                point.j_r_fine = Some(b.energy);
                point.deficit = Some(threshold - j);
                warm = [Some(a.field.into_values()), Some(b.field.into_values())];
            }
            (Err(e), _) | (_, Err(e)) => {
                point.error = Some(
                    SolverError::AtRadius {
                        radius: radius.as_f64(),
                        source: Box::new(e),
                    }
                    .to_string(),
                );
            }
        }
        points.push(point);
    }
    // Smallest six converged radii with a non-degenerate deficit.
    let eligible: Vec<usize> = (0..points.len())
        .rev()
        .filter(|&i| points[i].deficit.is_some_and(|d| d > T::lit(1e-6)))
        .take(6)
        .collect();
    for &i in &eligible {
        points[i].used_in_fit = true;
    }
    let pts: Vec<(T, T)> = eligible
        .iter()
        .map(|&i| (points[i].radius.ln(), points[i].deficit.unwrap().ln()))
        .collect();
    let fit = least_squares_slope(&pts);
    let scaled: Vec<T> = eligible
        .iter()
        .map(|&i| points[i].deficit.unwrap() / pow_pos(points[i].radius, gamma))
        .collect();
    let all_deficits_positive = points
        .iter()
        .filter_map(|p| p.deficit)
        .all(|d| d > T::zero());
    Ok(SmallBallFit {
        n,
        threshold,
        predicted_exponent: gamma,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        c1_hat: scaled.iter().copied().reduce(T::max),
        c2_hat: scaled.iter().copied().reduce(T::min),
        points,
        all_deficits_positive,
        options: *opts,
    })
}
