//! Invariant suite behind `critsys check`.

use std::sync::Arc;

use critsys::coupling::{beta0_target, g_of_beta, jacobian_at, solve_beta0, solve_k0_l0};
use critsys::instanton::sobolev_data;
use critsys::radial::{first_eigenvalue, gradient_quadrature, laplacian, Grading};
use critsys::solver::{gradient_check, scalar_ground_state_with, solve_coupled, Init, Mode};
use critsys::{Component, FieldPair, RadialField, RadialGrid, SolverOptions, SystemParams};
use serde::Serialize;

/// One row of the table.
#[derive(Debug, Clone, Serialize)]
pub struct Invariant {
    pub name: &'static str,
    /// `algebra` or `pde`.
    pub kind: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(u64) -> Result<String, String>;

const ALGEBRA: [(&str, Check); 5] = [
    ("symmetric closed form", symmetric_closed_form),
    ("beta0 for equal strengths", beta0_equal),
    ("beta0 equation", beta0_equation),
    ("determinant and root inequalities", determinant),
    ("scaling covariance", scaling),
];

const PDE: [(&str, Check); 5] = [
    ("instanton identity", instanton_identity),
    ("gradient vs differences", gradient),
    ("integration by parts order", ibp_order),
    ("scalar energy bounds", scalar_bounds),
    ("symmetric classification", classification),
];

/// Runs the suite on `jobs` threads; `quick` keeps the algebra checks only.
pub fn run(quick: bool, seed: u64, jobs: usize) -> Vec<Invariant> {
    let mut todo: Vec<(&'static str, &'static str, Check)> =
        ALGEBRA.iter().map(|&(n, f)| (n, "algebra", f)).collect();
    if !quick {
        todo.extend(PDE.iter().map(|&(n, f)| (n, "pde", f)));
    }
    let eval = |&(name, kind, f): &(&'static str, &'static str, Check)| {
        let (passed, detail) = match f(seed) {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        Invariant {
            name,
            kind,
            passed,
            detail,
        }
    };
    let per = todo.len().div_ceil(jobs.max(1));
    std::thread::scope(|s| {
        let handles: Vec<_> = todo
            .chunks(per)
            .map(|chunk| s.spawn(move || chunk.iter().map(eval).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("check thread"))
            .collect()
    })
}

fn verdict(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn params(n: usize, mu1: f64, mu2: f64, beta: f64) -> Result<SystemParams, String> {
    SystemParams::algebraic(n, mu1, mu2, beta).map_err(|e| e.to_string())
}

fn symmetric_closed_form(_: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    for n in 5..=8 {
        for (mu, beta) in [(1.0, 1.0), (1.0, 3.0), (2.0, 1.5), (0.5, 7.0)] {
            let s = solve_k0_l0(&params(n, mu, mu, beta)?).map_err(|e| e.to_string())?;
            let want = (mu + beta as f64).powf(-(n as f64 - 2.0) / 2.0);
            worst = worst.max((s.k - want).abs()).max((s.l - want).abs());
        }
    }
    verdict(worst < 1e-10, format!("max error {worst:.2e}"))
}

fn beta0_equal(_: u64) -> Result<String, String> {
    for n in 5..=8 {
        for mu in [0.5, 1.0, 2.0, 3.0] {
            let p = params(n, mu, mu, 1.0)?;
            let b0 = solve_beta0(&p).map_err(|e| e.to_string())?;
            if b0 != (p.p() - 1.0) * mu {
                return Err(format!("N={n} mu={mu}: {b0}"));
            }
        }
    }
    Ok("exact for N=5..8".into())
}

fn beta0_equation(_: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    for n in 5..=8 {
        for (mu1, mu2) in [(1.0, 2.0), (3.0, 0.5), (0.7, 1.3)] {
            let p = params(n, mu1, mu2, 1.0)?;
            let b0 = solve_beta0(&p).map_err(|e| e.to_string())?;
            let g = g_of_beta(&p, b0).map_err(|e| e.to_string())?;
            let target = beta0_target(&p);
            worst = worst.max((g - target).abs() / target.max(1.0));
        }
    }
    verdict(worst < 1e-10, format!("max relative gap {worst:.2e}"))
}

fn determinant(_: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 5..=8 {
        for (mu1, mu2) in [(1.0, 1.0), (1.0, 2.0), (0.5, 3.0)] {
            for over in [1.1, 2.0, 5.0] {
                let base = params(n, mu1, mu2, 1.0)?;
                let b0 = solve_beta0(&base).map_err(|e| e.to_string())?;
                let p = base.with_beta(b0 * over);
                let s = solve_k0_l0(&p).map_err(|e| e.to_string())?;
                let j = jacobian_at(&p, &s).map_err(|e| e.to_string())?;
                let q = p.p();
                if !(j.det < 0.0
                    && q * mu1 * s.k.powf(q - 1.0) < 1.0
                    && q * mu2 * s.l.powf(q - 1.0) < 1.0)
                {
                    return Err(format!(
                        "N={n} mu=({mu1},{mu2}) beta={}: det {}",
                        p.beta, j.det
                    ));
                }
                worst = worst.max((j.det - j.det_closed_form).abs() / j.det_closed_form.abs());
                count += 1;
            }
        }
    }
    verdict(
        worst < 1e-8,
        format!("{count} cases, closed-form gap {worst:.2e}"),
    )
}

fn scaling(_: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    for n in 5..=8 {
        for c in [0.3, 4.0] {
            let a = solve_k0_l0(&params(n, 1.0, 2.0, 3.0)?).map_err(|e| e.to_string())?;
            let b = solve_k0_l0(&params(n, c, 2.0 * c, 3.0 * c)?).map_err(|e| e.to_string())?;
            let f = c.powf(-(n as f64 - 2.0) / 2.0);
            worst = worst
                .max((b.k - f * a.k).abs() / b.k)
                .max((b.l - f * a.l).abs() / b.l);
        }
    }
    verdict(worst < 1e-8, format!("max relative gap {worst:.2e}"))
}

fn graded(n: usize, m: usize) -> Result<Arc<RadialGrid>, String> {
    RadialGrid::shared(n, 1.0, m, Grading::Algebraic { power: 1.5 }).map_err(|e| e.to_string())
}

fn instanton_identity(_: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    for n in 5..=8 {
        let s = sobolev_data::<f64>(n).map_err(|e| e.to_string())?;
        worst = worst.max((s.integral_grad - s.integral_crit).abs() / s.s_pow_half_n());
    }
    verdict(worst < 1e-6, format!("max gap {worst:.2e}"))
}

fn gradient(seed: u64) -> Result<String, String> {
    let g = graded(6, 256)?;
    let p = SystemParams::new(6, 1.0, 1.5, -2.0, -3.0, -1.0).map_err(|e| e.to_string())?;
    let u = RadialField::from_fn(g.clone(), |r| (1.0 - r * r) * (2.0 + r));
    let v = RadialField::from_fn(g, |r| (1.0 - r) * (1.0 + 3.0 * r * r));
    let pair = FieldPair::new(&p, u, v).map_err(|e| e.to_string())?;
    let chk = gradient_check(&p, &pair, 20, seed);
    verdict(
        chk.max_relative_error < 1e-6,
        format!("20 directions, max error {:.2e}", chk.max_relative_error),
    )
}

fn ibp_defect(m: usize) -> Result<f64, String> {
    let g = graded(6, m)?;
    let u = RadialField::from_fn(g.clone(), |r| (1.0 - r * r) * (1.0 + r * r).cos());
    let lap = laplacian(&u);
    let lhs: f64 = (0..g.intervals())
        .map(|i| -lap.at(i) * u.at(i) * g.weights()[i])
        .sum();
    Ok((lhs - gradient_quadrature(&u)).abs())
}

fn ibp_order(_: u64) -> Result<String, String> {
    let order = (ibp_defect(256)? / ibp_defect(512)?).log2();
    verdict(order >= 1.9, format!("observed order {order:.3}"))
}

fn scalar_bounds(_: u64) -> Result<String, String> {
    let g = graded(6, 512)?;
    let l1 = first_eigenvalue(&g).map_err(|e| e.to_string())?;
    let lam = -0.3 * l1;
    let p = SystemParams::new(6, 1.0, 1.0, 1.0, lam, lam).map_err(|e| e.to_string())?;
    let sol = scalar_ground_state_with(&p, Component::First, &g, &SolverOptions::scalar(), None)
        .map_err(|e| e.to_string())?;
    let upper = sobolev_data::<f64>(6)
        .map_err(|e| e.to_string())?
        .bubble_energy(1.0);
    let lower = ((l1 + lam) / l1).powi(3) * upper;
    verdict(
        sol.energy < upper && sol.energy >= lower,
        format!("{lower:.4} <= B = {:.4} < {upper:.4}", sol.energy),
    )
}

fn classification(_: u64) -> Result<String, String> {
    let g = graded(6, 256)?;
    let l1 = first_eigenvalue(&g).map_err(|e| e.to_string())?;
    let p = SystemParams::new(6, 1.0, 1.0, 1.0, -0.3 * l1, -0.3 * l1).map_err(|e| e.to_string())?;
    let (_, rep) =
        solve_coupled(&p, &g, Mode::MountainPass, Init::Auto).map_err(|e| e.to_string())?;
    let s = solve_k0_l0(&p).map_err(|e| e.to_string())?;
    let want = (s.k + s.l) * rep.b_mu1;
    let gap = (rep.b - want).abs() / want;
    let dev = rep.ratio_deviation.unwrap_or(f64::INFINITY);
    verdict(
        dev < 1e-2 && gap < 1e-2,
        format!("ratio deviation {dev:.2e}, energy gap {gap:.2e}"),
    )
}
