use std::sync::Arc;

use critsys::coupling::solve_k0_l0;
use critsys::radial::{first_eigenvalue, Grading};
use critsys::solver::{
    decay_slope, gradient_check, is_resolved, project_single_constraint, project_two_constraint,
    residual, scalar_ground_state, solve_coupled, subcritical_chain, Init, Mode,
};
use critsys::{Component, FieldPair, RadialField, RadialGrid, SystemParams};
use proptest::prelude::*;

fn grid(n: usize, m: usize) -> Arc<RadialGrid> {
    RadialGrid::shared(n, 1.0, m, Grading::Algebraic { power: 1.5 }).unwrap()
}

fn pair(p: &SystemParams, g: &Arc<RadialGrid>, a: f64, b: f64, c: f64) -> FieldPair {
    let u = RadialField::from_fn(g.clone(), |r| a * (1.0 - r * r) / (1.0 + c * r * r));
    let v = RadialField::from_fn(g.clone(), |r| b * (1.0 - r) * (1.0 + c * r));
    FieldPair::new(p, u, v).unwrap()
}

fn scaled(p: &SystemParams, x: &FieldPair, t: f64, s: f64) -> FieldPair {
    let g = x.grid().clone();
    let u =
        RadialField::from_values(g.clone(), x.u.values().iter().map(|v| t * v).collect()).unwrap();
    let v = RadialField::from_values(g, x.v.values().iter().map(|v| s * v).collect()).unwrap();
    FieldPair::new(p, u, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_constraint_scaling_is_homogeneous(n in 5usize..=8, beta in 0.1f64..5.0, a in 0.2f64..3.0, b in 0.2f64..3.0, c in 0.0f64..4.0, k in 0.1f64..10.0) {
        let g = grid(n, 64);
        let p = SystemParams::new(n, 1.0, 2.0, beta, -1.0, -1.0).unwrap();
        let x = pair(&p, &g, a, b, c);
        let t = project_single_constraint(&p, &x).unwrap();
        let tk = project_single_constraint(&p, &scaled(&p, &x, k, k)).unwrap();
        prop_assert!((tk - t / k).abs() <= 1e-10 * t / k);
        let on = scaled(&p, &x, t, t);
        prop_assert!((project_single_constraint(&p, &on).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_constraint_scalings_land_on_the_set(n in 5usize..=8, beta in -0.5f64..3.0, a in 0.2f64..3.0, b in 0.2f64..3.0, c in 0.0f64..4.0) {
        let g = grid(n, 64);
        let p = SystemParams::new(n, 1.5, 1.0, beta, -1.0, -1.0).unwrap();
        let x = pair(&p, &g, a, b, c);
        let Ok((t, s)) = project_two_constraint(&p, &x) else {
            // Strong attraction can leave no positive solution of the scaling system.
            prop_assume!(false);
            unreachable!()
        };
        let on = scaled(&p, &x, t, s);
        let i = on.integrals();
        prop_assert!((i.q1 - i.m1 - i.x).abs() <= 1e-10 * i.q1);
        prop_assert!((i.q2 - i.m2 - i.x).abs() <= 1e-10 * i.q2);
        let (t1, s1) = project_two_constraint(&p, &on).unwrap();
        prop_assert!((t1 - 1.0).abs() < 1e-10 && (s1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences(n in 5usize..=8, beta in -3.0f64..3.0, a in 0.2f64..3.0, b in 0.2f64..3.0, c in 0.0f64..4.0, seed in 0u64..1000) {
        prop_assume!(beta != 0.0);
        let g = grid(n, 96);
        let p = SystemParams::new(n, 1.0, 1.5, beta, -2.0, -0.5).unwrap();
        let x = pair(&p, &g, a, b, c);
        let chk = gradient_check(&p, &x, 5, seed);
        prop_assert!(chk.max_relative_error < 1e-6, "{:?}", chk.errors);
    }
}

#[test]
fn scalar_levels_scale_with_strength() {
    let g = grid(6, 256);
    let l1 = first_eigenvalue(&g).unwrap();
    let one = SystemParams::new(6, 1.0, 1.0, 1.0, -0.3 * l1, -0.3 * l1).unwrap();
    let (_, b1) = scalar_ground_state(&one, Component::First, &g).unwrap();
    for mu in [0.5, 2.0, 3.0] {
        let p = SystemParams::new(6, mu, mu, 1.0, -0.3 * l1, -0.3 * l1).unwrap();
        let (_, b) = scalar_ground_state(&p, Component::First, &g).unwrap();
        let want = mu.powf(-2.0) * b1;
        assert!((b - want).abs() < 1e-6 * want, "mu={mu}: {b} vs {want}");
    }
}

#[test]
fn proportional_lift_of_the_scalar_solution_solves_the_system() {
    let g = grid(6, 256);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, 1.0, -0.3 * l1, -0.3 * l1).unwrap();
    let (w, _) = scalar_ground_state(&p, Component::First, &g).unwrap();
    let s = solve_k0_l0(&p).unwrap();
    let lift = |c: f64| {
        RadialField::from_values(g.clone(), w.values().iter().map(|x| c * x).collect()).unwrap()
    };
    let x = FieldPair::new(&p, lift(s.k.sqrt()), lift(s.l.sqrt())).unwrap();
    let (ru, rv) = residual(&p, &x);
    assert!(ru.max(rv) < 1e-7, "{ru} {rv}");
}

#[test]
fn coupled_solve_descends_and_satisfies_its_identities() {
    let g = grid(5, 256);
    let l1 = first_eigenvalue(&g).unwrap();
    for (beta, mode) in [(-0.5, Mode::TwoConstraint), (2.0, Mode::MountainPass)] {
        let p = SystemParams::new(5, 1.0, 1.5, beta, -0.3 * l1, -0.2 * l1).unwrap();
        let (x, rep) = solve_coupled(&p, &g, mode, Init::Auto).unwrap();
        assert!(rep.residual_norm < 1e-7);
        assert!(
            rep.constraint_residual < 1e-10,
            "{}",
            rep.constraint_residual
        );
        assert!((rep.b - rep.b_identity).abs() < 1e-12 * rep.b);
        assert!(x.u.values().iter().chain(x.v.values()).all(|&v| v >= 0.0));
        for w in rep.energy_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn subcritical_stage_is_positive_and_radially_decreasing() {
    let g = grid(6, 256);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, 1.0, -0.3 * l1, -0.3 * l1).unwrap();
    let eps = (p.p() - 1.0) / 2.0;
    let chain = subcritical_chain(&p, &g, &[eps]).unwrap();
    let x = &chain[0].pair;
    for f in [&x.u, &x.v] {
        let v = f.values();
        assert!(v.iter().all(|&a| a > 0.0));
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn subcritical_chain_approaches_the_critical_level() {
    let g = grid(6, 512);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, 1.0, -0.3 * l1, -0.3 * l1).unwrap();
    let (_, cold) = solve_coupled(&p, &g, Mode::MountainPass, Init::Auto).unwrap();
    let schedule = [0.25, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4];
    let chain = subcritical_chain(&p, &g, &schedule).unwrap();
    let last = chain.last().unwrap().report.b;
    assert!(
        (last - cold.b).abs() < 5e-3 * cold.b,
        "{last} vs {}",
        cold.b
    );
    // The regularized levels decrease toward the critical one.
    assert!(chain.windows(2).all(|w| w[1].report.b < w[0].report.b));
}

#[test]
fn decay_on_a_large_ball_follows_the_fundamental_solution() {
    // With |λ| small the bubble is small compared with the ball, so the
    // outer profile sees the whole-space decay r^(2-N).
    let n = 5;
    let g = RadialGrid::shared(n, 1.0, 2048, Grading::Exponential { rate: 8.0 }).unwrap();
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(n, 1.0, 1.0, 1.0, -0.01 * l1, -0.01 * l1).unwrap();
    let (x, _) = solve_coupled(
        &p,
        &g,
        Mode::MountainPass,
        Init::InstantonPair { scale: 0.02 },
    )
    .unwrap();
    let slope = decay_slope(&x, 0.05, 0.5).unwrap();
    assert!((slope - (2.0 - n as f64)).abs() < 0.2, "{slope}");
}

#[test]
fn grid_scale_spikes_are_flagged_as_unresolved() {
    let g = grid(5, 256);
    let p = SystemParams::new(5, 1.0, 1.0, -1.0, -1.0, -1.0).unwrap();
    let smooth = pair(&p, &g, 1.0, 1.0, 0.5);
    assert!(is_resolved(&smooth));
    let h = g.nodes()[1];
    let v = RadialField::from_fn(g.clone(), |r| (1.0 - r) + 1e3 * (-(r / h).powi(2)).exp());
    let spiked = FieldPair::new(&p, smooth.u.clone(), v).unwrap();
    assert!(!is_resolved(&spiked));
}
