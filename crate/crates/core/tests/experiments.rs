use std::sync::Arc;

use critsys::experiments::{
    beta_sweep_with, disjoint_fraction, overlap, sign_changing_check, small_ball_law_with,
    support_radius, threshold_report, write_sweep_csv, SmallBallOptions, SweepOptions,
};
use critsys::instanton::sobolev_data;
use critsys::radial::{first_eigenvalue, Grading};
use critsys::solver::{solve_coupled_with, Init, Mode, SolveContext, SolverOptions};
use critsys::{RadialGrid, SystemParams};

fn grid(m: usize) -> Arc<RadialGrid> {
    RadialGrid::shared(6, 1.0, m, Grading::Algebraic { power: 1.5 }).unwrap()
}

#[test]
fn single_point_sweep_is_a_single_solve() {
    let g = grid(256);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, -1.0, -0.99 * l1, -0.99 * l1).unwrap();
    let opts = SweepOptions {
        cold_splits: vec![0.3],
        solver: SolverOptions::default(),
    };
    let sweep = beta_sweep_with(&p, &g, &[-1.0], &opts).unwrap();
    let ctx = SolveContext::new(&p, &g).unwrap();
    let (pair, rep) = solve_coupled_with(
        &p,
        &ctx,
        Mode::TwoConstraint,
        Init::DisjointBumps { split: 0.3 },
        &SolverOptions::default(),
    )
    .unwrap();
    let s = &sweep[0];
    assert_eq!(s.b_beta.to_bits(), rep.b.to_bits());
    assert_eq!(s.pair.as_ref().unwrap().u.values(), pair.u.values());
    assert_eq!(s.overlap, overlap(&p, &pair));
    assert!(s.overlap > 0.0);
    let nodes = &g.nodes()[..g.intervals()];
    for r in [s.support_radius_u, s.support_radius_v] {
        assert!((0.0..=1.0).contains(&r));
    }
    assert_eq!(s.support_radius_u, support_radius(pair.u.values(), nodes));
    assert_eq!(s.disjoint_fraction, disjoint_fraction(&pair));

    let mut csv = Vec::new();
    write_sweep_csv(&sweep, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with(
        "beta,B_beta,overlap,beta_overlap,support_u,support_v,signchange_residual\n-1,"
    ));
}

#[test]
fn symmetric_repulsive_thresholds_coincide() {
    let g = grid(256);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, -0.2, -0.3 * l1, -0.3 * l1).unwrap();
    let ctx = SolveContext::new(&p, &g).unwrap();
    let (_, rep) = solve_coupled_with(
        &p,
        &ctx,
        Mode::TwoConstraint,
        Init::Auto,
        &SolverOptions::default(),
    )
    .unwrap();
    let t = threshold_report(&p, &rep);
    assert_eq!(t.entries[0].bound, t.entries[1].bound);
    assert_eq!(t.uniform_entries.len(), 2);
    assert!(t.all_hold, "{t:?}");
}

#[test]
fn segregated_pair_splits_into_the_parts_of_its_difference() {
    let g = grid(512);
    let l1 = first_eigenvalue(&g).unwrap();
    let p = SystemParams::new(6, 1.0, 1.0, -1e3, -0.99 * l1, -0.99 * l1).unwrap();
    let ctx = SolveContext::new(&p, &g).unwrap();
    let (pair, rep) = solve_coupled_with(
        &p,
        &ctx,
        Mode::TwoConstraint,
        Init::DisjointBumps { split: 0.3 },
        &SolverOptions::default(),
    )
    .unwrap();
    let sc = sign_changing_check(&p, &pair, rep.b_mu1, &sobolev_data(6).unwrap());
    // Supports are disjoint only in the limit; the parts agree where either field vanishes.
    assert!(disjoint_fraction(&pair) > 0.95);
    assert!(sc.margin > 0.0);
    assert!(sc.caveat.is_none());
    assert!(sc.coupling_constant.is_finite());
}

#[test]
fn five_dimensional_small_ball_deficits_are_positive() {
    let p = SystemParams::new(5, 1.0, 1.0, -1.0, -10.0, -10.0).unwrap();
    let opts = SmallBallOptions {
        intervals: 512,
        ..SmallBallOptions::default()
    };
    let fit = small_ball_law_with(&p, &[0.4, 0.3, 0.2], &opts).unwrap();
    assert_eq!(fit.predicted_exponent, 6.0);
    assert!(fit.all_deficits_positive);
    assert!(fit
        .points
        .iter()
        .all(|q| q.deficit.is_some_and(|d| d > 0.0)));
}
