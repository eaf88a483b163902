use critsys::instanton::{compute_s, default_instanton_grid, sobolev_data};
use critsys::radial::{first_eigenvalue, gradient_quadrature, integrate, laplacian, Grading};
use critsys::{RadialField, RadialGrid};
use proptest::prelude::*;

fn ibp_defect(n: usize, m: usize, grading: Grading) -> f64 {
    let g = RadialGrid::shared(n, 1.0, m, grading).unwrap();
    let u = RadialField::from_fn(g.clone(), |r| (1.0 - r * r) * (1.0 + r * r).cos());
    let lap = laplacian(&u);
    let lhs: f64 = (0..g.intervals())
        .map(|i| -lap.at(i) * u.at(i) * g.weights()[i])
        .sum();
    (lhs - gradient_quadrature(&u)).abs()
}

#[test]
fn integration_by_parts_defect_is_second_order() {
    for n in [5, 6, 8] {
        for grading in [Grading::Uniform, Grading::Algebraic { power: 1.5 }] {
            let coarse = ibp_defect(n, 256, grading);
            let fine = ibp_defect(n, 512, grading);
            let order = (coarse / fine).log2();
            assert!(order >= 1.9, "N={n} {grading:?}: order {order}");
        }
    }
}

#[test]
fn instanton_integrals_agree_across_dimensions_and_scales() {
    for n in 5..=8 {
        let base = sobolev_data::<f64>(n).unwrap();
        let rel = (base.integral_grad - base.integral_crit).abs() / base.s_pow_half_n();
        assert!(rel < 1e-6, "N={n}: {rel}");
        for eps in [0.5, 2.0] {
            let g = default_instanton_grid(n, eps).unwrap();
            let s = compute_s(n, eps, &g).unwrap();
            assert!((s.s - base.s).abs() < 1e-6 * base.s);
        }
    }
}

fn test_field(g: &std::sync::Arc<RadialGrid>, c: &[f64]) -> RadialField {
    RadialField::from_fn(g.clone(), |r| {
        let bump: f64 = c
            .iter()
            .enumerate()
            .map(|(j, a)| a * r.powi(2 * j as i32))
            .sum();
        (1.0 - r * r) * bump
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poincare_inequality_holds(n in 5usize..=8, c in prop::collection::vec(-1.0f64..1.0, 1..5), m in 64usize..256) {
        let g = RadialGrid::shared(n, 1.0, m, Grading::Algebraic { power: 1.5 }).unwrap();
        let u = test_field(&g, &c);
        let l1 = first_eigenvalue(&g).unwrap();
        let grad = g.dirichlet_energy(u.values());
        let mass = integrate(&u, |x| x * x);
        prop_assert!(grad >= l1 * mass * (1.0 - 5.0 * g.max_spacing()));
    }

    #[test]
    fn ball_volume_scales_with_radius(n in 5usize..=8, r in 0.1f64..10.0) {
        let g = RadialGrid::shared(n, r, 64, Grading::Uniform).unwrap();
        let one = RadialGrid::shared(n, 1.0, 64, Grading::Uniform).unwrap();
        let v = RadialField::from_fn(g, |_| 1.0);
        let v1 = RadialField::from_fn(one, |_| 1.0);
        let a = integrate(&v, |x| x);
        let b = integrate(&v1, |x| x) * r.powi(n as i32);
        prop_assert!((a - b).abs() <= 1e-12 * b);
    }
}
