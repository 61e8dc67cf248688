use std::f64::consts::FRAC_PI_3;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pmp_core::conjugate::{
    candidate_at, gamma_psi_points, omega_psi_residual, rank_test, sweep_locus, ConjugateTolerances, SweepOptions,
};
use pmp_core::flow::{Flow, SecondVariationMethod};
use pmp_core::grid::Grid;
use pmp_core::optimality::{reach, ExtremalAtlas, ReachOptions};
use pmp_core::problem::catalog;

fn v1(a: f64) -> DVector<f64> {
    DVector::from_element(1, a)
}

fn flow(e: catalog::CatalogEntry) -> Flow {
    Flow::new(e.problem, e.terminal)
}

#[test]
fn zero_cost_has_unit_sigma_everywhere() {
    let f = flow(catalog::single_integrator(2));
    for z in [[0.0, 0.0], [1.5, -0.3]] {
        let r = rank_test(&f, &DVector::from_row_slice(&z), &ConjugateTolerances::default()).unwrap();
        assert_relative_eq!(r.sigma_min, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn degenerate_lq_has_known_kernel_and_vanishing_residual() {
    let f = flow(catalog::planar_lq_degenerate());
    let z = DVector::from_vec(vec![0.3, -0.4]);
    let r = rank_test(&f, &z, &ConjugateTolerances::default()).unwrap();
    assert!(r.conjugate);
    assert!(r.sigma_min < 1e-9);

    // X(0) = (I - A T) + M1 S with A = e1 e2ᵀ, T = 2 and S = diag(a, -a/3).
    let s = catalog::planar_lq_degenerate_hessian();
    let a = catalog::planar_lq_drift();
    let i = DMatrix::<f64>::identity(2, 2);
    let m1 = &i * 2.0 + (a.transpose() - &a) * 2.0 - &a * a.transpose() * (8.0 / 6.0);
    let x0 = (&i - &a * 2.0) + m1 * s;
    assert!((&x0 * &r.v).norm() < 1e-9);
    assert_relative_eq!(r.sigma_max, x0.norm(), epsilon = 1e-9);

    let res = omega_psi_residual(
        &f,
        &z,
        &r.v,
        SecondVariationMethod::DirectionalODE,
        &ConjugateTolerances::default(),
    )
    .unwrap();
    assert!(res.first.norm() < 1e-9);
    assert!(res.second.abs() < 1e-9);
    assert!(res.in_omega);
}

#[test]
fn quadratic_cost_has_zero_second_residual() {
    let f = flow(catalog::single_integrator_quad(2, 0.7));
    let z = DVector::from_vec(vec![1.0, -2.0]);
    let v = DVector::from_vec(vec![0.8, 0.6]);
    let res = omega_psi_residual(
        &f,
        &z,
        &v,
        SecondVariationMethod::CentralFD,
        &ConjugateTolerances::default(),
    )
    .unwrap();
    assert!(res.second.abs() < 1e-8);
}

#[test]
fn cosine_sweep_finds_both_conjugate_points() {
    let f = flow(catalog::single_integrator_cos());
    let g = Grid::cube(1, -2.0, 2.0, 401).unwrap();
    let s = sweep_locus(&f, &g, &SweepOptions::default()).unwrap();
    assert_eq!(s.candidates.len(), 2);
    for (c, z) in s.candidates.iter().zip([-FRAC_PI_3, FRAC_PI_3]) {
        assert!(c.refined);
        assert!((c.z[0] - z).abs() <= 1e-6);
        assert!(c.det.abs() <= 1e-10);
        assert_relative_eq!(c.omega_residual.abs(), 0.75f64.sqrt(), epsilon = 1e-3);
        assert!(!c.in_omega(&SweepOptions::default().tols));
        assert_relative_eq!(c.y[0], z - 2.0 * z.sin(), epsilon = 1e-8);
        // Refinement stays inside the bracketing cell.
        let h = g.spacing(0);
        let cell = ((c.z[0] + 2.0) / h).floor();
        assert!(c.z[0] >= -2.0 + cell * h && c.z[0] <= -2.0 + (cell + 1.0) * h);
        // X(t) = 1 - (2 - t) cos z vanishes only at t = 0 on [0, 2].
        assert_eq!(c.jacobi_proxy, Some(true));
    }
    assert!(s.escaped_nodes.is_empty());
}

#[test]
fn example21_sweep_is_stable_under_refinement() {
    let f = flow(catalog::example21());
    let count = |nodes| {
        let g = Grid::cube(1, 0.40, 0.50, nodes).unwrap();
        let s = sweep_locus(
            &f,
            &g,
            &SweepOptions {
                jacobi_proxy: false,
                ..SweepOptions::default()
            },
        )
        .unwrap();
        assert!(s.escaped_nodes.is_empty());
        s.candidates.iter().filter(|c| c.refined).count()
    };
    let coarse = count(15);
    assert_eq!(coarse, count(141));
    assert!(coarse >= 1);
}

#[test]
fn gamma_psi_compares_with_reach() {
    let f = flow(catalog::single_integrator_cos());
    let opts = SweepOptions::default();
    let c = candidate_at(&f, &v1(FRAC_PI_3), true, &opts).unwrap();
    assert_relative_eq!(c.y[0], FRAC_PI_3 - 3f64.sqrt(), epsilon = 1e-9);
    let atlas = ExtremalAtlas::build(&f, &Grid::cube(1, -5.5, 5.5, 221).unwrap()).unwrap();
    let sol = reach(&f, &c.y, &atlas, &ReachOptions::default(), 3).unwrap();
    let kept = gamma_psi_points(
        std::slice::from_ref(&c),
        |y| reach(&f, y, &atlas, &ReachOptions::default(), 3),
        1e-8,
    )
    .unwrap();
    assert_eq!(kept.is_empty(), sol.value + 1e-8 < c.cost);
    assert!(gamma_psi_points(&[], |_| unreachable!(), 1e-8).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn sigma_min_obeys_weyl(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let f = flow(catalog::single_integrator_cos());
        let tols = ConjugateTolerances::default();
        let ra = rank_test(&f, &v1(a), &tols).unwrap();
        let rb = rank_test(&f, &v1(b), &tols).unwrap();
        let xa = f.endpoint(&v1(a), true).unwrap().x_z().clone();
        let xb = f.endpoint(&v1(b), true).unwrap().x_z().clone();
        prop_assert!((ra.sigma_min - rb.sigma_min).abs() <= (xa - xb).norm() + 1e-12);
    }
}

#[test]
fn candidate_direction_is_oriented_to_a_non_positive_residual() {
    let f = flow(catalog::single_integrator_cos());
    let opts = SweepOptions::default();
    for z in [-FRAC_PI_3, FRAC_PI_3] {
        let c = candidate_at(&f, &v1(z), true, &opts).unwrap();
        assert_relative_eq!(c.omega_residual, -(0.75f64.sqrt()), epsilon = 1e-6);
        // Recomputing along the reported direction reproduces the residual.
        let r = omega_psi_residual(&f, &v1(z), &c.v, opts.method, &opts.tols).unwrap();
        assert_relative_eq!(r.second, c.omega_residual, epsilon = 1e-9);
        assert_relative_eq!(c.v[0], z.signum(), epsilon = 1e-12);
    }
}
