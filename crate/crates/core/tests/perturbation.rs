use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pmp_core::conjugate::{omega_psi_residual, ConjugateTolerances};
use pmp_core::flow::{Flow, SecondVariationMethod};
use pmp_core::grid::Grid;
use pmp_core::perturbation::{
    perturb_until_generic, phi_gradient, phi_hessian, phi_value, theta_dim, transversality_rank, BumpPerturbation,
    Cutoff, PerturbOptions, PerturbedTerminalCost,
};
use pmp_core::problem::catalog;
use pmp_core::{Error, TerminalCost};

fn v1(a: f64) -> DVector<f64> {
    DVector::from_element(1, a)
}

fn flow(e: catalog::CatalogEntry) -> Flow {
    Flow::new(e.problem, e.terminal)
}

fn dvec(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.5f64..1.5, n).prop_map(DVector::from_vec)
}

#[test]
fn zero_theta_has_zero_polynomial() {
    let z = DVector::from_vec(vec![0.4, -2.0]);
    let theta = DVector::zeros(theta_dim(2));
    assert_eq!(phi_value(&theta, &z).unwrap(), 0.0);
    assert_eq!(phi_gradient(&theta, &z).unwrap().norm(), 0.0);
    assert_eq!(phi_hessian(&theta, &z).unwrap().norm(), 0.0);
}

#[test]
fn cutoff_derivatives_of_every_order_match_finite_differences() {
    let c = Cutoff::default();
    let y = DVector::from_vec(vec![1.5, 0.0]);
    let w = DVector::from_vec(vec![1.0, 0.0]);
    let jet = c.line_jet(&y, &w);
    let f = |s: f64| c.value(&(&y + &w * s));
    let h = 1e-3;
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    let d2 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    let d3 = (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h.powi(3));
    let d4 = (f(2.0 * h) - 4.0 * f(h) + 6.0 * f(0.0) - 4.0 * f(-h) + f(-2.0 * h)) / h.powi(4);
    assert_relative_eq!(jet.value(), f(0.0), epsilon = 1e-15);
    for (k, fd) in [(1, d1), (2, d2), (3, d3), (4, d4)] {
        let scale = 1.0 + fd.abs();
        assert!(
            (jet.derivative(k) - fd).abs() <= 1e-2 * scale,
            "order {k}: {} vs {fd}",
            jet.derivative(k)
        );
    }
    let h1 = 1e-5;
    assert!((jet.derivative(1) - (f(h1) - f(-h1)) / (2.0 * h1)).abs() <= 1e-6);
    assert_eq!(c.value(&DVector::from_vec(vec![0.5, 0.0])), 1.0);
    assert_eq!(c.value(&DVector::from_vec(vec![3.0, 0.0])), 0.0);
}

#[test]
fn transversality_at_cosine_conjugate_points() {
    let f = flow(catalog::single_integrator_cos());
    let z = v1(std::f64::consts::FRAC_PI_3);
    let pert = PerturbedTerminalCost::at_centers(f.psi.clone(), std::slice::from_ref(&z), Cutoff::default()).unwrap();
    let full = transversality_rank(&f, &z, &v1(1.0), &pert, None, None).unwrap();
    assert_eq!(full.rank, 2);
    assert!(full.full());
    // θ₁₁ moves only x_z(0)v (by 2T), θ₁ moves only the second component.
    let restricted = transversality_rank(&f, &z, &v1(1.0), &pert, None, Some(&[1])).unwrap();
    assert!(restricted.rank <= 1);
}

#[test]
fn transversality_for_quadratic_cost_on_affine_flow() {
    let f = flow(catalog::single_integrator_quad(2, 0.5));
    let z = DVector::from_vec(vec![0.2, -0.1]);
    let v = DVector::from_vec(vec![0.6, 0.8]);
    let pert = PerturbedTerminalCost::at_centers(f.psi.clone(), std::slice::from_ref(&z), Cutoff::default()).unwrap();
    let r = transversality_rank(&f, &z, &v, &pert, None, None).unwrap();
    assert_eq!(r.rank, 3);
}

#[test]
fn generic_cost_is_accepted_without_perturbation() {
    let f = flow(catalog::single_integrator_cos());
    let g = Grid::cube(1, -2.0, 2.0, 41).unwrap();
    let out = perturb_until_generic(&f, &g, &PerturbOptions::default()).unwrap();
    assert_eq!(out.draw, 0);
    assert_eq!(out.candidates.len(), 2);
    assert_eq!(out.psi.theta().norm(), 0.0);
}

#[test]
fn degenerate_cost_without_perturbation_exhausts_the_budget() {
    let f = flow(catalog::planar_lq_degenerate());
    let g = Grid::cube(2, -1.0, 1.0, 5).unwrap();
    let opts = PerturbOptions {
        scale: 0.0,
        max_draws: 3,
        ..PerturbOptions::default()
    };
    match perturb_until_generic(&f, &g, &opts) {
        Err(Error::BudgetExhausted { draws, nearest }) => {
            assert_eq!(draws, 4);
            assert!(nearest < 1e-6);
        }
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
}

#[test]
fn oversized_perturbations_are_refused() {
    let f = flow(catalog::single_integrator_cos());
    let g = Grid::cube(1, -2.0, 2.0, 11).unwrap();
    let opts = PerturbOptions {
        scale: 1.0,
        ..PerturbOptions::default()
    };
    assert!(matches!(
        perturb_until_generic(&f, &g, &opts),
        Err(Error::PerturbationTooLarge { .. })
    ));
}

#[test]
fn degenerate_lq_becomes_generic_after_a_small_draw() {
    let f = flow(catalog::planar_lq_degenerate());
    let g = Grid::cube(2, -1.0, 1.0, 11).unwrap();
    let out = perturb_until_generic(
        &f,
        &g,
        &PerturbOptions {
            seed: 3,
            ..PerturbOptions::default()
        },
    )
    .unwrap();
    assert!(out.draw >= 1 && out.draw <= 10);
    assert!(out.norm_bound <= PerturbOptions::default().budget);
    let tols = PerturbOptions::default().sweep.tols;
    assert!(out.candidates.iter().all(|c| !c.in_omega(&tols)));
}

#[test]
fn residual_is_unchanged_at_zero_theta() {
    let f = flow(catalog::single_integrator_cos());
    let z = v1(1.0);
    let pert = PerturbedTerminalCost::at_centers(f.psi.clone(), &[v1(0.5)], Cutoff::default()).unwrap();
    let tols = ConjugateTolerances::default();
    let a = omega_psi_residual(&f, &z, &v1(1.0), SecondVariationMethod::DirectionalODE, &tols).unwrap();
    let b = omega_psi_residual(
        &f.with_terminal(Arc::new(pert)),
        &z,
        &v1(1.0),
        SecondVariationMethod::DirectionalODE,
        &tols,
    )
    .unwrap();
    assert!((a.as_vector() - b.as_vector()).norm() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn polynomial_is_linear_in_theta(a in dvec(6), b in dvec(6), z in dvec(2), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let lhs = phi_value(&(&a * s + &b * t), &z).unwrap();
        let rhs = s * phi_value(&a, &z).unwrap() + t * phi_value(&b, &z).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn polynomial_derivatives_match_finite_differences(theta in dvec(6), z in dvec(2)) {
        let h = 1e-5;
        let g = phi_gradient(&theta, &z).unwrap();
        let hess = phi_hessian(&theta, &z).unwrap();
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = h;
            let fd = (phi_value(&theta, &(&z + &e)).unwrap() - phi_value(&theta, &(&z - &e)).unwrap()) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-8 * (1.0 + fd.abs()));
            let fd_col = (phi_gradient(&theta, &(&z + &e)).unwrap() - phi_gradient(&theta, &(&z - &e)).unwrap()) / (2.0 * h);
            prop_assert!((hess.column(i) - &fd_col).norm() <= 1e-8 * (1.0 + fd_col.norm()));
        }
        prop_assert_eq!(hess.clone(), hess.transpose());
    }

    #[test]
    fn support_is_confined(theta in dvec(6), angle in 0.0f64..6.3, r in 2.0f64..5.0) {
        let base: Arc<dyn TerminalCost> = Arc::new(pmp_core::problem::terminal::CosineCost::unit(2));
        let center = DVector::from_vec(vec![0.3, -0.2]);
        let p = PerturbedTerminalCost { base: base.clone(), bumps: vec![BumpPerturbation::new(center.clone(), theta, Cutoff::default()).unwrap()] };
        let z = &center + DVector::from_vec(vec![r * angle.cos(), r * angle.sin()]);
        let w = DVector::from_vec(vec![0.6, -0.8]);
        prop_assert_eq!(p.value(&z), base.value(&z));
        prop_assert_eq!(p.gradient(&z), base.gradient(&z));
        prop_assert_eq!(p.hessian(&z), base.hessian(&z));
        prop_assert_eq!(p.third_directional(&z, &w), base.third_directional(&z, &w));
        prop_assert_eq!(p.line_jet(&z, &w).unwrap().derivative(4), base.line_jet(&z, &w).unwrap().derivative(4));
    }

    #[test]
    fn assembled_derivatives_match_finite_differences(theta in dvec(6), z in dvec(2)) {
        let base: Arc<dyn TerminalCost> = Arc::new(pmp_core::problem::terminal::CosineCost::unit(2));
        let p = PerturbedTerminalCost::at_centers(base, &[DVector::zeros(2)], Cutoff::default())
            .unwrap()
            .with_theta(&theta)
            .unwrap();
        let h = 1e-5;
        let mut fd_grad = DVector::zeros(2);
        let mut fd_hess = DMatrix::zeros(2, 2);
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = h;
            fd_grad[i] = (p.value(&(&z + &e)) - p.value(&(&z - &e))) / (2.0 * h);
            fd_hess.set_column(i, &((p.gradient(&(&z + &e)) - p.gradient(&(&z - &e))) / (2.0 * h)));
        }
        prop_assert!((p.gradient(&z) - fd_grad).norm() <= 1e-6 * (1.0 + p.gradient(&z).norm()));
        prop_assert!((p.hessian(&z) - &fd_hess).norm() <= 1e-6 * (1.0 + fd_hess.norm()));
        prop_assert!((p.hessian(&z) - p.hessian(&z).transpose()).norm() <= 1e-14);
    }
}
