use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pmp_core::flow::{ArcStatus, Flow, FlowOptions, SecondVariationMethod};
use pmp_core::problem::catalog;

fn v1(a: f64) -> DVector<f64> {
    DVector::from_element(1, a)
}

fn cos_flow() -> Flow {
    let e = catalog::single_integrator_cos();
    Flow::new(e.problem, e.terminal)
}

fn e21_flow() -> Flow {
    let e = catalog::example21();
    Flow::new(e.problem, e.terminal)
}

#[test]
fn example21_blows_up_along_the_explicit_solution() {
    let flow = e21_flow().with_options(FlowOptions {
        rtol: 1e-10,
        ..FlowOptions::default()
    });
    let arc = flow.integrate_backward(&v1(-1.0)).unwrap();
    let ArcStatus::Escaped { tau } = arc.status else {
        panic!("expected escape, got {:?}", arc.status);
    };
    assert!(tau > 0.9 && tau < 1.1);
    let last = arc.samples.iter().min_by(|a, b| a.t.total_cmp(&b.t)).unwrap();
    assert!(last.x.norm() + last.p.norm() >= flow.opts.escape_radius);
    for s in arc.samples.iter().filter(|s| s.t >= 1.05) {
        assert!((s.x[0] - (1.0 - s.t)).abs() <= 1e-6);
        assert!((s.p[0] - 2.0 / (1.0 - s.t).powi(2)).abs() <= 1e-6);
    }
    let drift = flow.hamiltonian_drift_on(&arc, 1.05, 2.0).unwrap();
    assert!(drift <= 1e-7, "drift {drift}");
    let h_t = flow.problem.hamiltonian(&v1(-1.0), &v1(2.0)).unwrap();
    assert!(h_t.abs() < 1e-15);
    assert_eq!(arc.cost(), f64::INFINITY);
}

#[test]
fn terminal_data_is_reproduced() {
    let flow = cos_flow();
    let arc = flow.integrate_backward(&v1(0.7)).unwrap();
    let end = arc.last();
    assert_eq!(end.t, 2.0);
    assert_eq!(end.x[0], 0.7);
    assert_eq!(end.p[0], -(0.7f64.sin()));
    let (_, bundle) = flow.integrate_variational(&v1(0.7)).unwrap();
    let k = bundle.t.len() - 1;
    assert_eq!(bundle.x_z[k], DMatrix::identity(1, 1));
    assert_relative_eq!(bundle.p_z[k][(0, 0)], -(0.7f64.cos()), epsilon = 1e-15);
}

#[test]
fn zero_cost_gives_constant_arcs_and_identity_tangents() {
    let e = catalog::single_integrator(2);
    let flow = Flow::new(e.problem, e.terminal);
    let z = DVector::from_vec(vec![0.3, -1.2]);
    let arc = flow.integrate_backward(&z).unwrap();
    assert!(arc.status.is_complete());
    for s in &arc.samples {
        assert_eq!(s.x, z);
        assert_eq!(s.p.norm(), 0.0);
        assert_eq!(s.u.norm(), 0.0);
    }
    assert_eq!(flow.hamiltonian_drift(&arc).unwrap(), 0.0);
    let ep = flow.endpoint(&z, true).unwrap();
    assert_relative_eq!(ep.x_z().clone(), DMatrix::identity(2, 2), epsilon = 1e-14);
    assert_eq!(ep.p_z().norm(), 0.0);
}

#[test]
fn cosine_closed_forms() {
    let flow = cos_flow();
    let arc = flow.integrate_backward(&v1(1.0)).unwrap();
    assert_relative_eq!(arc.first().x[0], 1.0 - 2.0 * 1f64.sin(), epsilon = 1e-9);
    assert_relative_eq!(arc.first().x[0], -0.68294, epsilon = 1e-5);
    for s in &arc.samples {
        assert_relative_eq!(s.p[0], -(1f64.sin()), epsilon = 1e-12);
        assert_relative_eq!(s.h, -(1f64.sin().powi(2)) / 2.0, epsilon = 1e-9);
    }
    assert!(flow.hamiltonian_drift(&arc).unwrap() <= 1e-9);

    let ep = flow.endpoint(&v1(0.0), true).unwrap();
    assert_relative_eq!(ep.x_z()[(0, 0)], -1.0, epsilon = 1e-9);

    let z = std::f64::consts::FRAC_PI_3;
    for method in [SecondVariationMethod::CentralFD, SecondVariationMethod::DirectionalODE] {
        let sv = flow.second_variation_along(&v1(z), &v1(1.0), method).unwrap();
        assert_relative_eq!(sv.xi[0], 3f64.sqrt(), epsilon = 1e-6);
    }
}

#[test]
fn quadratic_terminal_cost_on_linear_dynamics_has_no_second_variation() {
    let e = catalog::planar_lq();
    let flow = Flow::new(e.problem, e.terminal);
    let z = DVector::from_vec(vec![0.4, -0.9]);
    let v = DVector::from_vec(vec![0.6, 0.8]);
    for method in [SecondVariationMethod::CentralFD, SecondVariationMethod::DirectionalODE] {
        let sv = flow.second_variation_along(&z, &v, method).unwrap();
        assert!(sv.xi.norm() < 1e-7, "{method:?}: {}", sv.xi.norm());
        assert!(sv.pi.norm() < 1e-7);
    }
}

#[test]
fn example21_complete_region_matches_finite_differences() {
    let flow = e21_flow();
    let z = v1(0.45);
    let ep = flow.endpoint(&z, true).unwrap();
    assert!(ep.status.is_complete());
    let h = 1e-5;
    let plus = flow.endpoint(&v1(0.45 + h), false).unwrap();
    let minus = flow.endpoint(&v1(0.45 - h), false).unwrap();
    let fd_x = (plus.x0[0] - minus.x0[0]) / (2.0 * h);
    let fd_p = (plus.p0[0] - minus.p0[0]) / (2.0 * h);
    assert!((ep.x_z()[(0, 0)] - fd_x).abs() <= 1e-4 * (1.0 + fd_x.abs()));
    assert!((ep.p_z()[(0, 0)] - fd_p).abs() <= 1e-4 * (1.0 + fd_p.abs()));

    let a = flow
        .second_variation_along(&z, &v1(1.0), SecondVariationMethod::CentralFD)
        .unwrap();
    let b = flow
        .second_variation_along(&z, &v1(1.0), SecondVariationMethod::DirectionalODE)
        .unwrap();
    assert!((a.xi[0] - b.xi[0]).abs() <= 1e-3 * (1.0 + b.xi[0].abs()));
    assert!((a.pi[0] - b.pi[0]).abs() <= 1e-3 * (1.0 + b.pi[0].abs()));
}

#[test]
fn controls_on_arcs_are_pointwise_minimizers() {
    let flow = cos_flow();
    let arc = flow.integrate_backward(&v1(-0.8)).unwrap();
    for s in arc.samples.iter().step_by(37) {
        let u = flow.problem.pointwise_minimizer(&s.x, &s.p, 1e-12).unwrap();
        assert_relative_eq!(u, s.u.clone(), epsilon = 1e-10);
    }
}

#[test]
fn ode_residual_is_within_tolerance_scale() {
    let flow = cos_flow();
    let arc = flow.integrate_backward(&v1(1.3)).unwrap();
    assert!(flow.ode_residual(&arc).unwrap() <= 10.0);
}

#[test]
fn invalid_options_and_dimensions_are_rejected() {
    let flow = cos_flow().with_options(FlowOptions {
        rtol: -1.0,
        ..FlowOptions::default()
    });
    assert!(flow.integrate_backward(&v1(0.0)).is_err());
    assert!(cos_flow().integrate_backward(&DVector::zeros(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn semigroup_through_the_midpoint(z in -2.0f64..2.0, q in 0.0f64..1.0) {
        let e = catalog::single_integrator_quad(1, q);
        let flow = Flow::new(e.problem, e.terminal);
        let zv = v1(z);
        let direct = flow.endpoint(&zv, false).unwrap();
        let (x1, p1, c1) = flow.transport(2.0, &zv, &flow.psi.gradient(&zv), 1.0).unwrap();
        let (x0, p0, c0) = flow.transport(1.0, &x1, &p1, 0.0).unwrap();
        let tol = 10.0 * flow.opts.rtol * (1.0 + direct.x0.norm() + direct.p0.norm());
        prop_assert!((x0 - &direct.x0).norm() <= tol);
        prop_assert!((p0 - &direct.p0).norm() <= tol);
        prop_assert!((c1 + c0 - direct.running_cost).abs() <= tol);
    }

    #[test]
    fn raising_the_escape_radius_keeps_complete_arcs_complete(z in -1.5f64..1.5, k in 1.0f64..4.0) {
        let base = e21_flow().with_options(FlowOptions { escape_radius: 50.0, ..FlowOptions::default() });
        let arc = base.integrate_backward(&v1(z)).unwrap();
        let wider = base.clone().with_options(FlowOptions { escape_radius: 50.0 * k, ..FlowOptions::default() });
        if arc.status.is_complete() {
            prop_assert!(wider.integrate_backward(&v1(z)).unwrap().status.is_complete());
        }
    }
}
