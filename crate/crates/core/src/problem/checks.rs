//! Sampled verification of the standing assumptions and of the derivative
//! oracles on a bounded test box.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Problem, TerminalCost};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestBox {
    pub x_radius: f64,
    pub u_radius: f64,
    pub p_radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TestBox {
    fn default() -> Self {
        TestBox {
            x_radius: 5.0,
            u_radius: 5.0,
            p_radius: 5.0,
            samples: 100,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Largest violation (or relative error) seen over the samples.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    fn new(name: &str, worst: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
        }
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.gen_range(-radius..=radius))
}

/// `|a - b| / max(1, |b|)` in the Frobenius norm.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Central-difference Jacobian of `g` at `x`.
pub fn fd_jacobian<F>(g: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let rows = g(x).len();
    let mut j = DMatrix::zeros(rows, n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((g(&xp) - g(&xm)) / (2.0 * h)));
    }
    j
}

fn as_column(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// `|f_i(x)| <= c1 (|x| + 1)` for every field.
pub fn check_growth(problem: &Problem, tb: &TestBox) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed);
    let n = problem.state_dim();
    let c1 = problem.constants.c1;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..tb.samples {
        let x = uniform(&mut rng, n, tb.x_radius);
        for i in 0..=problem.control_dim() {
            let excess = problem.dynamics.field(i, &x).norm() - c1 * (x.norm() + 1.0);
            worst = worst.max(excess);
        }
    }
    CheckReport::new("growth", worst.max(0.0), 0.0)
}

/// `L_uu > δ_L I`, `L_uu` symmetric and `L >= c2(|u|² - 1)`.
pub fn check_convexity(problem: &Problem, tb: &TestBox) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed ^ 1);
    let n = problem.state_dim();
    let m = problem.control_dim();
    let c = problem.constants;
    let mut worst: f64 = 0.0;
    for _ in 0..tb.samples {
        let x = uniform(&mut rng, n, tb.x_radius);
        let u = uniform(&mut rng, m, tb.u_radius);
        let luu = problem.running_cost.hess_uu(&x, &u);
        worst = worst.max((&luu - luu.transpose()).norm());
        let lambda_min = luu.symmetric_eigenvalues().min();
        worst = worst.max(c.delta_l - lambda_min);
        let lower = c.c2 * (u.norm_squared() - 1.0);
        worst = worst.max(lower - problem.running_cost.value(&x, &u));
    }
    CheckReport::new("convexity", worst, 0.0)
}

/// Field Jacobians and Hessians against central differences.
pub fn check_dynamics_derivatives(problem: &Problem, tb: &TestBox) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed ^ 2);
    let n = problem.state_dim();
    let dyn_ = &problem.dynamics;
    let mut worst: f64 = 0.0;
    for _ in 0..tb.samples.min(20) {
        let x = uniform(&mut rng, n, tb.x_radius);
        for i in 0..=problem.control_dim() {
            let fd = fd_jacobian(|y| dyn_.field(i, y), &x, FD_STEP);
            worst = worst.max(relative_error(&dyn_.field_jacobian(i, &x), &fd));
            let hess = dyn_.field_hessian(i, &x);
            for (k, hk) in hess.iter().enumerate() {
                let fd = fd_jacobian(|y| dyn_.field_jacobian(i, y).row(k).transpose(), &x, FD_STEP);
                worst = worst.max(relative_error(hk, &fd));
            }
        }
    }
    CheckReport::new("dynamics_derivatives", worst, FD_TOL)
}

/// Running-cost gradients and Hessians against central differences.
pub fn check_cost_derivatives(problem: &Problem, tb: &TestBox) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed ^ 3);
    let n = problem.state_dim();
    let m = problem.control_dim();
    let l = &problem.running_cost;
    let mut worst: f64 = 0.0;
    for _ in 0..tb.samples.min(20) {
        let x = uniform(&mut rng, n, tb.x_radius);
        let u = uniform(&mut rng, m, tb.u_radius);
        let gx = fd_jacobian(|y| DVector::from_element(1, l.value(y, &u)), &x, FD_STEP);
        worst = worst.max(relative_error(&as_column(l.grad_x(&x, &u)), &gx.transpose()));
        let gu = fd_jacobian(|w| DVector::from_element(1, l.value(&x, w)), &u, FD_STEP);
        worst = worst.max(relative_error(&as_column(l.grad_u(&x, &u)), &gu.transpose()));
        let hxx = fd_jacobian(|y| l.grad_x(y, &u), &x, FD_STEP);
        worst = worst.max(relative_error(&l.hess_xx(&x, &u), &hxx));
        let hxu = fd_jacobian(|w| l.grad_x(&x, w), &u, FD_STEP);
        worst = worst.max(relative_error(&l.hess_xu(&x, &u), &hxu));
        let huu = fd_jacobian(|w| l.grad_u(&x, w), &u, FD_STEP);
        worst = worst.max(relative_error(&l.hess_uu(&x, &u), &huu));
    }
    CheckReport::new("cost_derivatives", worst, FD_TOL)
}

/// Second derivatives of `H` against central differences of `(H_x, H_p)`,
/// and first derivatives against differences of `H`.
pub fn check_hamiltonian_derivatives(problem: &Problem, tb: &TestBox) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed ^ 4);
    let n = problem.state_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..tb.samples.min(20) {
        let x = uniform(&mut rng, n, tb.x_radius);
        let p = uniform(&mut rng, n, tb.p_radius);
        let ev = problem.hamiltonian_derivatives(&x, &p)?;
        let hx = |y: &DVector<f64>| problem.hamiltonian_first(y, &p).map(|f| f.h_x).unwrap();
        let hp_x = |y: &DVector<f64>| problem.hamiltonian_first(y, &p).map(|f| f.h_p).unwrap();
        let hp_p = |q: &DVector<f64>| problem.hamiltonian_first(&x, q).map(|f| f.h_p).unwrap();
        let h_of_x = |y: &DVector<f64>| DVector::from_element(1, problem.hamiltonian(y, &p).unwrap());
        let h_of_p = |q: &DVector<f64>| DVector::from_element(1, problem.hamiltonian(&x, q).unwrap());
        worst = worst.max(relative_error(&ev.h_xx, &fd_jacobian(hx, &x, FD_STEP)));
        worst = worst.max(relative_error(&ev.h_px, &fd_jacobian(hp_x, &x, FD_STEP)));
        worst = worst.max(relative_error(&ev.h_pp, &fd_jacobian(hp_p, &p, FD_STEP)));
        worst = worst.max(relative_error(
            &as_column(ev.h_x.clone()),
            &fd_jacobian(h_of_x, &x, FD_STEP).transpose(),
        ));
        worst = worst.max(relative_error(
            &as_column(ev.h_p.clone()),
            &fd_jacobian(h_of_p, &p, FD_STEP).transpose(),
        ));
    }
    Ok(CheckReport::new("hamiltonian_derivatives", worst, FD_TOL))
}

/// Envelope identity `H_p = f(x, u*)`, symmetry of the second derivatives,
/// `H_pp <= 0` and midpoint concavity in `p`.
pub fn check_hamiltonian_structure(problem: &Problem, tb: &TestBox) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(tb.seed ^ 5);
    let n = problem.state_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..tb.samples {
        let x = uniform(&mut rng, n, tb.x_radius);
        let p1 = uniform(&mut rng, n, tb.p_radius);
        let p2 = uniform(&mut rng, n, tb.p_radius);
        let ev = problem.hamiltonian_derivatives(&x, &p1)?;
        let f = problem.dynamics_value(&x, &ev.u_star);
        worst = worst.max((&ev.h_p - f).norm());
        worst = worst.max((&ev.h_xx - ev.h_xx.transpose()).norm());
        worst = worst.max(ev.h_pp.symmetric_eigenvalues().max());
        let mid = problem.hamiltonian(&x, &((&p1 + &p2) / 2.0))?;
        let avg = 0.5 * (problem.hamiltonian(&x, &p1)? + problem.hamiltonian(&x, &p2)?);
        worst = worst.max(avg - mid);
    }
    Ok(CheckReport::new("hamiltonian_structure", worst, 1e-12))
}

/// Gradient and Hessian of `ψ` against central differences, and the
/// directional third derivative against differences of the Hessian.
pub fn check_terminal_derivatives(psi: &dyn TerminalCost, radius: f64, samples: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = psi.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let z = uniform(&mut rng, n, radius);
        let v = uniform(&mut rng, n, 1.0);
        let g = fd_jacobian(|y| DVector::from_element(1, psi.value(y)), &z, FD_STEP);
        worst = worst.max(relative_error(&as_column(psi.gradient(&z)), &g.transpose()));
        let hess = psi.hessian(&z);
        worst = worst.max((&hess - hess.transpose()).norm());
        worst = worst.max(relative_error(&hess, &fd_jacobian(|y| psi.gradient(y), &z, FD_STEP)));
        let dir = |y: &DVector<f64>| psi.hessian(y) * &v;
        let third_fd = fd_jacobian(dir, &z, FD_STEP) * &v;
        worst = worst.max(relative_error(
            &as_column(psi.third_directional(&z, &v)),
            &as_column(third_fd),
        ));
    }
    CheckReport::new("terminal_derivatives", worst, FD_TOL)
}

/// Every check above on one problem and terminal cost.
pub fn check_all(problem: &Problem, psi: &dyn TerminalCost, tb: &TestBox) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_growth(problem, tb),
        check_convexity(problem, tb),
        check_dynamics_derivatives(problem, tb),
        check_cost_derivatives(problem, tb),
        check_hamiltonian_derivatives(problem, tb)?,
        check_hamiltonian_structure(problem, tb)?,
        check_terminal_derivatives(psi, tb.x_radius, tb.samples.min(20), tb.seed ^ 6),
    ])
}
