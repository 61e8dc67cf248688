//! Built-in problems.
//!
//! | label                    | n | m | dynamics              | L              | default ψ          |
//! |--------------------------|---|---|-----------------------|----------------|--------------------|
//! | `example21`              | 1 | 1 | ẋ = 1 + x u           | u²/2           | 2 e^{z+1}          |
//! | `single_integrator`      | d | d | ẋ = u                 | \|u\|²/2       | 0                  |
//! | `single_integrator_cos`  | 1 | 1 | ẋ = u                 | u²/2           | cos z              |
//! | `single_integrator_quad` | d | d | ẋ = u                 | \|u\|²/2       | (a/2) \|z\|²       |
//! | `planar_lq`              | 2 | 2 | ẋ = A x + u, A = e1e2ᵀ | \|u\|²/2 + q\|x\|²/2 | ½ zᵀ S z     |
//!
//! All horizons default to 2.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::terminal::{CosineCost, ExponentialCost, PolynomialCost, QuadraticCost, TerminalCost, ZeroCost};
use super::{ControlAffineDynamics, GrowthConstants, Problem, RunningCost};
use crate::error::{Error, Result};

pub const LABELS: [&str; 5] = [
    "example21",
    "single_integrator",
    "single_integrator_cos",
    "single_integrator_quad",
    "planar_lq",
];

const DEFAULT_HORIZON: f64 = 2.0;

/// `ẋ = u` in `R^n`.
#[derive(Debug, Clone)]
pub struct SingleIntegrator {
    pub n: usize,
}

impl ControlAffineDynamics for SingleIntegrator {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.n
    }
    fn field(&self, i: usize, _x: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.n);
        if i > 0 {
            f[i - 1] = 1.0;
        }
        f
    }
    fn field_jacobian(&self, _i: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.n, self.n)
    }
    fn field_hessian(&self, _i: usize, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.n, self.n); self.n]
    }
}

/// `ẋ = 1 + x u` on the real line.
#[derive(Debug, Clone)]
pub struct BilinearScalar;

impl ControlAffineDynamics for BilinearScalar {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => DVector::from_element(1, 1.0),
            _ => x.clone(),
        }
    }
    fn field_jacobian(&self, i: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, if i == 0 { 0.0 } else { 1.0 })
    }
    fn field_hessian(&self, _i: usize, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(1, 1)]
    }
}

/// `ẋ = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ControlAffineDynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn field(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => &self.a * x,
            _ => self.b.column(i - 1).into_owned(),
        }
    }
    fn field_jacobian(&self, i: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        match i {
            0 => self.a.clone(),
            _ => DMatrix::zeros(n, n),
        }
    }
    fn field_hessian(&self, _i: usize, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let n = self.state_dim();
        vec![DMatrix::zeros(n, n); n]
    }
}

/// `L(x, u) = ½ uᵀ R u + ½ q |x|²` with `R` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticRunningCost {
    pub control_weight: DMatrix<f64>,
    pub state_weight: f64,
    pub n: usize,
}

impl QuadraticRunningCost {
    pub fn energy(n: usize, m: usize) -> Self {
        QuadraticRunningCost {
            control_weight: DMatrix::identity(m, m),
            state_weight: 0.0,
            n,
        }
    }
}

impl RunningCost for QuadraticRunningCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.control_weight * u)) + 0.5 * self.state_weight * x.norm_squared()
    }
    fn grad_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        x * self.state_weight
    }
    fn grad_u(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.control_weight * u
    }
    fn hess_xx(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) * self.state_weight
    }
    fn hess_xu(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.n, self.control_weight.nrows())
    }
    fn hess_uu(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.control_weight.clone()
    }
    fn modulus(&self, s: f64) -> f64 {
        self.state_weight.abs() * s
    }
    fn quadratic_in_u(&self) -> bool {
        true
    }
}

/// A problem together with its default terminal cost.
#[derive(Clone)]
pub struct CatalogEntry {
    pub problem: Problem,
    pub terminal: Arc<dyn TerminalCost>,
}

impl std::fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogEntry")
            .field("problem", &self.problem)
            .field("terminal", &self.terminal.label())
            .finish()
    }
}

const ENERGY_CONSTANTS: GrowthConstants = GrowthConstants {
    c1: 1.0,
    c2: 0.25,
    delta_l: 0.5,
};

/// `ẋ = 1 + x u`, `L = u²/2`, `ψ = 2 e^{z+1}`, `T = 2`.
pub fn example21() -> CatalogEntry {
    let problem = Problem::new(
        "example21",
        DEFAULT_HORIZON,
        Arc::new(BilinearScalar),
        Arc::new(QuadraticRunningCost::energy(1, 1)),
        ENERGY_CONSTANTS,
    );
    CatalogEntry {
        problem,
        terminal: Arc::new(ExponentialCost {
            amplitude: 2.0,
            rate: DVector::from_element(1, 1.0),
            shift: 1.0,
        }),
    }
}

fn single_integrator_problem(label: &str, n: usize) -> Problem {
    Problem::new(
        label,
        DEFAULT_HORIZON,
        Arc::new(SingleIntegrator { n }),
        Arc::new(QuadraticRunningCost::energy(n, n)),
        ENERGY_CONSTANTS,
    )
}

/// `ẋ = u` in `R^n` with `ψ ≡ 0`.
pub fn single_integrator(n: usize) -> CatalogEntry {
    CatalogEntry {
        problem: single_integrator_problem("single_integrator", n),
        terminal: Arc::new(ZeroCost { n }),
    }
}

/// `ẋ = u`, `ψ = cos z`, `T = 2`.
pub fn single_integrator_cos() -> CatalogEntry {
    CatalogEntry {
        problem: single_integrator_problem("single_integrator_cos", 1),
        terminal: Arc::new(CosineCost::unit(1)),
    }
}

/// `ẋ = u` in `R^n`, `ψ = (a/2)|z|²`.
pub fn single_integrator_quad(n: usize, a: f64) -> CatalogEntry {
    CatalogEntry {
        problem: single_integrator_problem("single_integrator_quad", n),
        terminal: Arc::new(QuadraticCost::new(DMatrix::identity(n, n) * a)),
    }
}

/// Nilpotent drift of `planar_lq`.
pub fn planar_lq_drift() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
}

/// Planar double-integrator-like LQ problem with state weight `q`.
pub fn planar_lq_problem(q: f64) -> Problem {
    let cost = QuadraticRunningCost {
        control_weight: DMatrix::identity(2, 2),
        state_weight: q,
        n: 2,
    };
    Problem::new(
        "planar_lq",
        DEFAULT_HORIZON,
        Arc::new(LinearDynamics {
            a: planar_lq_drift(),
            b: DMatrix::identity(2, 2),
        }),
        Arc::new(cost),
        ENERGY_CONSTANTS,
    )
}

/// `planar_lq` with `q = 0` and terminal Hessian `S = I`.
pub fn planar_lq() -> CatalogEntry {
    CatalogEntry {
        problem: planar_lq_problem(0.0),
        terminal: Arc::new(QuadraticCost::new(DMatrix::identity(2, 2))),
    }
}

/// Diagonal terminal Hessian `diag(a, -a/3)` for which `planar_lq` (q = 0,
/// T = 2) has a singular flow Jacobian with eigenvalues {0, 2} at every z.
///
/// With `A² = 0` the backward flow is `x(0) = (I - A T) z + M1 ∇ψ(z)` where
/// `M1 = T I + (Aᵀ - A) T²/2 - A Aᵀ T³/6`; zero trace-shift and zero
/// determinant give `16 a² - 36 a - 9 = 0`.
pub fn planar_lq_degenerate_hessian() -> DMatrix<f64> {
    let a = (36.0 - 1872f64.sqrt()) / 32.0;
    DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, -a / 3.0])
}

/// `planar_lq` tuned so that `x_z(0, z)` is singular everywhere and the
/// second variation of the flow vanishes: every `(z, v)` with `v` in the
/// kernel lies on the degenerate set.
pub fn planar_lq_degenerate() -> CatalogEntry {
    CatalogEntry {
        problem: planar_lq_problem(0.0),
        terminal: Arc::new(QuadraticCost::new(planar_lq_degenerate_hessian())),
    }
}

/// Terminal-cost family selected by configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalSpec {
    Zero,
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
        wave: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    Exponential {
        #[serde(default = "one")]
        amplitude: f64,
        rate: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
    Quadratic {
        /// Row-major n×n.
        hessian: Vec<f64>,
        #[serde(default)]
        gradient: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    Polynomial {
        coeffs: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl TerminalSpec {
    pub fn build(&self, n: usize) -> Result<Arc<dyn TerminalCost>> {
        let dim_err = |what: &str, len: usize| {
            Error::InvalidArgument(format!("terminal {what} has length {len}, state dimension is {n}"))
        };
        Ok(match self {
            TerminalSpec::Zero => Arc::new(ZeroCost { n }),
            TerminalSpec::Cosine { amplitude, wave, phase } => {
                if wave.len() != n {
                    return Err(dim_err("wave", wave.len()));
                }
                Arc::new(CosineCost {
                    amplitude: *amplitude,
                    wave: DVector::from_vec(wave.clone()),
                    phase: *phase,
                })
            }
            TerminalSpec::Exponential { amplitude, rate, shift } => {
                if rate.len() != n {
                    return Err(dim_err("rate", rate.len()));
                }
                Arc::new(ExponentialCost {
                    amplitude: *amplitude,
                    rate: DVector::from_vec(rate.clone()),
                    shift: *shift,
                })
            }
            TerminalSpec::Quadratic {
                hessian,
                gradient,
                constant,
            } => {
                if hessian.len() != n * n {
                    return Err(dim_err("hessian", hessian.len()));
                }
                let gradient = if gradient.is_empty() {
                    DVector::zeros(n)
                } else if gradient.len() == n {
                    DVector::from_vec(gradient.clone())
                } else {
                    return Err(dim_err("gradient", gradient.len()));
                };
                let mut q = QuadraticCost::new(DMatrix::from_row_slice(n, n, hessian));
                q.gradient = gradient;
                q.constant = *constant;
                Arc::new(q)
            }
            TerminalSpec::Polynomial { coeffs } => {
                if n != 1 {
                    return Err(dim_err("polynomial (scalar only)", 1));
                }
                Arc::new(PolynomialCost { coeffs: coeffs.clone() })
            }
        })
    }
}

/// Look up a catalog problem by label. Recognised parameters:
/// `dim` (single integrators), `a` (`single_integrator_quad`), `q` and
/// `degenerate` (`planar_lq`), `horizon` (all).
pub fn build(label: &str, params: &BTreeMap<String, f64>) -> Result<CatalogEntry> {
    let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    let dim = get("dim", 1.0);
    if dim < 1.0 || dim.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("dim = {dim}")));
    }
    let n = dim as usize;
    let mut entry = match label {
        "example21" => example21(),
        "single_integrator" => single_integrator(n),
        "single_integrator_cos" => single_integrator_cos(),
        "single_integrator_quad" => single_integrator_quad(n, get("a", 1.0)),
        "planar_lq" => {
            let q = get("q", 0.0);
            let base = if get("degenerate", 0.0) != 0.0 {
                planar_lq_degenerate()
            } else {
                planar_lq()
            };
            CatalogEntry {
                problem: planar_lq_problem(q),
                terminal: base.terminal,
            }
        }
        other => return Err(Error::UnknownCatalog(other.to_string())),
    };
    let horizon = get("horizon", DEFAULT_HORIZON);
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon = {horizon}")));
    }
    entry.problem.horizon = horizon;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_hessian_gives_eigenvalues_zero_and_two() {
        let s = planar_lq_degenerate_hessian();
        let a = planar_lq_drift();
        let t = 2.0;
        let i = DMatrix::<f64>::identity(2, 2);
        let m0 = &i - &a * t;
        let m1 = &i * t + (a.transpose() - &a) * (t * t / 2.0) - &a * a.transpose() * (t.powi(3) / 6.0);
        let x0 = m0 + m1 * s;
        assert_relative_eq!(x0.trace(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(x0.determinant(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn build_rejects_unknown_labels_and_bad_params() {
        let p = BTreeMap::new();
        assert!(matches!(build("nope", &p), Err(Error::UnknownCatalog(_))));
        let mut p = BTreeMap::new();
        p.insert("dim".to_string(), 1.5);
        assert!(build("single_integrator", &p).is_err());
        for label in LABELS {
            let e = build(label, &BTreeMap::new()).unwrap();
            assert_eq!(e.terminal.dim(), e.problem.state_dim());
        }
    }

    #[test]
    fn terminal_spec_dimension_checks() {
        let spec = TerminalSpec::Cosine {
            amplitude: 1.0,
            wave: vec![1.0, 2.0],
            phase: 0.0,
        };
        assert!(spec.build(1).is_err());
        assert_eq!(spec.build(2).unwrap().dim(), 2);
    }
}
