//! Control-affine optimal control problems.
//!
//! A [`Problem`] bundles the dynamics `f(x, u) = f0(x) + sum_i f_i(x) u_i`,
//! the running cost `L(x, u)`, the horizon and the growth/convexity constants
//! used by the a-priori bounds. Terminal costs live separately in
//! [`terminal`] so one problem can be analysed under many of them.

pub mod catalog;
pub mod checks;
mod hamiltonian;
pub mod terminal;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use hamiltonian::{HamiltonianEval, HamiltonianFirst, HamiltonianThird};
pub use terminal::TerminalCost;

/// Vector fields `f_0, ..., f_m` with their first and second derivatives.
pub trait ControlAffineDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// `f_i(x)` for `i` in `0..=m`.
    fn field(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;

    /// `d f_i / dx`, an n×n matrix.
    fn field_jacobian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64>;

    /// Hessians of the components of `f_i`: entry `k` is `d² f_i^k / dx²`.
    fn field_hessian(&self, i: usize, x: &DVector<f64>) -> Vec<DMatrix<f64>>;
}

/// Running cost `L(x, u)` and its derivatives.
pub trait RunningCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn grad_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn grad_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn hess_xx(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// Mixed block `L_xu`, n×m.
    fn hess_xu(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn hess_uu(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// Modulus `ℓ` in `|L_x(x,u)| <= ℓ(|x|) (1 + |u|²)`; must be nondecreasing.
    fn modulus(&self, s: f64) -> f64;

    /// True when `L` is exactly quadratic in `u`, so the pointwise minimizer
    /// is one linear solve.
    fn quadratic_in_u(&self) -> bool {
        false
    }
}

/// Growth and convexity constants for the standing assumptions:
/// `|f_i(x)| <= c1 (|x| + 1)`, `L >= c2 (|u|² - 1)`, `L_uu > delta_l I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub delta_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MinimizerMode {
    /// One linear solve; valid when the cost is quadratic in `u`.
    ClosedForm,
    /// Damped Newton iteration from `u = 0`.
    Newton,
}

#[derive(Clone)]
pub struct Problem {
    pub label: String,
    pub horizon: f64,
    pub dynamics: Arc<dyn ControlAffineDynamics>,
    pub running_cost: Arc<dyn RunningCost>,
    pub constants: GrowthConstants,
    pub minimizer: MinimizerMode,
    /// Stationarity tolerance for the Newton minimizer.
    pub minimizer_tol: f64,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("label", &self.label)
            .field("n", &self.state_dim())
            .field("m", &self.control_dim())
            .field("horizon", &self.horizon)
            .field("constants", &self.constants)
            .field("minimizer", &self.minimizer)
            .finish()
    }
}

impl Problem {
    pub fn new(
        label: impl Into<String>,
        horizon: f64,
        dynamics: Arc<dyn ControlAffineDynamics>,
        running_cost: Arc<dyn RunningCost>,
        constants: GrowthConstants,
    ) -> Self {
        let minimizer = if running_cost.quadratic_in_u() {
            MinimizerMode::ClosedForm
        } else {
            MinimizerMode::Newton
        };
        Problem {
            label: label.into(),
            horizon,
            dynamics,
            running_cost,
            constants,
            minimizer,
            minimizer_tol: 1e-13,
        }
    }

    pub fn with_minimizer(mut self, mode: MinimizerMode) -> Self {
        self.minimizer = mode;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// `f(x, u) = f0(x) + sum_i f_i(x) u_i`.
    pub fn dynamics_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut f = self.dynamics.field(0, x);
        for i in 0..self.control_dim() {
            f += self.dynamics.field(i + 1, x) * u[i];
        }
        f
    }

    /// Control matrix `f_u(x)` with columns `f_1(x), ..., f_m(x)`.
    pub fn control_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut fu = DMatrix::zeros(n, m);
        for i in 0..m {
            fu.set_column(i, &self.dynamics.field(i + 1, x));
        }
        fu
    }

    /// `d f / dx` at `(x, u)`.
    pub fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.dynamics.field_jacobian(0, x);
        for i in 0..self.control_dim() {
            j += self.dynamics.field_jacobian(i + 1, x) * u[i];
        }
        j
    }
}
