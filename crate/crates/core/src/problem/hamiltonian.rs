//! Hamiltonian `H(x,p) = min_w { L(x,w) + p·f(x,w) }` and its derivatives.
//!
//! Second derivatives come from implicit differentiation of the stationarity
//! condition `L_u + f_u^T p = 0`:
//! `du/dx = -L_uu^{-1} G_ux`, `du/dp = -L_uu^{-1} f_u^T`.

use nalgebra::{DMatrix, DVector};

use super::{MinimizerMode, Problem};
use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;

const NEWTON_MAX_ITER: usize = 50;

/// Minimizer, value and first derivatives: everything the extremal ODE needs.
#[derive(Debug, Clone)]
pub struct HamiltonianFirst {
    pub u_star: DVector<f64>,
    pub h: f64,
    pub h_x: DVector<f64>,
    /// Equals `f(x, u_star)`.
    pub h_p: DVector<f64>,
}

/// Full second-order evaluation of `H` at `(x, p)`.
#[derive(Debug, Clone)]
pub struct HamiltonianEval {
    pub u_star: DVector<f64>,
    pub h: f64,
    pub h_x: DVector<f64>,
    pub h_p: DVector<f64>,
    /// `A = H_xx`.
    pub h_xx: DMatrix<f64>,
    /// `B = d(H_p)/dx`, entry (i, j) is `d²H / dp_i dx_j`.
    pub h_px: DMatrix<f64>,
    /// `C = H_pp`, negative semidefinite.
    pub h_pp: DMatrix<f64>,
}

impl HamiltonianEval {
    /// `d(H_x)/dp`, the transpose of `h_px`.
    pub fn h_xp(&self) -> DMatrix<f64> {
        self.h_px.transpose()
    }
}

/// Directional derivatives of `(A, B, C)` along `(dx, dp)`.
#[derive(Debug, Clone)]
pub struct HamiltonianThird {
    pub d_xx: DMatrix<f64>,
    pub d_px: DMatrix<f64>,
    pub d_pp: DMatrix<f64>,
}

fn cholesky_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or(Error::SingularLuu)
}

impl Problem {
    fn check_xp(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<()> {
        check_dim(self.state_dim(), x.len(), "state x")?;
        check_dim(self.state_dim(), p.len(), "costate p")
    }

    /// `argmin_w L(x,w) + p·f(x,w)` with stationarity residual at most `tol`.
    pub fn pointwise_minimizer(&self, x: &DVector<f64>, p: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        self.check_xp(x, p)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("minimizer tolerance {tol}")));
        }
        let m = self.control_dim();
        let cost = &self.running_cost;
        let fu_t_p = self.control_matrix(x).transpose() * p;
        match self.minimizer {
            MinimizerMode::ClosedForm => {
                let zero = DVector::zeros(m);
                let g = cost.grad_u(x, &zero) + &fu_t_p;
                let chol = cost.hess_uu(x, &zero).cholesky().ok_or(Error::SingularLuu)?;
                Ok(-chol.solve(&g))
            }
            MinimizerMode::Newton => {
                let objective = |w: &DVector<f64>| cost.value(x, w) + fu_t_p.dot(w);
                let mut w = DVector::zeros(m);
                let mut g = cost.grad_u(x, &w) + &fu_t_p;
                for _ in 0..NEWTON_MAX_ITER {
                    if g.norm() <= tol {
                        return Ok(w);
                    }
                    let chol = cost.hess_uu(x, &w).cholesky().ok_or(Error::SingularLuu)?;
                    let d = -chol.solve(&g);
                    let j0 = objective(&w);
                    let slope = g.dot(&d);
                    let mut lambda = 1.0;
                    while lambda > 1e-10 && objective(&(&w + &d * lambda)) > j0 + 1e-4 * lambda * slope {
                        lambda *= 0.5;
                    }
                    if lambda <= 1e-10 {
                        // Armijo test is lost in rounding next to the minimizer
                        lambda = 1.0;
                    }
                    let step = &d * lambda;
                    w += &step;
                    g = cost.grad_u(x, &w) + &fu_t_p;
                    if step.norm() <= 1e-15 * (1.0 + w.norm()) {
                        return Ok(w);
                    }
                }
                if g.norm() <= tol {
                    Ok(w)
                } else {
                    Err(Error::NonConvergence {
                        iterations: NEWTON_MAX_ITER,
                        residual: g.norm(),
                    })
                }
            }
        }
    }

    fn minimizer(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.pointwise_minimizer(x, p, self.minimizer_tol)
    }

    pub fn hamiltonian(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
        let u = self.minimizer(x, p)?;
        Ok(self.running_cost.value(x, &u) + p.dot(&self.dynamics_value(x, &u)))
    }

    /// Value and first derivatives via the envelope identities
    /// `H_p = f(x,u*)`, `H_x = L_x(x,u*) + f_x(x,u*)^T p`.
    pub fn hamiltonian_first(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<HamiltonianFirst> {
        let u = self.minimizer(x, p)?;
        let f = self.dynamics_value(x, &u);
        let h = self.running_cost.value(x, &u) + p.dot(&f);
        let h_x = self.running_cost.grad_x(x, &u) + self.dynamics_jacobian(x, &u).transpose() * p;
        Ok(HamiltonianFirst {
            u_star: u,
            h,
            h_x,
            h_p: f,
        })
    }

    pub fn hamiltonian_derivatives(&self, x: &DVector<f64>, p: &DVector<f64>) -> Result<HamiltonianEval> {
        let n = self.state_dim();
        let m = self.control_dim();
        let first = self.hamiltonian_first(x, p)?;
        let u = &first.u_star;
        let dyn_ = &self.dynamics;
        let cost = &self.running_cost;

        let fu = self.control_matrix(x);
        let fx = self.dynamics_jacobian(x, u);

        // G = L + p·f; G_ux has rows L_ux[i] + p^T df_i/dx
        let mut g_ux = cost.hess_xu(x, u).transpose();
        for i in 0..m {
            let row = dyn_.field_jacobian(i + 1, x).transpose() * p;
            for j in 0..n {
                g_ux[(i, j)] += row[j];
            }
        }
        let mut g_xx = cost.hess_xx(x, u);
        for i in 0..=m {
            let weight = if i == 0 { 1.0 } else { u[i - 1] };
            if weight == 0.0 {
                continue;
            }
            for (k, hk) in dyn_.field_hessian(i, x).iter().enumerate() {
                g_xx += hk * (weight * p[k]);
            }
        }
        let luu_inv = cholesky_inverse(&cost.hess_uu(x, u))?;
        let du_dx = -&luu_inv * &g_ux;
        let h_xx = symmetrize(&(&g_xx + g_ux.transpose() * &du_dx));
        let h_px = &fx + &fu * &du_dx;
        let h_pp = symmetrize(&(-(&fu * &luu_inv * fu.transpose())));

        Ok(HamiltonianEval {
            u_star: first.u_star,
            h: first.h,
            h_x: first.h_x,
            h_p: first.h_p,
            h_xx,
            h_px,
            h_pp,
        })
    }

    /// Directional derivatives of the second derivatives of `H` along
    /// `(dx, dp)`, by central differences of [`Self::hamiltonian_derivatives`].
    pub fn hamiltonian_third_directional(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
        dx: &DVector<f64>,
        dp: &DVector<f64>,
    ) -> Result<HamiltonianThird> {
        let n = self.state_dim();
        let dir_norm = (dx.norm_squared() + dp.norm_squared()).sqrt();
        if dir_norm == 0.0 {
            return Ok(HamiltonianThird {
                d_xx: DMatrix::zeros(n, n),
                d_px: DMatrix::zeros(n, n),
                d_pp: DMatrix::zeros(n, n),
            });
        }
        let scale = (x.norm_squared() + p.norm_squared()).sqrt().max(1.0);
        let eps = 6e-6 * scale / dir_norm;
        let plus = self.hamiltonian_derivatives(&(x + dx * eps), &(p + dp * eps))?;
        let minus = self.hamiltonian_derivatives(&(x - dx * eps), &(p - dp * eps))?;
        let inv = 0.5 / eps;
        Ok(HamiltonianThird {
            d_xx: (plus.h_xx - minus.h_xx) * inv,
            d_px: (plus.h_px - minus.h_px) * inv,
            d_pp: (plus.h_pp - minus.h_pp) * inv,
        })
    }
}
