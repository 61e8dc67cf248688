//! Constructive bounds on globally optimal controls, states and adjoints
//! for initial points in the ball `|y| <= r`.
//!
//! ```text
//! R1(r)   = (r + 1) e^{c1 T}
//! β1(r)   = (T sup_{|x|<=R1} L(x,0) + sup_{|x|<=R1} |ψ| + max(0, -inf ψ)) / c2 + T
//! β(r)    = (r + 1) exp{(c1/2) [β1 + (m + 2) T]}
//! β2(r)   = F_u exp{G_f (T + √m √(T β1))}
//! α1(r)   = ((T + β1) ℓ(β) + sup_{|x|<=β} |∇ψ|) β2 + 1
//! α(r)    = max{α1 / c2, c2 + max_{|x|<=β} |L(x,0)|}
//! γ(r)    = (G_ψ + T G_L) e^{T G_f'}
//! ```
//!
//! `G_f = max_i sup_{|x|<=β} |∂f_i/∂x|`, `F_u = sup_{|x|<=β} |f_u(x)|`,
//! `G_f' = sup |∂f/∂x|` over `|x|<=β`, `|u|<=α`, `G_L = ℓ(β)(1 + α²)` and
//! `G_ψ = sup_{|z|<=β} |∇ψ|`. The `+1` in `α1` absorbs the running-cost
//! difference on the set where `|u*|` is large; `β2` is a Gronwall constant
//! for the difference of two trajectories. Both are one admissible choice,
//! not tight values. Suprema are sampled and inflated by 10%.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ExtremalArc;
use crate::linalg::op_norm;
use crate::problem::{Problem, TerminalCost};

pub const SAFETY: f64 = 0.1;
const SAMPLES_PER_DIM: usize = 4096;
const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: usize, base: u32) -> f64 {
    let b = base as usize;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

/// Deterministic points covering the closed ball of radius `radius`:
/// the center, `±radius e_i`, and Halton points in the cube projected
/// radially onto the ball.
pub fn ball_points(dim: usize, radius: f64) -> Vec<DVector<f64>> {
    let count = SAMPLES_PER_DIM * dim;
    let mut pts = Vec::with_capacity(count + 2 * dim + 1);
    pts.push(DVector::zeros(dim));
    for i in 0..dim {
        for s in [-1.0, 1.0] {
            let mut e = DVector::zeros(dim);
            e[i] = s * radius;
            pts.push(e);
        }
    }
    for k in 1..=count {
        let mut p = DVector::from_fn(dim, |i, _| radius * (2.0 * halton(k, PRIMES[i % PRIMES.len()]) - 1.0));
        let norm = p.norm();
        if norm > radius {
            p *= radius / norm;
        }
        pts.push(p);
    }
    pts
}

fn inflate(s: f64) -> f64 {
    s + SAFETY * s.abs()
}

/// Inflated sampled supremum of `g` over the ball.
pub fn sampled_sup<F>(dim: usize, radius: f64, g: F) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
{
    if !radius.is_finite() {
        return f64::INFINITY;
    }
    let s = ball_points(dim, radius)
        .iter()
        .map(&g)
        .fold(f64::NEG_INFINITY, f64::max);
    inflate(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub r: f64,
    pub beta1: f64,
    pub beta: f64,
    pub beta2: f64,
    pub alpha1: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sup_l0_inner: f64,
    pub sup_psi_inner: f64,
    pub psi_shift: f64,
    pub ell_beta: f64,
    pub sup_grad_psi: f64,
    pub sup_abs_l0: f64,
    pub g_f: f64,
    pub f_u: f64,
    pub g_f_alpha: f64,
    pub g_l: f64,
    pub samples_per_ball: usize,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Every bound at radius `r`. Values that overflow, or that are undefined
/// because `ψ` has no known lower bound, are `+∞`.
pub fn report(problem: &Problem, psi: &dyn TerminalCost, r: f64) -> Result<BoundReport> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("bound radius r = {r}")));
    }
    let n = problem.state_dim();
    let m = problem.control_dim();
    let t = problem.horizon;
    let c = problem.constants;
    let zero_u = DVector::zeros(m);
    let l0 = |x: &DVector<f64>| problem.running_cost.value(x, &zero_u);

    let r1 = (r + 1.0) * (c.c1 * t).exp();
    let sup_l0_inner = sampled_sup(n, r1, l0);
    let sup_psi_inner = sampled_sup(n, r1, |x| psi.value(x).abs());
    let psi_shift = match psi.lower_bound() {
        Some(lo) => (-lo).max(0.0),
        None => f64::INFINITY,
    };
    let beta1 = finite_or_inf((t * sup_l0_inner + sup_psi_inner + psi_shift) / c.c2 + t);
    let beta = finite_or_inf((r + 1.0) * (0.5 * c.c1 * (beta1 + (m as f64 + 2.0) * t)).exp());

    let g_f = sampled_sup(n, beta, |x| {
        (0..=m)
            .map(|i| op_norm(&problem.dynamics.field_jacobian(i, x)))
            .fold(0.0, f64::max)
    });
    let f_u = sampled_sup(n, beta, |x| op_norm(&problem.control_matrix(x)));
    let beta2 = finite_or_inf(f_u * (g_f * (t + (m as f64).sqrt() * (t * beta1).sqrt())).exp());
    let ell_beta = problem.running_cost.modulus(beta);
    let sup_grad_psi = sampled_sup(n, beta, |x| psi.gradient(x).norm());
    let alpha1 = finite_or_inf(((t + beta1) * ell_beta + sup_grad_psi) * beta2 + 1.0);
    let sup_abs_l0 = sampled_sup(n, beta, |x| l0(x).abs());
    let alpha = finite_or_inf((alpha1 / c.c2).max(c.c2 + sup_abs_l0));

    // sup over |u| <= α of |f_0x + Σ u_i f_ix| <= |f_0x| + α (Σ |f_ix|²)^{1/2}
    let g_f_alpha = sampled_sup(n, beta, |x| {
        let drift = op_norm(&problem.dynamics.field_jacobian(0, x));
        let ctrl: f64 = (1..=m)
            .map(|i| op_norm(&problem.dynamics.field_jacobian(i, x)).powi(2))
            .sum::<f64>()
            .sqrt();
        drift + if ctrl == 0.0 { 0.0 } else { alpha * ctrl }
    });
    let g_l = if ell_beta == 0.0 {
        0.0
    } else {
        finite_or_inf(ell_beta * (1.0 + alpha * alpha))
    };
    let gamma_pre = sup_grad_psi + if g_l == 0.0 { 0.0 } else { t * g_l };
    let gamma = if gamma_pre == 0.0 {
        0.0
    } else {
        finite_or_inf(gamma_pre * (t * g_f_alpha).exp())
    };

    Ok(BoundReport {
        r,
        beta1,
        beta,
        beta2,
        alpha1,
        alpha,
        gamma,
        sup_l0_inner,
        sup_psi_inner,
        psi_shift,
        ell_beta,
        sup_grad_psi,
        sup_abs_l0,
        g_f,
        f_u,
        g_f_alpha,
        g_l,
        samples_per_ball: SAMPLES_PER_DIM * n + 2 * n + 1,
    })
}

/// Reports on an increasing ladder of radii, made monotone by a running
/// maximum (a larger value is still a valid bound).
pub fn ladder(problem: &Problem, psi: &dyn TerminalCost, radii: &[f64]) -> Result<Vec<BoundReport>> {
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<BoundReport> = Vec::with_capacity(sorted.len());
    for r in sorted {
        let mut rep = report(problem, psi, r)?;
        if let Some(prev) = out.last() {
            rep.beta1 = rep.beta1.max(prev.beta1);
            rep.beta = rep.beta.max(prev.beta);
            rep.beta2 = rep.beta2.max(prev.beta2);
            rep.alpha1 = rep.alpha1.max(prev.alpha1);
            rep.alpha = rep.alpha.max(prev.alpha);
            rep.gamma = rep.gamma.max(prev.gamma);
        }
        out.push(rep);
    }
    Ok(out)
}

/// Relative slack on `|y| <= r`, absorbing the shooting tolerance.
const Y_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub passed: bool,
    pub max_u: f64,
    pub max_x: f64,
    pub max_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub reasons: Vec<String>,
}

/// Check `|u| <= α(r)`, `|x| <= β(r)`, `|p| <= γ(r)` on the samples of an
/// arc claimed to be globally optimal from `|y| <= r`. An escaped arc never
/// reaches `t = 0` and fails.
pub fn verify_bounds(arc: &ExtremalArc, rep: &BoundReport) -> BoundCheck {
    let max_of = |f: &dyn Fn(&crate::flow::ArcSample) -> f64| arc.samples.iter().map(f).fold(0.0, f64::max);
    let max_u = max_of(&|s| s.u.norm());
    let max_x = max_of(&|s| s.x.norm());
    let max_p = max_of(&|s| s.p.norm());
    let mut reasons = Vec::new();
    if let crate::flow::ArcStatus::Escaped { tau } = arc.status {
        reasons.push(format!("arc escaped at t = {tau:?} before reaching t = 0"));
    } else {
        let y = &arc.first().x;
        if y.norm() > rep.r * (1.0 + Y_SLACK) {
            reasons.push(format!("initial point |y| = {:?} exceeds r = {:?}", y.norm(), rep.r));
        }
    }
    if max_u > rep.alpha {
        reasons.push(format!("|u| = {max_u:?} > alpha = {:?}", rep.alpha));
    }
    if max_x > rep.beta {
        reasons.push(format!("|x| = {max_x:?} > beta = {:?}", rep.beta));
    }
    if max_p > rep.gamma {
        reasons.push(format!("|p| = {max_p:?} > gamma = {:?}", rep.gamma));
    }
    BoundCheck {
        passed: reasons.is_empty(),
        max_u,
        max_x,
        max_p,
        alpha: rep.alpha,
        beta: rep.beta,
        gamma: rep.gamma,
        reasons,
    }
}
