//! Localized polynomial perturbations of the terminal cost and the
//! finite-difference transversality test.
//!
//! `ψ^θ(z) = ψ(z) + Σ_l η(z - z̄_l) φ(θ_l, z - z̄_l)` with
//! `φ(θ, z) = Σ_ij θ_ij z_i z_j + Σ_k θ_k z_k³` and `η` a smooth radial
//! cutoff equal to one on the inner ball and zero outside the outer ball.
//! `θ` is stored as `(θ_11, θ_12, ..., θ_nn, θ_1, ..., θ_n)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::ball_points;
use crate::conjugate::{omega_psi_residual, sweep_locus, ConjugateCandidate, ConjugateTolerances, SweepOptions};
use crate::error::{check_dim, Error, Result};
use crate::flow::{Flow, SecondVariationMethod};
use crate::grid::Grid;
use crate::jet::Jet;
use crate::linalg::SingularSystem;
use crate::problem::terminal::{third_by_polarization, DerivativeSource};
use crate::problem::TerminalCost;

pub fn theta_dim(n: usize) -> usize {
    n * n + n
}

fn check_theta(theta: &DVector<f64>, z: &DVector<f64>) -> Result<usize> {
    let n = z.len();
    check_dim(theta_dim(n), theta.len(), "perturbation coefficients")?;
    Ok(n)
}

/// `φ(θ, z)`.
pub fn phi_value(theta: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let n = check_theta(theta, z)?;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += theta[i * n + j] * z[i] * z[j];
        }
        s += theta[n * n + i] * z[i].powi(3);
    }
    Ok(s)
}

/// `∂φ/∂z_i = Σ_j (θ_ij + θ_ji) z_j + 3 θ_i z_i²`.
pub fn phi_gradient(theta: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let n = check_theta(theta, z)?;
    Ok(DVector::from_fn(n, |i, _| {
        (0..n)
            .map(|j| (theta[i * n + j] + theta[j * n + i]) * z[j])
            .sum::<f64>()
            + 3.0 * theta[n * n + i] * z[i] * z[i]
    }))
}

/// `∂²φ/∂z_i∂z_j = θ_ij + θ_ji + δ_ij 6 θ_i z_i`.
pub fn phi_hessian(theta: &DVector<f64>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = check_theta(theta, z)?;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 6.0 * theta[n * n + i] * z[i] } else { 0.0 };
        theta[i * n + j] + theta[j * n + i] + diag
    }))
}

/// Jet of `s -> φ(θ, z + s w)`.
pub fn phi_line_jet(theta: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> Jet {
    let n = z.len();
    let c: Vec<Jet> = (0..n).map(|i| Jet::line(z[i], w[i])).collect();
    let mut s = Jet::zero();
    for i in 0..n {
        for j in 0..n {
            s = s + (c[i] * c[j]).scale(theta[i * n + j]);
        }
        s = s + c[i].powi(3).scale(theta[n * n + i]);
    }
    s
}

/// Smooth radial cutoff with transition on `inner <= |y| <= outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { inner: 1.0, outer: 2.0 }
    }
}

fn flat(s: Jet) -> Jet {
    if s.value() <= 0.0 {
        Jet::zero()
    } else {
        s.recip().scale(-1.0).exp()
    }
}

/// `g(t) = h(1-t) / (h(1-t) + h(t))`, `h(s) = e^{-1/s}`, for `t` in `(0, 1)`.
fn profile(t: Jet) -> Jet {
    let a = flat(Jet::constant(1.0) - t);
    let b = flat(t);
    a * (a + b).recip()
}

impl Cutoff {
    pub fn validate(&self) -> Result<()> {
        if self.inner > 0.0 && self.outer > self.inner {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cutoff radii {self:?}")))
        }
    }

    fn transition(&self, r: f64) -> Option<f64> {
        if r <= self.inner || r >= self.outer {
            None
        } else {
            Some((r - self.inner) / (self.outer - self.inner))
        }
    }

    /// `(g, g', g'')` of the radial profile at `|y| = r`, in `r`.
    fn radial(&self, r: f64) -> [f64; 3] {
        match self.transition(r) {
            None => [if r <= self.inner { 1.0 } else { 0.0 }, 0.0, 0.0],
            Some(t) => {
                let g = profile(Jet::line(t, 1.0));
                let d = self.outer - self.inner;
                [g.value(), g.derivative(1) / d, g.derivative(2) / (d * d)]
            }
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        self.radial(y.norm())[0]
    }

    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let r = y.norm();
        let [_, g1, _] = self.radial(r);
        if g1 == 0.0 {
            return DVector::zeros(y.len());
        }
        y * (g1 / r)
    }

    pub fn hessian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = y.len();
        let r = y.norm();
        let [_, g1, g2] = self.radial(r);
        if g1 == 0.0 && g2 == 0.0 {
            return DMatrix::zeros(n, n);
        }
        let e = y / r;
        let ee = &e * e.transpose();
        &ee * g2 + (DMatrix::identity(n, n) - &ee) * (g1 / r)
    }

    /// Jet of `s -> η(y + s w)`.
    pub fn line_jet(&self, y: &DVector<f64>, w: &DVector<f64>) -> Jet {
        let r = y.norm();
        if r <= self.inner {
            return Jet::constant(1.0);
        }
        if r >= self.outer {
            return Jet::zero();
        }
        let sq = y
            .iter()
            .zip(w.iter())
            .fold(Jet::zero(), |acc, (&a, &b)| acc + Jet::line(a, b) * Jet::line(a, b));
        let t = (sq.sqrt() + (-self.inner)) * (1.0 / (self.outer - self.inner));
        profile(t)
    }
}

/// One localized term `η(z - z̄) φ(θ, z - z̄)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPerturbation {
    pub center: DVector<f64>,
    pub theta: DVector<f64>,
    pub cutoff: Cutoff,
}

impl BumpPerturbation {
    pub fn new(center: DVector<f64>, theta: DVector<f64>, cutoff: Cutoff) -> Result<Self> {
        check_dim(theta_dim(center.len()), theta.len(), "perturbation coefficients")?;
        cutoff.validate()?;
        Ok(BumpPerturbation { center, theta, cutoff })
    }

    fn local(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let y = z - &self.center;
        (y.norm() < self.cutoff.outer && self.theta.iter().any(|&t| t != 0.0)).then_some(y)
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        match self.local(z) {
            Some(y) => self.cutoff.value(&y) * phi_value(&self.theta, &y).unwrap_or(0.0),
            None => 0.0,
        }
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let Some(y) = self.local(z) else {
            return DVector::zeros(z.len());
        };
        let phi = phi_value(&self.theta, &y).unwrap_or(0.0);
        let dphi = phi_gradient(&self.theta, &y).unwrap_or_else(|_| DVector::zeros(y.len()));
        self.cutoff.gradient(&y) * phi + dphi * self.cutoff.value(&y)
    }

    pub fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = z.len();
        let Some(y) = self.local(z) else {
            return DMatrix::zeros(n, n);
        };
        let phi = phi_value(&self.theta, &y).unwrap_or(0.0);
        let dphi = phi_gradient(&self.theta, &y).unwrap_or_else(|_| DVector::zeros(n));
        let hphi = phi_hessian(&self.theta, &y).unwrap_or_else(|_| DMatrix::zeros(n, n));
        let eta = self.cutoff.value(&y);
        let deta = self.cutoff.gradient(&y);
        self.cutoff.hessian(&y) * phi + &deta * dphi.transpose() + &dphi * deta.transpose() + hphi * eta
    }

    pub fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Jet {
        match self.local(z) {
            Some(y) => self.cutoff.line_jet(&y, w) * phi_line_jet(&self.theta, &y, w),
            None => Jet::zero(),
        }
    }

    pub fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        if self.local(z).is_none() {
            return DVector::zeros(z.len());
        }
        third_by_polarization(|w| self.line_jet(z, w).derivative(3), v)
    }
}

/// `ψ` plus a sum of bump perturbations.
#[derive(Clone)]
pub struct PerturbedTerminalCost {
    pub base: Arc<dyn TerminalCost>,
    pub bumps: Vec<BumpPerturbation>,
}

impl std::fmt::Debug for PerturbedTerminalCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedTerminalCost")
            .field("base", &self.base.label())
            .field("bumps", &self.bumps)
            .finish()
    }
}

impl PerturbedTerminalCost {
    /// Bumps with zero coefficients at the given centers.
    pub fn at_centers(base: Arc<dyn TerminalCost>, centers: &[DVector<f64>], cutoff: Cutoff) -> Result<Self> {
        let n = base.dim();
        let bumps = centers
            .iter()
            .map(|c| {
                check_dim(n, c.len(), "bump center")?;
                BumpPerturbation::new(c.clone(), DVector::zeros(theta_dim(n)), cutoff)
            })
            .collect::<Result<_>>()?;
        Ok(PerturbedTerminalCost { base, bumps })
    }

    pub fn theta_len(&self) -> usize {
        self.bumps.len() * theta_dim(self.base.dim())
    }

    /// All coefficients, bump by bump.
    pub fn theta(&self) -> DVector<f64> {
        let parts: Vec<f64> = self.bumps.iter().flat_map(|b| b.theta.iter().copied()).collect();
        DVector::from_vec(parts)
    }

    pub fn with_theta(&self, theta: &DVector<f64>) -> Result<Self> {
        check_dim(self.theta_len(), theta.len(), "perturbation coefficients")?;
        let d = theta_dim(self.base.dim());
        let bumps = self
            .bumps
            .iter()
            .enumerate()
            .map(|(l, b)| BumpPerturbation {
                theta: theta.rows(l * d, d).into_owned(),
                ..b.clone()
            })
            .collect();
        Ok(PerturbedTerminalCost {
            base: self.base.clone(),
            bumps,
        })
    }
}

impl TerminalCost for PerturbedTerminalCost {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn label(&self) -> String {
        format!("{}+bumps({})", self.base.label(), self.bumps.len())
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        self.base.value(z) + self.bumps.iter().map(|b| b.value(z)).sum::<f64>()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.bumps
            .iter()
            .fold(self.base.gradient(z), |acc, b| acc + b.gradient(z))
    }

    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        self.bumps
            .iter()
            .fold(self.base.hessian(z), |acc, b| acc + b.hessian(z))
    }

    fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<Jet> {
        let base = self.base.line_jet(z, w)?;
        Some(self.bumps.iter().fold(base, |acc, b| acc + b.line_jet(z, w)))
    }

    fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.bumps.iter().fold(self.base.third_directional(z, v), |acc, b| {
            acc + b.third_directional(z, v)
        })
    }

    fn third_source(&self) -> DerivativeSource {
        self.base.third_source()
    }

    fn lower_bound(&self) -> Option<f64> {
        None
    }
}

/// Sampled estimate of `max_{k<=4} sup |d^k/ds^k (η φ)(z̄ + y + s w)|` over
/// the bump support, with `w` ranging over coordinate and pairwise-diagonal
/// unit directions.
pub fn bump_c4_norm(bump: &BumpPerturbation) -> f64 {
    let n = bump.center.len();
    let mut dirs = Vec::new();
    for i in 0..n {
        dirs.push(DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }));
        for j in i + 1..n {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            dirs.push(DVector::from_fn(n, |k, _| if k == i || k == j { s } else { 0.0 }));
        }
    }
    let pts = ball_points(n, bump.cutoff.outer);
    let stride = (pts.len() / (256 * n)).max(1);
    pts.iter()
        .step_by(stride)
        .flat_map(|y| {
            let z = &bump.center + y;
            dirs.iter()
                .map(|w| {
                    bump.line_jet(&z, w)
                        .derivatives()
                        .iter()
                        .fold(0.0f64, |m, d| m.max(d.abs()))
                })
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// `sqrt(Σ_c ν(e_c)²)` over the coefficient basis of one bump, where `ν`
/// is [`bump_c4_norm`]; `scale` times this bounds the norm of any single
/// bump with `|θ| <= scale`.
pub fn unit_ball_c4_factor(n: usize, cutoff: Cutoff) -> Result<f64> {
    let d = theta_dim(n);
    let mut acc = 0.0;
    for c in 0..d {
        let theta = DVector::from_fn(d, |i, _| if i == c { 1.0 } else { 0.0 });
        let b = BumpPerturbation::new(DVector::zeros(n), theta, cutoff)?;
        acc += bump_c4_norm(&b).powi(2);
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub rank: usize,
    pub expected: usize,
    pub singular_values: Vec<f64>,
    pub columns: usize,
    pub step: f64,
}

impl TransversalityReport {
    pub fn full(&self) -> bool {
        self.rank == self.expected
    }
}

const TRANSVERSALITY_RANK_TOL: f64 = 1e-6;

/// Numeric rank of `D_θ Φ^{ψ^θ}(z, v)` by central differences in each
/// selected coefficient (all when `columns` is `None`).
pub fn transversality_rank(
    flow: &Flow,
    z: &DVector<f64>,
    v: &DVector<f64>,
    pert: &PerturbedTerminalCost,
    h: Option<f64>,
    columns: Option<&[usize]>,
) -> Result<TransversalityReport> {
    let n = flow.n();
    check_dim(n, z.len(), "terminal point z")?;
    check_dim(n, v.len(), "direction v")?;
    check_dim(n, pert.dim(), "perturbed terminal cost")?;
    let theta0 = pert.theta();
    let step = h.unwrap_or(1e-5 * theta0.norm().max(1.0));
    let cols: Vec<usize> = match columns {
        Some(c) => c.to_vec(),
        None => (0..pert.theta_len()).collect(),
    };
    if cols.iter().any(|&c| c >= pert.theta_len()) {
        return Err(Error::InvalidArgument("coefficient index out of range".into()));
    }
    let tols = ConjugateTolerances::default();
    let phi_at = |theta: DVector<f64>| -> Result<DVector<f64>> {
        let psi = Arc::new(pert.with_theta(&theta)?);
        match omega_psi_residual(
            &flow.with_terminal(psi),
            z,
            v,
            SecondVariationMethod::DirectionalODE,
            &tols,
        ) {
            Ok(r) => Ok(r.as_vector()),
            Err(Error::Escaped { .. }) | Err(Error::EscapedNeighborhood) => Err(Error::EscapedNeighborhood),
            Err(e) => Err(e),
        }
    };
    let columns: Vec<DVector<f64>> = cols
        .par_iter()
        .map(|&c| {
            let mut plus = theta0.clone();
            let mut minus = theta0.clone();
            plus[c] += step;
            minus[c] -= step;
            Ok((phi_at(plus)? - phi_at(minus)?) / (2.0 * step))
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n + 1, columns.len());
    for (k, col) in columns.iter().enumerate() {
        m.set_column(k, col);
    }
    let svd = SingularSystem::of(&m);
    Ok(TransversalityReport {
        z: z.clone(),
        v: v.clone(),
        rank: svd.rank(TRANSVERSALITY_RANK_TOL),
        expected: n + 1,
        singular_values: svd.values,
        columns: columns.len(),
        step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbOptions {
    pub max_draws: usize,
    /// Radius of the ball from which the full coefficient vector is drawn.
    pub scale: f64,
    pub seed: u64,
    pub cutoff: Cutoff,
    /// Admissible size of the perturbation in the sampled C⁴ norm.
    pub budget: f64,
    pub sweep: SweepOptions,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions {
            max_draws: 10,
            scale: 5e-5,
            seed: 0,
            cutoff: Cutoff::default(),
            budget: 10.0,
            sweep: SweepOptions {
                jacobi_proxy: false,
                ..SweepOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub psi: PerturbedTerminalCost,
    /// Index of the accepted draw; draw 0 is the unperturbed cost.
    pub draw: usize,
    pub draws_used: usize,
    pub candidates: Vec<ConjugateCandidate>,
    /// Upper estimate of the C⁴ norm of the applied perturbation.
    pub norm_bound: f64,
    pub centers: Vec<DVector<f64>>,
}

/// Bump centers on a grid over the box with spacing equal to the inner radius.
pub fn bump_centers(grid: &Grid, cutoff: Cutoff) -> Vec<DVector<f64>> {
    let axes: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| {
            let count = ((grid.hi[a] - grid.lo[a]) / cutoff.inner).ceil() as usize + 1;
            (0..count)
                .map(|k| (grid.lo[a] + k as f64 * cutoff.inner).min(grid.hi[a]))
                .collect()
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out.dedup();
    out.into_iter().map(DVector::from_vec).collect()
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    if radius == 0.0 {
        return DVector::zeros(dim);
    }
    let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.gen();
    g.normalize() * (radius * u.powf(1.0 / dim as f64))
}

/// Draw perturbations until no sweep candidate lies in the degenerate set.
pub fn perturb_until_generic(flow: &Flow, grid: &Grid, opts: &PerturbOptions) -> Result<PerturbOutcome> {
    opts.cutoff.validate()?;
    if !(opts.scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation scale {}", opts.scale)));
    }
    let n = flow.n();
    let centers = bump_centers(grid, opts.cutoff);
    let overlap = centers
        .iter()
        .map(|c| centers.iter().filter(|d| (*d - c).norm() < opts.cutoff.outer).count())
        .max()
        .unwrap_or(1) as f64;
    let norm_bound = opts.scale * overlap * unit_ball_c4_factor(n, opts.cutoff)?;
    if norm_bound > opts.budget {
        return Err(Error::PerturbationTooLarge {
            norm: norm_bound,
            budget: opts.budget,
        });
    }
    let template = PerturbedTerminalCost::at_centers(flow.psi.clone(), &centers, opts.cutoff)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut nearest = f64::INFINITY;
    for draw in 0..=opts.max_draws {
        let theta = if draw == 0 {
            DVector::zeros(template.theta_len())
        } else {
            uniform_in_ball(&mut rng, template.theta_len(), opts.scale)
        };
        let psi = template.with_theta(&theta)?;
        let sweep = sweep_locus(&flow.with_terminal(Arc::new(psi.clone())), grid, &opts.sweep)?;
        let violating: Vec<&ConjugateCandidate> = sweep
            .candidates
            .iter()
            .filter(|c| c.in_omega(&opts.sweep.tols))
            .collect();
        if violating.is_empty() {
            return Ok(PerturbOutcome {
                psi,
                draw,
                draws_used: draw + 1,
                candidates: sweep.candidates,
                norm_bound,
                centers,
            });
        }
        nearest = violating.iter().map(|c| c.min_abs_residual()).fold(nearest, f64::min);
    }
    Err(Error::BudgetExhausted {
        draws: opts.max_draws + 1,
        nearest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::checks::{check_terminal_derivatives, fd_jacobian};
    use crate::problem::terminal::CosineCost;
    use approx::assert_relative_eq;

    #[test]
    fn phi_cross_term_example() {
        let mut theta = DVector::zeros(6);
        theta[1] = 1.0; // θ_12
        let z = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(phi_value(&theta, &z).unwrap(), 1.0);
        let g = phi_gradient(&theta, &z).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], 1.0);
        assert!(phi_value(&DVector::zeros(5), &z).is_err());
    }

    #[test]
    fn phi_is_linear_in_theta_and_matches_jets() {
        let z = DVector::from_vec(vec![0.3, -1.1]);
        let w = DVector::from_vec(vec![0.6, 0.8]);
        let a = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.1, 0.7, -0.3]);
        let b = DVector::from_vec(vec![-0.2, 0.4, 0.0, 1.5, -0.6, 0.9]);
        let lhs = phi_value(&(&a * 2.0 + &b * -3.0), &z).unwrap();
        let rhs = 2.0 * phi_value(&a, &z).unwrap() - 3.0 * phi_value(&b, &z).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        let jet = phi_line_jet(&a, &z, &w);
        assert_relative_eq!(
            jet.derivative(1),
            phi_gradient(&a, &z).unwrap().dot(&w),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            jet.derivative(2),
            (w.transpose() * phi_hessian(&a, &z).unwrap() * &w)[(0, 0)],
            epsilon = 1e-12
        );
    }

    #[test]
    fn cutoff_plateau_and_support() {
        let c = Cutoff::default();
        let e = |r: f64| DVector::from_vec(vec![r, 0.0]);
        assert_eq!(c.value(&e(0.5)), 1.0);
        assert_eq!(c.gradient(&e(0.5)).norm(), 0.0);
        assert_eq!(c.value(&e(3.0)), 0.0);
        let mid = c.value(&e(1.5));
        assert!(mid > 0.0 && mid < 1.0);
        let y = DVector::from_vec(vec![1.1, 0.7]);
        let g = fd_jacobian(|p| DVector::from_element(1, c.value(p)), &y, 1e-6);
        assert_relative_eq!(g[(0, 0)], c.gradient(&y)[0], epsilon = 1e-6);
        let h = fd_jacobian(|p| c.gradient(p), &y, 1e-6);
        assert!((h - c.hessian(&y)).norm() < 1e-6);
    }

    #[test]
    fn perturbed_cost_is_base_at_zero_and_consistent() {
        let base: Arc<dyn TerminalCost> = Arc::new(CosineCost::unit(2));
        let centers = vec![DVector::from_vec(vec![0.0, 0.0])];
        let p = PerturbedTerminalCost::at_centers(base.clone(), &centers, Cutoff::default()).unwrap();
        let z = DVector::from_vec(vec![0.4, 0.9]);
        assert_eq!(p.value(&z), base.value(&z));
        assert_eq!(p.hessian(&z), base.hessian(&z));
        let theta = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.25]);
        let q = p.with_theta(&theta).unwrap();
        assert!(check_terminal_derivatives(&q, 2.5, 20, 3).passed);
        let far = DVector::from_vec(vec![2.5, 0.1]);
        assert_eq!(q.value(&far), base.value(&far));
        assert_eq!(q.third_directional(&far, &z), base.third_directional(&far, &z));
    }

    #[test]
    fn centers_cover_box_with_inner_spacing() {
        let g = Grid::cube(2, -1.0, 1.0, 5).unwrap();
        let c = bump_centers(&g, Cutoff::default());
        assert_eq!(c.len(), 9);
    }
}
