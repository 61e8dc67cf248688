//! Conjugate points: rank deficiency of `X(0) = x_z(0, z)`, the residual of
//! the degenerate set `Ω_ψ`, and grid sweeps of the conjugate locus.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{ArcStatus, Endpoint, Flow, SecondVariationMethod};
use crate::grid::Grid;
use crate::linalg::{canonical_sign, SingularSystem};
use crate::optimality::ReachSolution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateTolerances {
    /// Relative: rank deficiency when `σ_min <= rank_tol (1 + |X(0)|)`.
    pub rank_tol: f64,
    pub det_tol: f64,
    pub omega_tol: f64,
    /// Singular values within this gap of `σ_min` span the near-null basis.
    pub gap: f64,
}

impl Default for ConjugateTolerances {
    fn default() -> Self {
        ConjugateTolerances {
            rank_tol: 1e-8,
            det_tol: 1e-10,
            omega_tol: 1e-6,
            gap: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTest {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub v: DVector<f64>,
    pub basis: Vec<DVector<f64>>,
    pub conjugate: bool,
}

fn rank_from_matrix(x0: &DMatrix<f64>, tols: &ConjugateTolerances) -> RankTest {
    let svd = SingularSystem::of(x0);
    let (sigma_min, v) = svd.smallest();
    let v = canonical_sign(v.clone());
    let basis = svd.near_null_basis(tols.gap).into_iter().map(canonical_sign).collect();
    RankTest {
        sigma_min,
        sigma_max: svd.largest(),
        v,
        basis,
        conjugate: sigma_min <= tols.rank_tol * (1.0 + x0.norm()),
    }
}

/// Smallest singular value of `X(0)` and its right singular vector.
pub fn rank_test(flow: &Flow, z: &DVector<f64>, tols: &ConjugateTolerances) -> Result<RankTest> {
    let ep = flow.endpoint(z, true)?.require_complete()?;
    Ok(rank_from_matrix(ep.x_z(), tols))
}

/// `Φ^ψ(z, v) = (X(0) v, (Y(0) v)ᵀ Ξ(0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaResidual {
    pub first: DVector<f64>,
    pub second: f64,
    pub in_omega: bool,
}

impl OmegaResidual {
    /// The residual as one vector in `R^{n+1}`.
    pub fn as_vector(&self) -> DVector<f64> {
        let n = self.first.len();
        DVector::from_fn(n + 1, |i, _| if i < n { self.first[i] } else { self.second })
    }
}

pub fn omega_psi_residual(
    flow: &Flow,
    z: &DVector<f64>,
    v: &DVector<f64>,
    method: SecondVariationMethod,
    tols: &ConjugateTolerances,
) -> Result<OmegaResidual> {
    check_dim(flow.n(), v.len(), "direction v")?;
    let (_, xv, yv) = flow.tangent_along(z, v)?;
    let sv = flow.second_variation_along(z, v, method)?;
    let second = yv.dot(&sv.xi);
    Ok(OmegaResidual {
        in_omega: xv.norm() <= tols.rank_tol && second.abs() <= tols.omega_tol,
        first: xv,
        second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateCandidate {
    pub z: DVector<f64>,
    pub sigma_min: f64,
    /// Unit kernel direction, signed so that `omega_residual <= 0`.
    pub v: DVector<f64>,
    /// `(Y(0) v)ᵀ Ξ(0)`; NaN when the second variation was unavailable.
    pub omega_residual: f64,
    pub y: DVector<f64>,
    pub refined: bool,
    pub det: f64,
    /// Cost `W(z)` of the carrying extremal.
    pub cost: f64,
    /// Near-null basis (length > 1 only for near-multiple `σ_min`).
    pub basis: Vec<DVector<f64>>,
    /// Second residual for each basis vector.
    pub basis_residuals: Vec<f64>,
    /// True when `X(t)` has full rank for every sampled `t` in `(0, T]`.
    /// This is the usual sufficient-condition proxy for the extremal being
    /// a weak local minimizer, not a proof.
    pub jacobi_proxy: Option<bool>,
}

impl ConjugateCandidate {
    /// Both degenerate-set conditions hold for `v` or some basis vector.
    pub fn in_omega(&self, tols: &ConjugateTolerances) -> bool {
        let scale = 1.0 + self.sigma_min;
        let first_ok = self.sigma_min <= tols.rank_tol * scale || self.refined;
        first_ok
            && std::iter::once(self.omega_residual)
                .chain(self.basis_residuals.iter().copied())
                .any(|s| s.abs() <= tols.omega_tol)
    }

    /// Smallest `|second residual|` over `v` and the basis.
    pub fn min_abs_residual(&self) -> f64 {
        std::iter::once(self.omega_residual)
            .chain(self.basis_residuals.iter().copied())
            .filter(|s| s.is_finite())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub tols: ConjugateTolerances,
    pub method: SecondVariationMethod,
    pub jacobi_proxy: bool,
    pub max_bisections: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tols: ConjugateTolerances::default(),
            method: SecondVariationMethod::CentralFD,
            jacobi_proxy: true,
            max_bisections: 200,
        }
    }
}

/// Flow data at one grid node.
#[derive(Debug, Clone)]
pub struct NodeEval {
    pub z: DVector<f64>,
    pub status: ArcStatus,
    pub x_z: Option<DMatrix<f64>>,
    pub det: f64,
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub grid: Grid,
    pub nodes: Vec<NodeEval>,
    /// Sorted lexicographically by `z`.
    pub candidates: Vec<ConjugateCandidate>,
    pub escaped_nodes: Vec<usize>,
    /// Grid edges skipped because an endpoint escaped.
    pub skipped_edges: usize,
    /// Refinements abandoned because an interior point escaped or failed.
    pub failed_refinements: usize,
}

fn node_eval(flow: &Flow, z: DVector<f64>) -> Result<NodeEval> {
    let ep = flow.endpoint(&z, true)?;
    Ok(match &ep.jacobian {
        Some((x, _)) => NodeEval {
            det: x.determinant(),
            sigma_min: SingularSystem::of(x).smallest().0,
            x_z: Some(x.clone()),
            status: ep.status,
            z,
        },
        None => NodeEval {
            z,
            status: ep.status,
            x_z: None,
            det: f64::NAN,
            sigma_min: f64::NAN,
        },
    })
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Bisection on `det X(0)` along `[za, zb]`, given opposite signs at the ends.
fn bisect(
    flow: &Flow,
    za: &DVector<f64>,
    zb: &DVector<f64>,
    det_a: f64,
    opts: &SweepOptions,
) -> Result<(DVector<f64>, bool)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut sign_lo = det_a.signum();
    let dir = zb - za;
    let mut best = (za.clone(), f64::INFINITY);
    for _ in 0..opts.max_bisections {
        let s = 0.5 * (lo + hi);
        let z = za + &dir * s;
        let ep = flow.endpoint(&z, true)?.require_complete()?;
        let det = ep.x_z().determinant();
        if det.abs() < best.1 {
            best = (z, det.abs());
        }
        if det.abs() <= opts.tols.det_tol || (hi - lo) * dir.norm() <= 1e-15 * (1.0 + za.norm()) {
            break;
        }
        if det.signum() == sign_lo {
            lo = s;
            sign_lo = det.signum();
        } else {
            hi = s;
        }
    }
    let refined = best.1 <= opts.tols.det_tol;
    Ok((best.0, refined))
}

/// Build the full candidate record at `z`.
pub fn candidate_at(flow: &Flow, z: &DVector<f64>, refined: bool, opts: &SweepOptions) -> Result<ConjugateCandidate> {
    let ep: Endpoint = flow.endpoint(z, true)?.require_complete()?;
    let rank = rank_from_matrix(ep.x_z(), &opts.tols);
    let second = |v: &DVector<f64>| -> Result<f64> {
        match omega_psi_residual(flow, z, v, opts.method, &opts.tols) {
            Ok(r) => Ok(r.second),
            Err(Error::EscapedNeighborhood) | Err(Error::Escaped { .. }) => Ok(f64::NAN),
            Err(e) => Err(e),
        }
    };
    // The residual is odd in `v` and `v` is only defined up to sign, so
    // orient each direction to make its residual non-positive.
    let oriented = |v: DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let s = second(&v)?;
        Ok(if s > 0.0 { (-v, -s) } else { (v, s) })
    };
    let (v, omega_residual) = oriented(rank.v)?;
    let (basis, basis_residuals): (Vec<_>, Vec<_>) = if rank.basis.len() > 1 {
        rank.basis
            .into_iter()
            .map(oriented)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    let jacobi_proxy = if opts.jacobi_proxy {
        let (_, bundle) = flow.integrate_variational(z)?;
        Some(
            bundle
                .t
                .iter()
                .zip(&bundle.x_z)
                .filter(|(t, _)| **t > 0.0)
                .all(|(_, x)| !rank_from_matrix(x, &opts.tols).conjugate),
        )
    } else {
        None
    };
    Ok(ConjugateCandidate {
        z: z.clone(),
        sigma_min: rank.sigma_min,
        v,
        omega_residual,
        y: ep.x0.clone(),
        refined,
        det: ep.x_z().determinant(),
        cost: ep.cost(),
        basis,
        basis_residuals,
        jacobi_proxy,
    })
}

/// Scan `grid` for sign changes of `det X(0)` along grid edges and for
/// nodes with small `σ_min`; refine sign changes by bisection.
pub fn sweep_locus(flow: &Flow, grid: &Grid, opts: &SweepOptions) -> Result<SweepResult> {
    check_dim(flow.n(), grid.dim(), "sweep grid")?;
    let nodes: Vec<NodeEval> = grid
        .points()
        .into_par_iter()
        .map(|z| node_eval(flow, z))
        .collect::<Result<_>>()?;
    let escaped_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| !nodes[i].status.is_complete()).collect();

    enum Seed {
        Node(usize, bool),
        Edge(usize, usize),
    }
    let mut seeds = Vec::new();
    let mut skipped_edges = 0;
    for (i, node) in nodes.iter().enumerate() {
        if let Some(x) = &node.x_z {
            if node.det.abs() <= opts.tols.det_tol {
                seeds.push(Seed::Node(i, true));
            } else if node.sigma_min <= opts.tols.rank_tol * (1.0 + x.norm()) {
                seeds.push(Seed::Node(i, false));
            }
        }
        for axis in 0..grid.dim() {
            let Some(j) = grid.forward(i, axis) else { continue };
            let other = &nodes[j];
            if !node.status.is_complete() || !other.status.is_complete() {
                skipped_edges += 1;
                continue;
            }
            let (a, b) = (node.det, other.det);
            if a.abs() > opts.tols.det_tol && b.abs() > opts.tols.det_tol && a * b < 0.0 {
                seeds.push(Seed::Edge(i, j));
            }
        }
    }

    let refined: Vec<Result<Option<ConjugateCandidate>>> = seeds
        .par_iter()
        .map(|seed| {
            let (z, refined) = match seed {
                Seed::Node(i, r) => (nodes[*i].z.clone(), *r),
                Seed::Edge(i, j) => match bisect(flow, &nodes[*i].z, &nodes[*j].z, nodes[*i].det, opts) {
                    Ok(v) => v,
                    Err(Error::Escaped { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                },
            };
            match candidate_at(flow, &z, refined, opts) {
                Ok(c) => Ok(Some(c)),
                Err(Error::Escaped { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut candidates = Vec::new();
    let mut failed_refinements = 0;
    for r in refined {
        match r? {
            Some(c) => candidates.push(c),
            None => failed_refinements += 1,
        }
    }
    candidates.sort_by(|a, b| lex_cmp(&a.z, &b.z));
    candidates.dedup_by(|a, b| (&a.z - &b.z).norm() <= 1e-12 * (1.0 + b.z.norm()));
    Ok(SweepResult {
        grid: grid.clone(),
        nodes,
        candidates,
        escaped_nodes,
        skipped_edges,
        failed_refinements,
    })
}

/// Candidates whose extremal attains the smallest cost among all
/// discovered extremals reaching the same initial point. Optimality is
/// relative to the extremal set found by `reach`.
pub fn gamma_psi_points<F>(candidates: &[ConjugateCandidate], reach: F, tie_tol: f64) -> Result<Vec<ConjugateCandidate>>
where
    F: Fn(&DVector<f64>) -> Result<ReachSolution>,
{
    let mut out = Vec::new();
    for c in candidates {
        let best = match reach(&c.y) {
            Ok(sol) => sol.value.min(c.cost),
            Err(Error::NoRootFound) => c.cost,
            Err(e) => return Err(e),
        };
        if c.cost <= best + tie_tol {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// `locus.csv`: `z1..zn,sigma_min,v1..vn,omega_residual,y1..yn`.
pub fn write_locus_csv<W: Write>(candidates: &[ConjugateCandidate], n: usize, mut w: W) -> std::io::Result<()> {
    let mut header: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
    header.push("sigma_min".into());
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.push("omega_residual".into());
    header.extend((1..=n).map(|i| format!("y{i}")));
    writeln!(w, "{}", header.join(","))?;
    for c in candidates {
        let mut row: Vec<String> = c.z.iter().map(|v| format!("{v:?}")).collect();
        row.push(format!("{:?}", c.sigma_min));
        row.extend(c.v.iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", c.omega_residual));
        row.extend(c.y.iter().map(|v| format!("{v:?}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::catalog;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_3;

    fn cos_flow() -> Flow {
        let e = catalog::single_integrator_cos();
        Flow::new(e.problem, e.terminal)
    }

    #[test]
    fn rank_test_matches_closed_form() {
        let f = cos_flow();
        for z in [-1.3, 0.0, 0.7, 2.2] {
            let r = rank_test(&f, &DVector::from_element(1, z), &ConjugateTolerances::default()).unwrap();
            assert_relative_eq!(r.sigma_min, (1.0 - 2.0 * f64::cos(z)).abs(), epsilon = 1e-9);
            assert!(!r.conjugate);
        }
    }

    #[test]
    fn omega_residual_at_pi_over_three() {
        let f = cos_flow();
        let r = omega_psi_residual(
            &f,
            &DVector::from_element(1, FRAC_PI_3),
            &DVector::from_element(1, 1.0),
            SecondVariationMethod::CentralFD,
            &ConjugateTolerances::default(),
        )
        .unwrap();
        assert!(r.first[0].abs() < 1e-9);
        assert_relative_eq!(r.second, -(3f64.sqrt()) / 2.0, epsilon = 1e-6);
        assert!(!r.in_omega);
        assert_eq!(r.as_vector().len(), 2);
    }

    #[test]
    fn zero_terminal_cost_has_no_candidates() {
        let e = catalog::single_integrator(2);
        let f = Flow::new(e.problem, e.terminal);
        let g = Grid::cube(2, -1.0, 1.0, 5).unwrap();
        let s = sweep_locus(&f, &g, &SweepOptions::default()).unwrap();
        assert!(s.candidates.is_empty());
        assert!(gamma_psi_points(&s.candidates, |_| Err(Error::NoRootFound), 1e-8)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn locus_csv_header() {
        let mut buf = Vec::new();
        write_locus_csv(&[], 2, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "z1,z2,sigma_min,v1,v2,omega_residual,y1,y2"
        );
    }
}
