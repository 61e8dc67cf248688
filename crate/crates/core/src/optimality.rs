//! Extremal costs, enumeration of extremals reaching a given initial point,
//! multiplicity of minimizers and the value function.
//!
//! All optimality statements are relative to the set of extremals that the
//! multi-start search discovers.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{ArcStatus, Flow};
use crate::grid::{clusters, Grid};
use crate::linalg::SingularSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalRecord {
    pub z: DVector<f64>,
    /// `x(0, z)`, or the state at the escape time.
    pub y: DVector<f64>,
    /// `+∞` for escaped arcs.
    pub w: f64,
    pub status: ArcStatus,
}

/// `W(z) = ∫_0^T L(x, u) dt + ψ(z)`.
pub fn trajectory_cost(flow: &Flow, z: &DVector<f64>) -> Result<ExtremalRecord> {
    let ep = flow.endpoint(z, false)?;
    Ok(ExtremalRecord {
        w: ep.cost(),
        y: ep.x0,
        z: z.clone(),
        status: ep.status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachOptions {
    pub reach_tol: f64,
    pub tie_tol: f64,
    /// Roots closer than `dedup_factor (1 + |z|)` are merged.
    pub dedup_factor: f64,
    pub random_starts: usize,
    pub max_newton: usize,
    /// Newton steps taken with a frozen Jacobian before refreshing it.
    pub freeze: usize,
    /// Seeds are atlas nodes whose image lies within this many local
    /// image-cell sizes of the target.
    pub seed_cells: f64,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            reach_tol: 1e-9,
            tie_tol: 1e-8,
            dedup_factor: 1e-6,
            random_starts: 8,
            max_newton: 60,
            freeze: 3,
            seed_cells: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AtlasNode {
    pub z: DVector<f64>,
    pub y: Option<DVector<f64>>,
    pub w: f64,
    /// Largest distance from `y` to the images of complete grid neighbours.
    pub image_cell: f64,
}

/// Terminal points on a grid together with their images `x(0, z)`.
#[derive(Debug, Clone)]
pub struct ExtremalAtlas {
    pub grid: Grid,
    pub nodes: Vec<AtlasNode>,
}

impl ExtremalAtlas {
    pub fn build(flow: &Flow, grid: &Grid) -> Result<Self> {
        check_dim(flow.n(), grid.dim(), "atlas grid")?;
        let records: Vec<ExtremalRecord> = grid
            .points()
            .into_par_iter()
            .map(|z| trajectory_cost(flow, &z))
            .collect::<Result<_>>()?;
        let nodes = (0..records.len())
            .map(|i| {
                let r = &records[i];
                let y = r.status.is_complete().then(|| r.y.clone());
                let image_cell = match &y {
                    Some(y) => grid
                        .neighbours(i)
                        .into_iter()
                        .filter(|&j| records[j].status.is_complete())
                        .map(|j| (&records[j].y - y).norm())
                        .fold(0.0, f64::max),
                    None => 0.0,
                };
                AtlasNode {
                    z: r.z.clone(),
                    y,
                    w: r.w,
                    image_cell,
                }
            })
            .collect();
        Ok(ExtremalAtlas {
            grid: grid.clone(),
            nodes,
        })
    }

    /// Nodes whose image lies within `cells` local image-cell sizes of `y`.
    pub fn seeds_near(&self, y: &DVector<f64>, cells: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| match &n.y {
                Some(ny) => (ny - y).norm() <= cells * n.image_cell,
                None => false,
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachRoot {
    pub z: DVector<f64>,
    pub x0: DVector<f64>,
    pub p0: DVector<f64>,
    pub w: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSolution {
    pub y: DVector<f64>,
    /// Sorted by cost, ties broken lexicographically in `z`.
    pub roots: Vec<ReachRoot>,
    /// `V(y)`, the smallest discovered cost.
    pub value: f64,
    /// Indices into `roots` within `tie_tol` of the minimum.
    pub minimizers: Vec<usize>,
    pub multiplicity: bool,
    pub starts: usize,
}

/// Derive an independent stream seed from a global seed and an index.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut x = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn solve_newton_step(j: &DMatrix<f64>, f: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(d) = j.clone().lu().solve(f) {
        if d.iter().all(|v| v.is_finite()) {
            return Some(-d);
        }
    }
    let svd = j.clone().svd(true, true);
    let eps = 1e-14 * svd.singular_values.max();
    svd.solve(f, eps).ok().map(|d| -d)
}

/// Damped Newton on `F(z) = x(0, z) - y` with a periodically frozen Jacobian.
fn newton(flow: &Flow, y: &DVector<f64>, z0: &DVector<f64>, opts: &ReachOptions) -> Result<Option<DVector<f64>>> {
    let mut z = z0.clone();
    let ep = flow.endpoint(&z, true)?;
    if !ep.status.is_complete() {
        return Ok(None);
    }
    let mut f = &ep.x0 - y;
    let mut jac = ep.x_z().clone();
    let mut age = 0;
    for _ in 0..opts.max_newton {
        if f.norm() <= opts.reach_tol {
            return Ok(Some(z));
        }
        let Some(d) = solve_newton_step(&jac, &f) else {
            return Ok(None);
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial = &z + &d * lambda;
            let ep = flow.endpoint(&trial, false)?;
            if ep.status.is_complete() {
                let ft = &ep.x0 - y;
                if ft.norm() < f.norm() {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((zn, fnew)) => {
                z = zn;
                f = fnew;
                age += 1;
                if age >= opts.freeze {
                    let ep = flow.endpoint(&z, true)?;
                    jac = ep.x_z().clone();
                    age = 0;
                }
            }
            None if age > 0 => {
                let ep = flow.endpoint(&z, true)?;
                jac = ep.x_z().clone();
                age = 0;
            }
            None => return Ok(None),
        }
    }
    Ok((f.norm() <= opts.reach_tol).then_some(z))
}

/// All discovered extremals with `x(0, z) = y`, ranked by cost.
pub fn reach(
    flow: &Flow,
    y: &DVector<f64>,
    atlas: &ExtremalAtlas,
    opts: &ReachOptions,
    seed: u64,
) -> Result<ReachSolution> {
    check_dim(flow.n(), y.len(), "target y")?;
    let n = flow.n();
    let seeds = atlas.seeds_near(y, opts.seed_cells);
    let mut starts: Vec<DVector<f64>> = seeds.iter().map(|&i| atlas.nodes[i].z.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = &atlas.grid;
    for _ in 0..opts.random_starts {
        let start = if seeds.is_empty() {
            DVector::from_fn(n, |a, _| rng.gen_range(grid.lo[a]..=grid.hi[a]))
        } else {
            let base = &atlas.nodes[seeds[rng.gen_range(0..seeds.len())]].z;
            DVector::from_fn(n, |a, _| {
                let h = grid.spacing(a);
                base[a] + rng.gen_range(-h..=h)
            })
        };
        starts.push(start);
    }

    let mut found = Vec::new();
    for z0 in &starts {
        if let Some(z) = newton(flow, y, z0, opts)? {
            found.push(z);
        }
    }
    found.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut unique: Vec<DVector<f64>> = Vec::new();
    for z in found {
        let dup = unique
            .iter()
            .any(|u| (u - &z).norm() <= opts.dedup_factor * (1.0 + z.norm()));
        if !dup {
            unique.push(z);
        }
    }

    let mut roots = Vec::with_capacity(unique.len());
    for z in unique {
        let ep = flow.endpoint(&z, false)?;
        let residual = (&ep.x0 - y).norm();
        if ep.status.is_complete() && residual <= opts.reach_tol {
            roots.push(ReachRoot {
                w: ep.cost(),
                x0: ep.x0,
                p0: ep.p0,
                residual,
                z,
            });
        }
    }
    if roots.is_empty() {
        return Err(Error::NoRootFound);
    }
    roots.sort_by(|a, b| a.w.total_cmp(&b.w));
    let value = roots[0].w;
    let minimizers: Vec<usize> = (0..roots.len())
        .filter(|&i| roots[i].w <= value + opts.tie_tol)
        .collect();
    Ok(ReachSolution {
        y: y.clone(),
        multiplicity: minimizers.len() >= 2,
        roots,
        value,
        minimizers,
        starts: starts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNode {
    pub y: DVector<f64>,
    /// `None` when no extremal reaching `y` was found.
    pub value: Option<f64>,
    pub multiplicity: bool,
    pub count_roots: usize,
    pub minimizing_z: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueSummary {
    pub nodes: usize,
    pub no_root_nodes: usize,
    pub value_min: Option<f64>,
    pub value_max: Option<f64>,
    pub multiplicity_nodes: usize,
    /// Connected clusters of multiplicity nodes, as grid indices.
    pub clusters: Vec<Vec<usize>>,
    pub note: String,
}

/// `V(y)` and multiplicity flags on every node of `y_grid`.
pub fn value_function(
    flow: &Flow,
    y_grid: &Grid,
    atlas: &ExtremalAtlas,
    opts: &ReachOptions,
    seed: u64,
) -> Result<Vec<ValueNode>> {
    check_dim(flow.n(), y_grid.dim(), "value grid")?;
    y_grid
        .points()
        .into_par_iter()
        .enumerate()
        .map(
            |(i, y)| match reach(flow, &y, atlas, opts, stream_seed(seed, i as u64)) {
                Ok(sol) => Ok(ValueNode {
                    value: Some(sol.value),
                    multiplicity: sol.multiplicity,
                    count_roots: sol.roots.len(),
                    minimizing_z: sol.minimizers.iter().map(|&k| sol.roots[k].z.clone()).collect(),
                    y,
                }),
                Err(Error::NoRootFound) => Ok(ValueNode {
                    y,
                    value: None,
                    multiplicity: false,
                    count_roots: 0,
                    minimizing_z: Vec::new(),
                }),
                Err(e) => Err(e),
            },
        )
        .collect()
}

pub fn summarize_values(y_grid: &Grid, nodes: &[ValueNode]) -> ValueSummary {
    let values: Vec<f64> = nodes.iter().filter_map(|n| n.value).collect();
    let flags: Vec<bool> = nodes.iter().map(|n| n.multiplicity).collect();
    ValueSummary {
        nodes: nodes.len(),
        no_root_nodes: nodes.iter().filter(|n| n.value.is_none()).count(),
        value_min: values.iter().copied().reduce(f64::min),
        value_max: values.iter().copied().reduce(f64::max),
        multiplicity_nodes: flags.iter().filter(|&&f| f).count(),
        clusters: clusters(y_grid, &flags),
        note: "relative to discovered extremal set".into(),
    }
}

fn value_header(n: usize, tail: &[&str]) -> String {
    let mut h: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
    h.extend(tail.iter().map(|s| s.to_string()));
    h.join(",")
}

fn value_row(node: &ValueNode) -> Vec<String> {
    let mut row: Vec<String> = node.y.iter().map(|v| format!("{v:?}")).collect();
    row.push(format!("{:?}", node.value.unwrap_or(f64::NAN)));
    row
}

/// `value.csv`: `y1..yn,V,mult,count_roots`.
pub fn write_value_csv<W: Write>(nodes: &[ValueNode], n: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", value_header(n, &["V", "mult", "count_roots"]))?;
    for node in nodes {
        let mut row = value_row(node);
        row.push(u8::from(node.multiplicity).to_string());
        row.push(node.count_roots.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// `vpsi.csv`: multiplicity nodes only, `y1..yn,V,count_minimizers`.
pub fn write_vpsi_csv<W: Write>(nodes: &[ValueNode], n: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", value_header(n, &["V", "count_minimizers"]))?;
    for node in nodes.iter().filter(|n| n.multiplicity) {
        let mut row = value_row(node);
        row.push(node.minimizing_z.len().to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResidual {
    pub z1: DVector<f64>,
    pub z2: DVector<f64>,
    /// `(x(0,z1) - x(0,z2), W(z1) - W(z2))`.
    pub phi: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

/// `∇W(z) = p(0, z)ᵀ x_z(0, z)` as a row vector.
pub fn cost_gradient(flow: &Flow, z: &DVector<f64>) -> Result<DVector<f64>> {
    let ep = flow.endpoint(z, true)?.require_complete()?;
    Ok(ep.x_z().transpose() * &ep.p0)
}

pub fn pair_residual(flow: &Flow, z1: &DVector<f64>, z2: &DVector<f64>) -> Result<PairResidual> {
    check_dim(flow.n(), z1.len(), "z1")?;
    check_dim(flow.n(), z2.len(), "z2")?;
    if z1 == z2 {
        return Err(Error::InvalidArgument("pair residual needs z1 != z2".into()));
    }
    let n = flow.n();
    let e1 = flow.endpoint(z1, true)?.require_complete()?;
    let e2 = flow.endpoint(z2, true)?.require_complete()?;
    let mut phi = DVector::zeros(n + 1);
    phi.rows_mut(0, n).copy_from(&(&e1.x0 - &e2.x0));
    phi[n] = e1.cost() - e2.cost();
    let g1 = e1.x_z().transpose() * &e1.p0;
    let g2 = e2.x_z().transpose() * &e2.p0;
    let mut jac = DMatrix::zeros(n + 1, 2 * n);
    jac.view_mut((0, 0), (n, n)).copy_from(e1.x_z());
    jac.view_mut((0, n), (n, n)).copy_from(&(-e2.x_z()));
    for j in 0..n {
        jac[(n, j)] = g1[j];
        jac[(n, n + j)] = -g2[j];
    }
    let svd = SingularSystem::of(&jac);
    Ok(PairResidual {
        z1: z1.clone(),
        z2: z2.clone(),
        phi,
        rank: svd.rank(1e-8),
        singular_values: svd.values,
        jacobian: jac,
    })
}
