use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use pmp_core::bounds::{ladder, BoundReport, SAFETY};
use pmp_core::conjugate::{gamma_psi_points, sweep_locus, write_locus_csv, ConjugateCandidate};
use pmp_core::flow::{ArcStatus, ArcSummary, Flow};
use pmp_core::grid::Grid;
use pmp_core::optimality::{
    reach, summarize_values, value_function, write_value_csv, write_vpsi_csv, ExtremalAtlas, ReachSolution,
};
use pmp_core::perturbation::{perturb_until_generic, theta_dim, transversality_rank};
use pmp_core::Error;

use crate::config::{grid, point, RunConfig};
use crate::error::CliError;
use crate::output::{Meta, Sink};

pub const RELATIVE_NOTE: &str = "relative to discovered extremal set";

pub struct Context {
    pub cfg: RunConfig,
    pub flow: Flow,
    pub sink: Sink,
}

impl Context {
    fn n(&self) -> usize {
        self.flow.n()
    }

    fn meta<'a>(&'a self, command: &'a str) -> Meta<'a> {
        Meta {
            command,
            seed: self.cfg.run.seed,
            tolerances: &self.cfg.tolerances,
            flow: &self.cfg.flow,
        }
    }

    fn atlas(&self) -> Result<ExtremalAtlas, CliError> {
        let g = &self.cfg.grid;
        let grid = grid(&g.atlas_lo, &g.atlas_hi, g.atlas_per_axis, self.n(), "atlas box")?;
        Ok(ExtremalAtlas::build(&self.flow, &grid)?)
    }

    fn z_grid(&self) -> Result<Grid, CliError> {
        let g = &self.cfg.grid;
        grid(&g.z_lo, &g.z_hi, g.z_per_axis, self.n(), "z box")
    }
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(|v| format!("{v:?}")).collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

#[derive(Serialize)]
struct SolveOut {
    arc: ArcSummary,
    tau: Option<f64>,
    hamiltonian_drift: f64,
    ode_residual: f64,
}

pub fn solve(ctx: &Context) -> Result<u8, CliError> {
    let z = point(&ctx.cfg.solve.z, ctx.n(), "solve.z")?;
    let arc = ctx.flow.integrate_backward(&z)?;
    ctx.sink.csv("arc.csv", |w| arc.write_csv(w))?;
    let tau = match arc.status {
        ArcStatus::Escaped { tau } => Some(tau),
        ArcStatus::Complete => None,
    };
    let out = SolveOut {
        arc: arc.summary(),
        tau,
        hamiltonian_drift: ctx.flow.hamiltonian_drift(&arc)?,
        ode_residual: ctx.flow.ode_residual(&arc)?,
    };
    ctx.sink.json("arc.json", &ctx.meta("solve"), &out)?;
    match tau {
        Some(tau) => {
            eprintln!("arc escaped at t = {tau:?}");
            Ok(3)
        }
        None => Ok(0),
    }
}

pub fn figure1(ctx: &Context) -> Result<u8, CliError> {
    if ctx.n() != 1 {
        return Err(CliError::Config("figure1 needs a scalar problem".into()));
    }
    let zs = ctx.cfg.figure1.points();
    let arcs: Vec<_> = zs
        .par_iter()
        .map(|&z| ctx.flow.integrate_backward(&nalgebra::DVector::from_element(1, z)))
        .collect();
    let mut index = Vec::new();
    for (k, (z, arc)) in zs.iter().zip(&arcs).enumerate() {
        let file = format!("traj_{k:03}.csv");
        let (status, tau, cost) = match arc {
            Ok(arc) => {
                ctx.sink.csv(&format!("figure1/{file}"), |w| arc.write_csv(w))?;
                match arc.status {
                    ArcStatus::Complete => ("complete", f64::NAN, arc.cost()),
                    ArcStatus::Escaped { tau } => ("escaped", tau, f64::INFINITY),
                }
            }
            Err(e) => {
                eprintln!("figure1: z = {z:?}: {e}");
                ("error", f64::NAN, f64::NAN)
            }
        };
        let file = if status == "error" { String::new() } else { file };
        index.push(format!("{k},{z:?},{status},{tau:?},{cost:?},{file}"));
    }
    ctx.sink.csv("figure1/index.csv", |w| {
        writeln!(w, "index,z,status,tau,cost,file")?;
        index.iter().try_for_each(|row| writeln!(w, "{row}"))
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct ConjugateOut<'a> {
    candidates: &'a [ConjugateCandidate],
    gamma_psi: Vec<ConjugateCandidate>,
    nodes: usize,
    escaped_nodes: usize,
    skipped_edges: usize,
    failed_refinements: usize,
    note: &'static str,
}

pub fn conjugate(ctx: &Context) -> Result<u8, CliError> {
    let sweep = sweep_locus(&ctx.flow, &ctx.z_grid()?, &ctx.cfg.sweep_options())?;
    let atlas = ctx.atlas()?;
    let opts = ctx.cfg.reach_options();
    let gamma = gamma_psi_points(
        &sweep.candidates,
        |y| reach(&ctx.flow, y, &atlas, &opts, ctx.cfg.run.seed),
        opts.tie_tol,
    )?;
    ctx.sink
        .csv("locus.csv", |w| write_locus_csv(&sweep.candidates, ctx.n(), w))?;
    let out = ConjugateOut {
        candidates: &sweep.candidates,
        gamma_psi: gamma,
        nodes: sweep.nodes.len(),
        escaped_nodes: sweep.escaped_nodes.len(),
        skipped_edges: sweep.skipped_edges,
        failed_refinements: sweep.failed_refinements,
        note: RELATIVE_NOTE,
    };
    ctx.sink.json("conjugate.json", &ctx.meta("conjugate"), &out)?;
    Ok(0)
}

#[derive(Serialize)]
struct ReachOut {
    y: Vec<f64>,
    solution: Option<ReachSolution>,
    note: &'static str,
}

pub fn reach_cmd(ctx: &Context) -> Result<u8, CliError> {
    let n = ctx.n();
    let y = point(&ctx.cfg.reach.y, n, "reach.y")?;
    let atlas = ctx.atlas()?;
    let solution = match reach(&ctx.flow, &y, &atlas, &ctx.cfg.reach_options(), ctx.cfg.run.seed) {
        Ok(s) => Some(s),
        Err(Error::NoRootFound) => None,
        Err(e) => return Err(e.into()),
    };
    ctx.sink.csv("reach.csv", |w| {
        let mut header = names("z", n);
        header.extend(names("x0_", n));
        header.extend(names("p0_", n));
        header.extend(["W", "residual", "minimizer"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        if let Some(sol) = &solution {
            for (k, r) in sol.roots.iter().enumerate() {
                let mut row = fmt_row(r.z.iter().copied());
                row.extend(fmt_row(r.x0.iter().copied()));
                row.extend(fmt_row(r.p0.iter().copied()));
                row.extend(fmt_row([r.w, r.residual]));
                row.push(u8::from(sol.minimizers.contains(&k)).to_string());
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    })?;
    let out = ReachOut {
        y: y.iter().copied().collect(),
        solution,
        note: RELATIVE_NOTE,
    };
    ctx.sink.json("reach.json", &ctx.meta("reach"), &out)?;
    Ok(0)
}

pub fn value(ctx: &Context) -> Result<u8, CliError> {
    let n = ctx.n();
    let g = &ctx.cfg.grid;
    let y_grid = grid(&g.y_lo, &g.y_hi, g.y_per_axis, n, "y box")?;
    let atlas = ctx.atlas()?;
    let nodes = value_function(&ctx.flow, &y_grid, &atlas, &ctx.cfg.reach_options(), ctx.cfg.run.seed)?;
    ctx.sink.csv("value.csv", |w| write_value_csv(&nodes, n, w))?;
    ctx.sink.csv("vpsi.csv", |w| write_vpsi_csv(&nodes, n, w))?;
    ctx.sink
        .json("value.json", &ctx.meta("value"), &summarize_values(&y_grid, &nodes))?;
    Ok(0)
}

#[derive(Serialize)]
struct BoundsOut {
    reports: Vec<BoundReport>,
    safety_factor: f64,
    note: &'static str,
}

pub fn bounds(ctx: &Context) -> Result<u8, CliError> {
    let reports = ladder(&ctx.flow.problem, ctx.flow.psi.as_ref(), &ctx.cfg.bounds.radii)?;
    let out = BoundsOut {
        reports,
        safety_factor: 1.0 + SAFETY,
        note: "alpha1 and beta2 are explicit Gronwall-type majorants, one admissible choice; \
               suprema are sampled and inflated; bounds are made monotone in r by a running maximum",
    };
    ctx.sink.json("bounds.json", &ctx.meta("bounds"), &out)?;
    Ok(0)
}

#[derive(Serialize)]
struct CandidateRank {
    z: Vec<f64>,
    v: Vec<f64>,
    sigma_min: f64,
    omega_residual: f64,
    rank: Option<usize>,
    expected: usize,
    singular_values: Vec<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TransversalityOut {
    status: &'static str,
    seed: u64,
    draw: Option<usize>,
    draws_used: usize,
    nearest_violation: Option<f64>,
    scale: f64,
    budget: f64,
    norm_bound: Option<f64>,
    inner_radius: f64,
    outer_radius: f64,
    centers: Vec<Vec<f64>>,
    theta: Vec<f64>,
    candidates: Vec<CandidateRank>,
    note: &'static str,
}

const BUDGET_NOTE: &str = "norm_bound is a sampled C4 estimate of the summed bumps for |theta| <= scale";

pub fn perturb(ctx: &Context) -> Result<u8, CliError> {
    let n = ctx.n();
    let opts = ctx.cfg.perturb_options();
    let mut out = TransversalityOut {
        status: "generic",
        seed: opts.seed,
        draw: None,
        draws_used: 0,
        nearest_violation: None,
        scale: opts.scale,
        budget: opts.budget,
        norm_bound: None,
        inner_radius: opts.cutoff.inner,
        outer_radius: opts.cutoff.outer,
        centers: Vec::new(),
        theta: Vec::new(),
        candidates: Vec::new(),
        note: BUDGET_NOTE,
    };
    let result = match perturb_until_generic(&ctx.flow, &ctx.z_grid()?, &opts) {
        Ok(r) => r,
        Err(Error::BudgetExhausted { draws, nearest }) => {
            out.status = "budget_exhausted";
            out.draws_used = draws;
            out.nearest_violation = Some(nearest);
            ctx.sink.json("transversality.json", &ctx.meta("perturb"), &out)?;
            eprintln!("{}", Error::BudgetExhausted { draws, nearest });
            return Ok(4);
        }
        Err(e) => return Err(e.into()),
    };
    let perturbed = ctx.flow.with_terminal(std::sync::Arc::new(result.psi.clone()));
    let d = theta_dim(n);
    for c in &result.candidates {
        let cols: Vec<usize> = (0..result.centers.len())
            .filter(|&l| (&result.centers[l] - &c.z).norm() < opts.cutoff.outer)
            .flat_map(|l| l * d..(l + 1) * d)
            .collect();
        let rank = transversality_rank(&perturbed, &c.z, &c.v, &result.psi, None, Some(&cols));
        out.candidates.push(CandidateRank {
            z: c.z.iter().copied().collect(),
            v: c.v.iter().copied().collect(),
            sigma_min: c.sigma_min,
            omega_residual: c.omega_residual,
            rank: rank.as_ref().ok().map(|r| r.rank),
            expected: n + 1,
            singular_values: rank.as_ref().map(|r| r.singular_values.clone()).unwrap_or_default(),
            error: rank.err().map(|e| e.to_string()),
        });
    }
    out.draw = Some(result.draw);
    out.draws_used = result.draws_used;
    out.norm_bound = Some(result.norm_bound);
    out.centers = result.centers.iter().map(|c| c.iter().copied().collect()).collect();
    out.theta = result.psi.theta().iter().copied().collect();
    ctx.sink.json("transversality.json", &ctx.meta("perturb"), &out)?;
    Ok(0)
}
