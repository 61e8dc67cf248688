//! Backward extremal flow `ẋ = H_p`, `ṗ = -H_x` from `x(T) = z`,
//! `p(T) = ∇ψ(z)`, with first- and second-order variational equations.
//!
//! Along an arc write `A = H_xx`, `B = ∂H_p/∂x`, `C = H_pp`. A tangent
//! column `(ξ, π)` obeys `ξ̇ = Bξ + Cπ`, `π̇ = -Aξ - Bᵀπ`. The running
//! cost is carried as one extra state component so that every arc reports
//! its cost at the accuracy of the integrator.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ode::{self, Control, DenseSegment, OdeSystem, PointKind, StepControl};
use crate::problem::{Problem, TerminalCost};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Integration stops once `|x| + |p|` reaches this radius.
    pub escape_radius: f64,
    /// Equally spaced dense-output samples on `[0, T]`, endpoints included.
    pub samples: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
            escape_radius: 1e3,
            samples: 512,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        let ok =
            self.rtol > 0.0 && self.atol > 0.0 && self.max_step > 0.0 && self.escape_radius > 0.0 && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("flow options {self:?}")))
        }
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArcStatus {
    Complete,
    Escaped { tau: f64 },
}

impl ArcStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, ArcStatus::Complete)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcSample {
    pub t: f64,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub u: DVector<f64>,
    pub h: f64,
}

/// One backward extremal; samples are ordered by increasing `t`.
#[derive(Debug, Clone)]
pub struct ExtremalArc {
    pub z: DVector<f64>,
    pub terminal: String,
    pub horizon: f64,
    pub samples: Vec<ArcSample>,
    pub status: ArcStatus,
    /// `∫ L` over the integrated part of the arc.
    pub running_cost: f64,
    pub terminal_cost: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    segments: Vec<DenseSegment>,
}

/// JSON sidecar written next to an arc CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArcSummary {
    pub z: Vec<f64>,
    pub terminal: String,
    #[serde(flatten)]
    pub status: ArcStatus,
    pub cost: Option<f64>,
    pub samples: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl ExtremalArc {
    pub fn first(&self) -> &ArcSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &ArcSample {
        self.samples.last().expect("arcs carry at least the terminal sample")
    }

    /// `W(z) = ∫_0^T L + ψ(z)`; `+∞` on escaped arcs.
    pub fn cost(&self) -> f64 {
        match self.status {
            ArcStatus::Complete => self.running_cost + self.terminal_cost,
            ArcStatus::Escaped { .. } => f64::INFINITY,
        }
    }

    pub fn dense_segments(&self) -> &[DenseSegment] {
        &self.segments
    }

    pub fn summary(&self) -> ArcSummary {
        ArcSummary {
            z: self.z.iter().copied().collect(),
            terminal: self.terminal.clone(),
            status: self.status,
            cost: self.status.is_complete().then(|| self.cost()),
            samples: self.samples.len(),
            accepted_steps: self.accepted_steps,
            rejected_steps: self.rejected_steps,
        }
    }

    /// CSV with header `t,x1..xn,p1..pn,u1..um,H`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.z.len();
        let m = self.samples.first().map(|s| s.u.len()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("H".to_string());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![format!("{:?}", s.t)];
            row.extend(s.x.iter().map(|v| format!("{v:?}")));
            row.extend(s.p.iter().map(|v| format!("{v:?}")));
            row.extend(s.u.iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", s.h));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `X(t) = x_z(t, z)` and `Y(t) = p_z(t, z)` on the samples of an arc.
#[derive(Debug, Clone)]
pub struct VariationalBundle {
    pub t: Vec<f64>,
    pub x_z: Vec<DMatrix<f64>>,
    pub p_z: Vec<DMatrix<f64>>,
}

impl VariationalBundle {
    /// `X(0)`.
    pub fn x0(&self) -> &DMatrix<f64> {
        &self.x_z[0]
    }

    /// `Y(0)`.
    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p_z[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecondVariationMethod {
    /// Central differences of `X(0)v` along `v` with one Richardson step.
    CentralFD,
    /// The variational system differentiated once more along `v`.
    DirectionalODE,
}

/// `Ξ(0) = x_zz(0,z)(v⊗v)` and `Π(0) = p_zz(0,z)(v⊗v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariation {
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub xi: DVector<f64>,
    pub pi: DVector<f64>,
    pub method: SecondVariationMethod,
}

/// Flow map data at `t = 0` (or at the escape time).
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub z: DVector<f64>,
    pub status: ArcStatus,
    pub x0: DVector<f64>,
    pub p0: DVector<f64>,
    pub running_cost: f64,
    pub terminal_cost: f64,
    /// `(X(0), Y(0))` when requested.
    pub jacobian: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Endpoint {
    pub fn cost(&self) -> f64 {
        match self.status {
            ArcStatus::Complete => self.running_cost + self.terminal_cost,
            ArcStatus::Escaped { .. } => f64::INFINITY,
        }
    }

    pub fn require_complete(self) -> Result<Self> {
        match self.status {
            ArcStatus::Complete => Ok(self),
            ArcStatus::Escaped { tau } => Err(Error::Escaped { tau }),
        }
    }

    pub fn x_z(&self) -> &DMatrix<f64> {
        &self.jacobian.as_ref().expect("endpoint computed without Jacobian").0
    }

    pub fn p_z(&self) -> &DMatrix<f64> {
        &self.jacobian.as_ref().expect("endpoint computed without Jacobian").1
    }
}

/// Extended system: state, costate, accumulated cost, `cols` tangent
/// columns and, optionally, one second-order pair driven by column 0.
struct ExtremalSystem<'a> {
    problem: &'a Problem,
    n: usize,
    cols: usize,
    second: bool,
}

impl ExtremalSystem<'_> {
    fn tangent_offset(&self, k: usize) -> usize {
        2 * self.n + 1 + 2 * self.n * k
    }
}

fn slice_vec(y: &[f64], start: usize, len: usize) -> DVector<f64> {
    DVector::from_column_slice(&y[start..start + len])
}

fn put(dy: &mut [f64], start: usize, v: &DVector<f64>) {
    dy[start..start + v.len()].copy_from_slice(v.as_slice());
}

impl OdeSystem for ExtremalSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.n + 1 + 2 * self.n * (self.cols + usize::from(self.second))
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.n;
        let x = slice_vec(y, 0, n);
        let p = slice_vec(y, n, n);
        if self.cols == 0 && !self.second {
            let first = self.problem.hamiltonian_first(&x, &p)?;
            put(dy, 0, &first.h_p);
            put(dy, n, &(-first.h_x));
            dy[2 * n] = -self.problem.running_cost.value(&x, &first.u_star);
            return Ok(());
        }
        let ev = self.problem.hamiltonian_derivatives(&x, &p)?;
        put(dy, 0, &ev.h_p);
        put(dy, n, &(-&ev.h_x));
        dy[2 * n] = -self.problem.running_cost.value(&x, &ev.u_star);
        let bt = ev.h_px.transpose();
        let tangent = |k: usize| {
            let o = self.tangent_offset(k);
            (slice_vec(y, o, n), slice_vec(y, o + n, n))
        };
        for k in 0..self.cols {
            let (xi, pi) = tangent(k);
            let o = self.tangent_offset(k);
            put(dy, o, &(&ev.h_px * &xi + &ev.h_pp * &pi));
            put(dy, o + n, &(-(&ev.h_xx * &xi) - &bt * &pi));
        }
        if self.second {
            let (a, b) = tangent(0);
            let (xi, pi) = tangent(self.cols);
            let d = self.problem.hamiltonian_third_directional(&x, &p, &a, &b)?;
            let o = self.tangent_offset(self.cols);
            put(dy, o, &(&ev.h_px * &xi + &ev.h_pp * &pi + &d.d_px * &a + &d.d_pp * &b));
            put(
                dy,
                o + n,
                &(-(&ev.h_xx * &xi) - &bt * &pi - &d.d_xx * &a - d.d_px.transpose() * &b),
            );
        }
        Ok(())
    }
}

struct Run {
    status: ArcStatus,
    y_end: Vec<f64>,
    records: Vec<(f64, Vec<f64>)>,
    segments: Vec<DenseSegment>,
    accepted: usize,
    rejected: usize,
}

/// A problem, a terminal cost and integrator settings.
#[derive(Clone)]
pub struct Flow {
    pub problem: Problem,
    pub psi: Arc<dyn TerminalCost>,
    pub opts: FlowOptions,
}

impl std::fmt::Debug for Flow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Flow")
            .field("problem", &self.problem)
            .field("psi", &self.psi.label())
            .field("opts", &self.opts)
            .finish()
    }
}

impl Flow {
    pub fn new(problem: Problem, psi: Arc<dyn TerminalCost>) -> Self {
        Flow {
            problem,
            psi,
            opts: FlowOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: FlowOptions) -> Self {
        self.opts = opts;
        self
    }

    /// Same problem and options with another terminal cost.
    pub fn with_terminal(&self, psi: Arc<dyn TerminalCost>) -> Self {
        Flow {
            problem: self.problem.clone(),
            psi,
            opts: self.opts,
        }
    }

    pub fn n(&self) -> usize {
        self.problem.state_dim()
    }

    pub fn horizon(&self) -> f64 {
        self.problem.horizon
    }

    fn check_z(&self, z: &DVector<f64>) -> Result<()> {
        check_dim(self.n(), z.len(), "terminal point z")?;
        check_dim(self.n(), self.psi.dim(), "terminal cost")
    }

    fn sample_times(&self) -> Vec<f64> {
        let k = self.opts.samples;
        let t = self.horizon();
        if k < 2 {
            return vec![0.0];
        }
        (0..k)
            .map(|i| t * (1.0 - i as f64 / (k - 1) as f64))
            .map(|s| s.max(0.0))
            .collect()
    }

    /// Integrate from `t = T` down to `t_end` with the given terminal tangent
    /// columns and optional second-order terminal data.
    fn run(
        &self,
        z: &DVector<f64>,
        q: &DVector<f64>,
        tangents: &[(DVector<f64>, DVector<f64>)],
        second: Option<&DVector<f64>>,
        t_end: f64,
        record: bool,
    ) -> Result<Run> {
        self.opts.validate()?;
        let n = self.n();
        let sys = ExtremalSystem {
            problem: &self.problem,
            n,
            cols: tangents.len(),
            second: second.is_some(),
        };
        let mut y0 = Vec::with_capacity(sys.dim());
        y0.extend(z.iter());
        y0.extend(q.iter());
        y0.push(0.0);
        for (xi, pi) in tangents {
            y0.extend(xi.iter());
            y0.extend(pi.iter());
        }
        if let Some(d3) = second {
            y0.extend(std::iter::repeat_n(0.0, n));
            y0.extend(d3.iter());
        }
        let samples = if record {
            self.sample_times().into_iter().filter(|&s| s >= t_end).collect()
        } else {
            Vec::new()
        };
        let nu = self.opts.escape_radius;
        let mut records = Vec::new();
        let mut escaped_at = None;
        let out = ode::integrate(
            &sys,
            self.horizon(),
            &y0,
            t_end,
            &self.opts.step_control(),
            &samples,
            if record { 2 * n + 1 } else { 0 },
            |t, y, _kind: PointKind| {
                if record {
                    records.push((t, y.to_vec()));
                }
                let radius = y[..n].iter().map(|v| v * v).sum::<f64>().sqrt()
                    + y[n..2 * n].iter().map(|v| v * v).sum::<f64>().sqrt();
                if radius >= nu {
                    escaped_at = Some(t);
                    Control::Stop
                } else {
                    Control::Continue
                }
            },
        )?;
        let status = match escaped_at {
            Some(tau) => ArcStatus::Escaped { tau },
            None => ArcStatus::Complete,
        };
        Ok(Run {
            status,
            y_end: out.y,
            records,
            segments: out.segments,
            accepted: out.accepted_steps,
            rejected: out.rejected_steps,
        })
    }

    fn terminal_tangents(&self, z: &DVector<f64>) -> Vec<(DVector<f64>, DVector<f64>)> {
        let n = self.n();
        let s = self.psi.hessian(z);
        (0..n)
            .map(|j| {
                let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
                let col = s.column(j).into_owned();
                (e, col)
            })
            .collect()
    }

    fn build_arc(&self, z: &DVector<f64>, run: &Run) -> Result<ExtremalArc> {
        let n = self.n();
        let mut samples = Vec::with_capacity(run.records.len());
        for (t, y) in run.records.iter().rev() {
            let x = slice_vec(y, 0, n);
            let p = slice_vec(y, n, n);
            let first = self.problem.hamiltonian_first(&x, &p)?;
            samples.push(ArcSample {
                t: *t,
                x,
                p,
                u: first.u_star,
                h: first.h,
            });
        }
        let mut segments = run.segments.clone();
        segments.reverse();
        Ok(ExtremalArc {
            z: z.clone(),
            terminal: self.psi.label(),
            horizon: self.horizon(),
            samples,
            status: run.status,
            running_cost: run.y_end[2 * n],
            terminal_cost: self.psi.value(z),
            accepted_steps: run.accepted,
            rejected_steps: run.rejected,
            segments,
        })
    }

    /// Backward extremal from `z` with dense samples on `[0, T]`.
    pub fn integrate_backward(&self, z: &DVector<f64>) -> Result<ExtremalArc> {
        self.check_z(z)?;
        let run = self.run(z, &self.psi.gradient(z), &[], None, 0.0, true)?;
        self.build_arc(z, &run)
    }

    /// Arc together with `X(t)`, `Y(t)` on its samples. Escaped arcs are refused.
    pub fn integrate_variational(&self, z: &DVector<f64>) -> Result<(ExtremalArc, VariationalBundle)> {
        self.check_z(z)?;
        let n = self.n();
        let tangents = self.terminal_tangents(z);
        let run = self.run(z, &self.psi.gradient(z), &tangents, None, 0.0, true)?;
        if let ArcStatus::Escaped { tau } = run.status {
            return Err(Error::Escaped { tau });
        }
        let arc = self.build_arc(z, &run)?;
        let mut bundle = VariationalBundle {
            t: Vec::with_capacity(run.records.len()),
            x_z: Vec::with_capacity(run.records.len()),
            p_z: Vec::with_capacity(run.records.len()),
        };
        for (t, y) in run.records.iter().rev() {
            let (x, p) = unpack_tangents(y, n, n, 0);
            bundle.t.push(*t);
            bundle.x_z.push(x);
            bundle.p_z.push(p);
        }
        Ok((arc, bundle))
    }

    /// Flow map at `t = 0` without dense samples; `jacobian` adds `X(0)`, `Y(0)`.
    pub fn endpoint(&self, z: &DVector<f64>, jacobian: bool) -> Result<Endpoint> {
        self.check_z(z)?;
        let n = self.n();
        let tangents = if jacobian {
            self.terminal_tangents(z)
        } else {
            Vec::new()
        };
        let run = self.run(z, &self.psi.gradient(z), &tangents, None, 0.0, false)?;
        let y = &run.y_end;
        let jac = (jacobian && run.status.is_complete()).then(|| unpack_tangents(y, n, n, 0));
        Ok(Endpoint {
            z: z.clone(),
            status: run.status,
            x0: slice_vec(y, 0, n),
            p0: slice_vec(y, n, n),
            running_cost: y[2 * n],
            terminal_cost: self.psi.value(z),
            jacobian: jac,
        })
    }

    /// `x_z(0, z) v` and `p_z(0, z) v` from a single tangent column.
    pub fn tangent_along(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<(Endpoint, DVector<f64>, DVector<f64>)> {
        self.check_z(z)?;
        check_dim(self.n(), v.len(), "direction v")?;
        let n = self.n();
        let col = (v.clone(), self.psi.hessian(z) * v);
        let run = self.run(z, &self.psi.gradient(z), &[col], None, 0.0, false)?;
        let y = &run.y_end;
        let ep = Endpoint {
            z: z.clone(),
            status: run.status,
            x0: slice_vec(y, 0, n),
            p0: slice_vec(y, n, n),
            running_cost: y[2 * n],
            terminal_cost: self.psi.value(z),
            jacobian: None,
        }
        .require_complete()?;
        let o = 2 * n + 1;
        Ok((ep, slice_vec(y, o, n), slice_vec(y, o + n, n)))
    }

    /// Jacobian of `(x(0), p(0))` with respect to the terminal data
    /// `(z, q)` at `q = ∇ψ(z)`, a 2n×2n matrix.
    pub fn full_flow_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_z(z)?;
        let n = self.n();
        let tangents: Vec<_> = (0..2 * n)
            .map(|j| {
                let e = DVector::from_fn(2 * n, |i, _| if i == j { 1.0 } else { 0.0 });
                (e.rows(0, n).into_owned(), e.rows(n, n).into_owned())
            })
            .collect();
        let run = self.run(z, &self.psi.gradient(z), &tangents, None, 0.0, false)?;
        if let ArcStatus::Escaped { tau } = run.status {
            return Err(Error::Escaped { tau });
        }
        let (x, p) = unpack_tangents(&run.y_end, n, 2 * n, 0);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, 2 * n)).copy_from(&x);
        m.view_mut((n, 0), (n, 2 * n)).copy_from(&p);
        Ok(m)
    }

    /// `Ξ(0)` and `Π(0)` along the unit direction `v`.
    pub fn second_variation_along(
        &self,
        z: &DVector<f64>,
        v: &DVector<f64>,
        method: SecondVariationMethod,
    ) -> Result<SecondVariation> {
        self.check_z(z)?;
        check_dim(self.n(), v.len(), "direction v")?;
        let (xi, pi) = match method {
            SecondVariationMethod::CentralFD => self.second_variation_fd(z, v)?,
            SecondVariationMethod::DirectionalODE => self.second_variation_ode(z, v)?,
        };
        Ok(SecondVariation {
            z: z.clone(),
            v: v.clone(),
            xi,
            pi,
            method,
        })
    }

    fn second_variation_fd(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = 1e-4 * (1.0 + z.norm());
        let neighbour = |s: f64| match self.tangent_along(&(z + v * s), v) {
            Ok((_, a, b)) => Ok((a, b)),
            Err(Error::Escaped { .. }) => Err(Error::EscapedNeighborhood),
            Err(e) => Err(e),
        };
        let diff = |step: f64| -> Result<(DVector<f64>, DVector<f64>)> {
            let (xp, pp) = neighbour(step)?;
            let (xm, pm) = neighbour(-step)?;
            Ok(((xp - xm) / (2.0 * step), (pp - pm) / (2.0 * step)))
        };
        let (x1, p1) = diff(h)?;
        let (x2, p2) = diff(h / 2.0)?;
        Ok(((x2 * 4.0 - x1) / 3.0, (p2 * 4.0 - p1) / 3.0))
    }

    fn second_variation_ode(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.n();
        let col = (v.clone(), self.psi.hessian(z) * v);
        let d3 = self.psi.third_directional(z, v);
        let run = self.run(z, &self.psi.gradient(z), &[col], Some(&d3), 0.0, false)?;
        if let ArcStatus::Escaped { tau } = run.status {
            return Err(Error::Escaped { tau });
        }
        let o = 2 * n + 1 + 2 * n;
        Ok((slice_vec(&run.y_end, o, n), slice_vec(&run.y_end, o + n, n)))
    }

    /// Continue the extremal system from `(x, p)` at `t_from` to `t_to`
    /// (no escape test). Returns the state, costate and `∫_{t_to}^{t_from} L`.
    pub fn transport(
        &self,
        t_from: f64,
        x: &DVector<f64>,
        p: &DVector<f64>,
        t_to: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let n = self.n();
        check_dim(n, x.len(), "state x")?;
        check_dim(n, p.len(), "costate p")?;
        let sys = ExtremalSystem {
            problem: &self.problem,
            n,
            cols: 0,
            second: false,
        };
        let mut y0: Vec<f64> = x.iter().chain(p.iter()).copied().collect();
        y0.push(0.0);
        let out = ode::integrate(&sys, t_from, &y0, t_to, &self.opts.step_control(), &[], 0, |_, _, _| {
            Control::Continue
        })?;
        let y = out.y;
        Ok((slice_vec(&y, 0, n), slice_vec(&y, n, n), y[2 * n]))
    }

    /// `max_k |H(x_k, p_k) - H(z, ∇ψ(z))|` over the arc samples.
    pub fn hamiltonian_drift(&self, arc: &ExtremalArc) -> Result<f64> {
        self.hamiltonian_drift_on(arc, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Drift restricted to samples with `t` in `[t_lo, t_hi]`.
    pub fn hamiltonian_drift_on(&self, arc: &ExtremalArc, t_lo: f64, t_hi: f64) -> Result<f64> {
        let h_t = self.problem.hamiltonian(&arc.z, &self.psi.gradient(&arc.z))?;
        Ok(arc
            .samples
            .iter()
            .filter(|s| s.t >= t_lo && s.t <= t_hi)
            .map(|s| (s.h - h_t).abs())
            .fold(0.0, f64::max))
    }

    /// Largest scaled defect `|h| |y'(t) - f(y(t))| / (atol + rtol |y|)` of
    /// the continuous extension at interior points of every step.
    pub fn ode_residual(&self, arc: &ExtremalArc) -> Result<f64> {
        let n = self.n();
        let sys = ExtremalSystem {
            problem: &self.problem,
            n,
            cols: 0,
            second: false,
        };
        let mut f = vec![0.0; 2 * n + 1];
        let mut worst: f64 = 0.0;
        for seg in arc.dense_segments() {
            for theta in [0.25, 0.5, 0.75] {
                let t = seg.t0 + theta * seg.h;
                let y = seg.eval(t);
                let dy = seg.eval_derivative(t);
                sys.rhs(t, &y, &mut f)?;
                for i in 0..y.len() {
                    let scale = self.opts.atol + self.opts.rtol * y[i].abs();
                    worst = worst.max(seg.h.abs() * (dy[i] - f[i]).abs() / scale);
                }
            }
        }
        Ok(worst)
    }
}

/// Columns `first..first+cols` of the tangent block as `(X, Y)`.
fn unpack_tangents(y: &[f64], n: usize, cols: usize, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(n, cols);
    let mut p = DMatrix::zeros(n, cols);
    for k in 0..cols {
        let o = 2 * n + 1 + 2 * n * (first + k);
        for i in 0..n {
            x[(i, k)] = y[o + i];
            p[(i, k)] = y[o + n + i];
        }
    }
    (x, p)
}
