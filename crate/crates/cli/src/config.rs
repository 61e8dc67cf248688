//! Run configuration: a TOML file with one section per concern, environment
//! overrides for tolerances, and the hash that tags every output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pmp_core::conjugate::{ConjugateTolerances, SweepOptions};
use pmp_core::flow::{Flow, FlowOptions, SecondVariationMethod};
use pmp_core::grid::Grid;
use pmp_core::optimality::ReachOptions;
use pmp_core::perturbation::{Cutoff, PerturbOptions};
use pmp_core::problem::catalog::{self, TerminalSpec};

use crate::error::CliError;

/// Prefix of the tolerance overrides, e.g. `PMP_RANK_TOL=1e-9`.
pub const ENV_PREFIX: &str = "PMP_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    /// Replaces the catalog terminal cost when present.
    #[serde(default)]
    pub terminal: Option<TerminalSpec>,
    #[serde(default)]
    pub flow: FlowOptions,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub figure1: Figure1Section,
    #[serde(default)]
    pub reach: ReachSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub perturb: PerturbSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub label: String,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Boxes are given per axis; a single value applies to every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub z_per_axis: usize,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
    pub y_per_axis: usize,
    pub atlas_lo: Vec<f64>,
    pub atlas_hi: Vec<f64>,
    pub atlas_per_axis: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            z_lo: vec![-2.0],
            z_hi: vec![2.0],
            z_per_axis: 101,
            y_lo: vec![-3.0],
            y_hi: vec![3.0],
            y_per_axis: 61,
            atlas_lo: vec![-5.5],
            atlas_hi: vec![5.5],
            atlas_per_axis: 221,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rank_tol: f64,
    pub det_tol: f64,
    pub omega_tol: f64,
    pub gap: f64,
    pub tie_tol: f64,
    pub reach_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = ConjugateTolerances::default();
        let r = ReachOptions::default();
        Tolerances {
            rank_tol: c.rank_tol,
            det_tol: c.det_tol,
            omega_tol: c.omega_tol,
            gap: c.gap,
            tie_tol: r.tie_tol,
            reach_tol: r.reach_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub z: Vec<f64>,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection { z: vec![0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Section {
    pub z_lo: f64,
    pub z_hi: f64,
    pub step: f64,
}

impl Default for Figure1Section {
    fn default() -> Self {
        Figure1Section {
            z_lo: -2.0,
            z_hi: 2.0,
            step: 0.25,
        }
    }
}

impl Figure1Section {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.z_hi - self.z_lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.z_lo + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachSection {
    pub y: Vec<f64>,
    pub random_starts: usize,
}

impl Default for ReachSection {
    fn default() -> Self {
        ReachSection {
            y: vec![0.0],
            random_starts: ReachOptions::default().random_starts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub radii: Vec<f64>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            radii: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    pub max_draws: usize,
    pub scale: f64,
    pub budget: f64,
    pub inner: f64,
    pub outer: f64,
}

impl Default for PerturbSection {
    fn default() -> Self {
        let p = PerturbOptions::default();
        PerturbSection {
            max_draws: p.max_draws,
            scale: p.scale,
            budget: p.budget,
            inner: p.cutoff.inner,
            outer: p.cutoff.outer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Apply `PMP_<NAME>` overrides for the tolerance and integrator keys.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, raw) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let slot = match name {
                "RANK_TOL" => &mut self.tolerances.rank_tol,
                "DET_TOL" => &mut self.tolerances.det_tol,
                "OMEGA_TOL" => &mut self.tolerances.omega_tol,
                "GAP" => &mut self.tolerances.gap,
                "TIE_TOL" => &mut self.tolerances.tie_tol,
                "REACH_TOL" => &mut self.tolerances.reach_tol,
                "RTOL" => &mut self.flow.rtol,
                "ATOL" => &mut self.flow.atol,
                _ => continue,
            };
            *slot = raw
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{key}={raw} is not a number")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.tolerances;
        let tols = [
            ("rank_tol", t.rank_tol),
            ("det_tol", t.det_tol),
            ("omega_tol", t.omega_tol),
            ("gap", t.gap),
            ("tie_tol", t.tie_tol),
            ("reach_tol", t.reach_tol),
        ];
        if let Some((name, v)) = tols.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(config_err(format!("tolerance {name} = {v} must be positive")));
        }
        let g = &self.grid;
        for (name, per) in [
            ("z_per_axis", g.z_per_axis),
            ("y_per_axis", g.y_per_axis),
            ("atlas_per_axis", g.atlas_per_axis),
        ] {
            if per < 2 {
                return Err(config_err(format!("grid {name} = {per} must be at least 2")));
            }
        }
        if !(self.figure1.step > 0.0) || !(self.figure1.z_hi >= self.figure1.z_lo) {
            return Err(config_err("figure1 needs step > 0 and z_hi >= z_lo"));
        }
        if self.bounds.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(config_err("bound radii must be positive"));
        }
        let p = &self.perturb;
        if !(p.scale >= 0.0) || !(p.budget > 0.0) {
            return Err(config_err("perturb needs scale >= 0 and budget > 0"));
        }
        self.flow.validate().map_err(|e| config_err(e.to_string()))?;
        self.resolve().map(|_| ())
    }

    /// The catalog problem with horizon, terminal override and flow options.
    pub fn resolve(&self) -> Result<Flow, CliError> {
        let mut params = self.problem.params.clone();
        if let Some(h) = self.problem.horizon {
            params.insert("horizon".into(), h);
        }
        let entry = catalog::build(&self.problem.label, &params).map_err(|e| config_err(e.to_string()))?;
        let n = entry.problem.state_dim();
        let psi = match &self.terminal {
            Some(spec) => spec.build(n).map_err(|e| config_err(e.to_string()))?,
            None => entry.terminal,
        };
        Ok(Flow::new(entry.problem, psi).with_options(self.flow))
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        let bytes = serde_json::to_vec(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn conjugate_tolerances(&self) -> ConjugateTolerances {
        let t = &self.tolerances;
        ConjugateTolerances {
            rank_tol: t.rank_tol,
            det_tol: t.det_tol,
            omega_tol: t.omega_tol,
            gap: t.gap,
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            tols: self.conjugate_tolerances(),
            ..SweepOptions::default()
        }
    }

    pub fn reach_options(&self) -> ReachOptions {
        ReachOptions {
            reach_tol: self.tolerances.reach_tol,
            tie_tol: self.tolerances.tie_tol,
            random_starts: self.reach.random_starts,
            ..ReachOptions::default()
        }
    }

    pub fn perturb_options(&self) -> PerturbOptions {
        let p = &self.perturb;
        PerturbOptions {
            max_draws: p.max_draws,
            scale: p.scale,
            seed: self.run.seed,
            cutoff: Cutoff {
                inner: p.inner,
                outer: p.outer,
            },
            budget: p.budget,
            sweep: SweepOptions {
                tols: self.conjugate_tolerances(),
                method: SecondVariationMethod::CentralFD,
                jacobi_proxy: false,
                ..SweepOptions::default()
            },
        }
    }
}

fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        k if k == n => Ok(v.to_vec()),
        k => Err(config_err(format!("{what} has {k} entries, state dimension is {n}"))),
    }
}

pub fn grid(lo: &[f64], hi: &[f64], per_axis: usize, n: usize, what: &str) -> Result<Grid, CliError> {
    Grid::new(broadcast(lo, n, what)?, broadcast(hi, n, what)?, per_axis)
        .map_err(|e| config_err(format!("{what}: {e}")))
}

pub fn point(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>, CliError> {
    Ok(DVector::from_vec(broadcast(v, n, what)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nlabel = \"single_integrator_cos\"\n";

    #[test]
    fn defaults_fill_every_section() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.flow, FlowOptions::default());
        assert_eq!(c.grid.atlas_per_axis, 221);
        assert_eq!(c.figure1.points().len(), 17);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_labels_are_config_errors() {
        let typo = format!("{MINIMAL}[grid]\nz_per_axes = 3\n");
        assert!(matches!(RunConfig::parse(&typo), Err(CliError::Config(_))));
        let bad = RunConfig::parse("[problem]\nlabel = \"nope\"\n").unwrap();
        assert!(matches!(bad.validate(), Err(CliError::Config(_))));
        let coarse = RunConfig::parse(&format!("{MINIMAL}[grid]\ny_per_axis = 1\n")).unwrap();
        assert!(coarse.validate().is_err());
    }

    #[test]
    fn env_overrides_change_the_hash_but_out_dir_does_not() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        let h0 = c.hash();
        c.run.out = Some("elsewhere".into());
        assert_eq!(c.hash(), h0);
        c.apply_env([
            ("PMP_RANK_TOL".to_string(), "1e-7".to_string()),
            ("HOME".into(), "/".into()),
        ])
        .unwrap();
        assert_eq!(c.tolerances.rank_tol, 1e-7);
        assert_ne!(c.hash(), h0);
        assert!(c.apply_env([("PMP_TIE_TOL".to_string(), "x".to_string())]).is_err());
    }

    #[test]
    fn grids_broadcast_scalars() {
        let g = grid(&[-1.0], &[1.0], 3, 2, "z").unwrap();
        assert_eq!(g.dim(), 2);
        assert!(grid(&[-1.0, 0.0, 1.0], &[1.0], 3, 2, "z").is_err());
    }
}
