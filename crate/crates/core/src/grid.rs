//! Tensor grids over axis-aligned boxes, enumerated with the first axis
//! varying slowest.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, per_axis: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "grid bounds of lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if per_axis < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution {per_axis} < 2")));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument("grid box is empty".into()));
        }
        Ok(Grid { lo, hi, per_axis })
    }

    /// The same interval on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, per_axis: usize) -> Result<Self> {
        Grid::new(vec![lo; dim], vec![hi; dim], per_axis)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.per_axis - 1) as f64
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let d = self.dim();
        let mut mi = vec![0; d];
        for a in (0..d).rev() {
            mi[a] = idx % self.per_axis;
            idx /= self.per_axis;
        }
        mi
    }

    pub fn flat_index(&self, mi: &[usize]) -> usize {
        mi.iter().fold(0, |acc, &i| acc * self.per_axis + i)
    }

    pub fn point(&self, idx: usize) -> DVector<f64> {
        let mi = self.multi_index(idx);
        DVector::from_fn(self.dim(), |a, _| {
            let frac = mi[a] as f64 / (self.per_axis - 1) as f64;
            self.lo[a] + (self.hi[a] - self.lo[a]) * frac
        })
    }

    pub fn points(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Neighbour one step forward along `axis`, if inside the grid.
    pub fn forward(&self, idx: usize, axis: usize) -> Option<usize> {
        let mut mi = self.multi_index(idx);
        if mi[axis] + 1 >= self.per_axis {
            return None;
        }
        mi[axis] += 1;
        Some(self.flat_index(&mi))
    }

    /// All axis neighbours (up to `2 d`).
    pub fn neighbours(&self, idx: usize) -> Vec<usize> {
        let mi = self.multi_index(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            if mi[a] > 0 {
                let mut m = mi.clone();
                m[a] -= 1;
                out.push(self.flat_index(&m));
            }
            if mi[a] + 1 < self.per_axis {
                let mut m = mi.clone();
                m[a] += 1;
                out.push(self.flat_index(&m));
            }
        }
        out
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.len() == self.dim() && (0..self.dim()).all(|a| z[a] >= self.lo[a] && z[a] <= self.hi[a])
    }
}

/// Connected components (under axis adjacency) of the flagged nodes, each
/// sorted, in order of their smallest index.
pub fn clusters(grid: &Grid, flagged: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; flagged.len()];
    let mut out = Vec::new();
    for start in 0..flagged.len() {
        if !flagged[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in grid.neighbours(i) {
                if flagged[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}
