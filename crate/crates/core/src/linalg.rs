//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Singular values in descending order with their right singular vectors.
#[derive(Debug, Clone)]
pub struct SingularSystem {
    pub values: Vec<f64>,
    pub right: Vec<DVector<f64>>,
}

impl SingularSystem {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let svd = m.clone().svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut pairs: Vec<(f64, DVector<f64>)> = svd
            .singular_values
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, canonical_sign(v_t.row(i).transpose())))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (values, right): (Vec<f64>, Vec<DVector<f64>>) = pairs.into_iter().unzip();
        SingularSystem { values, right }
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn smallest(&self) -> (f64, &DVector<f64>) {
        let k = self.values.len() - 1;
        (self.values[k], &self.right[k])
    }

    /// Right singular vectors whose singular value lies within `gap` of the smallest.
    pub fn near_null_basis(&self, gap: f64) -> Vec<DVector<f64>> {
        let (smin, _) = self.smallest();
        self.values
            .iter()
            .zip(&self.right)
            .rev()
            .take_while(|(s, _)| **s - smin <= gap)
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Number of singular values above `rel_threshold * sigma_max`.
    pub fn rank(&self, rel_threshold: f64) -> usize {
        let cut = rel_threshold * self.largest();
        self.values.iter().filter(|&&s| s > cut).count()
    }
}

/// Numeric rank via SVD with threshold relative to the largest singular value.
pub fn numeric_rank(m: &DMatrix<f64>, rel_threshold: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_threshold * smax).count()
}

/// Spectral norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flip `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let pivot = v
        .iter()
        .cloned()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

/// Standard symplectic form `[[0, I], [-I, 0]]` of size 2n.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smallest_pair_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]);
        let s = SingularSystem::of(&m);
        let (smin, v) = s.smallest();
        assert_relative_eq!(smin, 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_eq!(s.rank(1e-8), 1);
    }

    #[test]
    fn near_null_basis_collects_degenerate_directions() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1e-9, 2e-9]));
        let s = SingularSystem::of(&m);
        assert_eq!(s.near_null_basis(1e-6).len(), 2);
        assert_eq!(numeric_rank(&m, 1e-8), 1);
    }

    #[test]
    fn symplectic_form_squares_to_minus_identity() {
        let j = symplectic_form(3);
        assert_relative_eq!(&j * &j, -DMatrix::<f64>::identity(6, 6));
    }
}
