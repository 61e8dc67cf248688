//! Terminal costs `ψ` and the shipped parametric families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeSource {
    Exact,
    FiniteDifference,
}

/// Terminal cost with derivative oracles.
pub trait TerminalCost: Send + Sync {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64>;

    /// Taylor jet of `s -> ψ(z + s w)` up to order four, when available.
    fn line_jet(&self, _z: &DVector<f64>, _w: &DVector<f64>) -> Option<Jet> {
        None
    }

    /// The vector `D³ψ(z)(v, v, ·)`.
    fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        if self.line_jet(z, v).is_some() {
            third_by_polarization(|w| self.line_jet(z, w).map(|j| j.derivative(3)).unwrap_or(0.0), v)
        } else {
            let h = 1e-4 * (1.0 + z.norm());
            (self.hessian(&(z + v * h)) - self.hessian(&(z - v * h))) * v / (2.0 * h)
        }
    }

    fn third_source(&self) -> DerivativeSource {
        let n = self.dim();
        if self.line_jet(&DVector::zeros(n), &DVector::zeros(n)).is_some() {
            DerivativeSource::Exact
        } else {
            DerivativeSource::FiniteDifference
        }
    }

    /// A global lower bound on `ψ`, when one is known.
    fn lower_bound(&self) -> Option<f64> {
        None
    }
}

/// Recover `T(v, v, e_k)` from the cubic form `t(a) = T(a, a, a)` via
/// `T(v,v,w) = [t(v+w) - t(v-w) - 2 t(w)] / 6`.
pub fn third_by_polarization<F>(cubic: F, v: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = v.len();
    DVector::from_fn(n, |k, _| {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        (cubic(&(v + &e)) - cubic(&(v - &e)) - 2.0 * cubic(&e)) / 6.0
    })
}

fn line_coords(z: &DVector<f64>, w: &DVector<f64>) -> Vec<Jet> {
    z.iter().zip(w.iter()).map(|(&a, &b)| Jet::line(a, b)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCost {
    pub n: usize,
}

impl TerminalCost for ZeroCost {
    fn dim(&self) -> usize {
        self.n
    }
    fn label(&self) -> String {
        "zero".into()
    }
    fn value(&self, _z: &DVector<f64>) -> f64 {
        0.0
    }
    fn gradient(&self, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.n)
    }
    fn hessian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.n, self.n)
    }
    fn line_jet(&self, _z: &DVector<f64>, _w: &DVector<f64>) -> Option<Jet> {
        Some(Jet::zero())
    }
    fn lower_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `ψ(z) = a cos(k·z + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineCost {
    pub amplitude: f64,
    pub wave: DVector<f64>,
    pub phase: f64,
}

impl CosineCost {
    pub fn unit(n: usize) -> Self {
        CosineCost {
            amplitude: 1.0,
            wave: DVector::from_element(n, 1.0),
            phase: 0.0,
        }
    }

    fn arg(&self, z: &DVector<f64>) -> f64 {
        self.wave.dot(z) + self.phase
    }
}

impl TerminalCost for CosineCost {
    fn dim(&self) -> usize {
        self.wave.len()
    }
    fn label(&self) -> String {
        "cosine".into()
    }
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.amplitude * self.arg(z).cos()
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.wave * (-self.amplitude * self.arg(z).sin())
    }
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        &self.wave * self.wave.transpose() * (-self.amplitude * self.arg(z).cos())
    }
    fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let kv = self.wave.dot(v);
        &self.wave * (self.amplitude * self.arg(z).sin() * kv * kv)
    }
    fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<Jet> {
        let (_, c) = Jet::line(self.arg(z), self.wave.dot(w)).sin_cos();
        Some(c * self.amplitude)
    }
    fn lower_bound(&self) -> Option<f64> {
        Some(-self.amplitude.abs())
    }
}

/// `ψ(z) = a exp(k·z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialCost {
    pub amplitude: f64,
    pub rate: DVector<f64>,
    pub shift: f64,
}

impl ExponentialCost {
    fn e(&self, z: &DVector<f64>) -> f64 {
        (self.rate.dot(z) + self.shift).exp()
    }
}

impl TerminalCost for ExponentialCost {
    fn dim(&self) -> usize {
        self.rate.len()
    }
    fn label(&self) -> String {
        "exponential".into()
    }
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.amplitude * self.e(z)
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.rate * (self.amplitude * self.e(z))
    }
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        &self.rate * self.rate.transpose() * (self.amplitude * self.e(z))
    }
    fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let kv = self.rate.dot(v);
        &self.rate * (self.amplitude * self.e(z) * kv * kv)
    }
    fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<Jet> {
        Some(Jet::line(self.rate.dot(z) + self.shift, self.rate.dot(w)).exp() * self.amplitude)
    }
    fn lower_bound(&self) -> Option<f64> {
        (self.amplitude >= 0.0).then_some(0.0)
    }
}

/// `ψ(z) = ½ zᵀ S z + g·z + c` with symmetric `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

impl QuadraticCost {
    pub fn new(hessian: DMatrix<f64>) -> Self {
        let n = hessian.nrows();
        QuadraticCost {
            hessian: crate::linalg::symmetrize(&hessian),
            gradient: DVector::zeros(n),
            constant: 0.0,
        }
    }
}

impl TerminalCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.gradient.len()
    }
    fn label(&self) -> String {
        "quadratic".into()
    }
    fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z) + self.constant
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hessian * z + &self.gradient
    }
    fn hessian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        self.hessian.clone()
    }
    fn third_directional(&self, z: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(z.len())
    }
    fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<Jet> {
        let zs = line_coords(z, w);
        let n = zs.len();
        let mut acc = Jet::constant(self.constant);
        for i in 0..n {
            acc = acc + zs[i] * self.gradient[i];
            for j in 0..n {
                acc = acc + zs[i] * zs[j] * (0.5 * self.hessian[(i, j)]);
            }
        }
        Some(acc)
    }
    fn lower_bound(&self) -> Option<f64> {
        let chol = self.hessian.clone().cholesky()?;
        Some(self.constant - 0.5 * self.gradient.dot(&chol.solve(&self.gradient)))
    }
}

/// One-dimensional polynomial `ψ(z) = sum_k c_k z^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCost {
    pub coeffs: Vec<f64>,
}

impl PolynomialCost {
    fn derivative_at(&self, z: f64, order: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(order)
            .map(|(k, &c)| {
                let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
                c * falling * z.powi((k - order) as i32)
            })
            .sum()
    }
}

impl TerminalCost for PolynomialCost {
    fn dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        "polynomial".into()
    }
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.derivative_at(z[0], 0)
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.derivative_at(z[0], 1))
    }
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.derivative_at(z[0], 2))
    }
    fn third_directional(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.derivative_at(z[0], 3) * v[0] * v[0])
    }
    fn line_jet(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<Jet> {
        let s = Jet::line(z[0], w[0]);
        let mut acc = Jet::zero();
        for &c in self.coeffs.iter().rev() {
            acc = acc * s + c;
        }
        Some(acc)
    }
    fn lower_bound(&self) -> Option<f64> {
        match self.coeffs.len() {
            0 => Some(0.0),
            1 => Some(self.coeffs[0]),
            _ => None,
        }
    }
}
