//! Truncated univariate Taylor series of order four.
//!
//! A [`Jet`] stores `c[k] = f^(k)(s0) / k!`. Evaluating a smooth expression on
//! jets seeded with `s0 + s` yields all derivatives up to order four along a
//! line, which is how directional derivatives of the cutoff bump and of the
//! polynomial perturbation are obtained.

use std::ops::{Add, Mul, Neg, Sub};

pub const ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub c: [f64; ORDER + 1],
}

impl Jet {
    pub const fn constant(value: f64) -> Self {
        Jet {
            c: [value, 0.0, 0.0, 0.0, 0.0],
        }
    }

    pub const fn zero() -> Self {
        Jet::constant(0.0)
    }

    /// The affine jet `a + b s`.
    pub const fn line(a: f64, b: f64) -> Self {
        Jet {
            c: [a, b, 0.0, 0.0, 0.0],
        }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// k-th derivative with respect to the line parameter.
    pub fn derivative(&self, k: usize) -> f64 {
        const FACT: [f64; ORDER + 1] = [1.0, 1.0, 2.0, 6.0, 24.0];
        self.c[k] * FACT[k]
    }

    pub fn derivatives(&self) -> [f64; ORDER + 1] {
        let mut d = [0.0; ORDER + 1];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = self.derivative(k);
        }
        d
    }

    pub fn scale(self, a: f64) -> Self {
        let mut c = self.c;
        c.iter_mut().for_each(|ck| *ck *= a);
        Jet { c }
    }

    pub fn powi(self, k: u32) -> Self {
        (0..k).fold(Jet::constant(1.0), |acc, _| acc * self)
    }

    pub fn recip(self) -> Self {
        let a = self.c;
        let mut q = [0.0; ORDER + 1];
        q[0] = 1.0 / a[0];
        for k in 1..=ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += a[j] * q[k - j];
            }
            q[k] = -s / a[0];
        }
        Jet { c: q }
    }

    pub fn exp(self) -> Self {
        // e' = a' e, written on coefficients: k e_k = sum_j j a_j e_{k-j}
        let a = self.c;
        let mut e = [0.0; ORDER + 1];
        e[0] = a[0].exp();
        for k in 1..=ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * a[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Jet { c: e }
    }

    pub fn sqrt(self) -> Self {
        let a = self.c;
        let mut r = [0.0; ORDER + 1];
        r[0] = a[0].sqrt();
        for k in 1..=ORDER {
            let mut s = a[k];
            for j in 1..k {
                s -= r[j] * r[k - j];
            }
            r[k] = s / (2.0 * r[0]);
        }
        Jet { c: r }
    }

    pub fn sin_cos(self) -> (Self, Self) {
        // s' = a' c, c' = -a' s
        let a = self.c;
        let mut s = [0.0; ORDER + 1];
        let mut c = [0.0; ORDER + 1];
        s[0] = a[0].sin();
        c[0] = a[0].cos();
        for k in 1..=ORDER {
            let mut ds = 0.0;
            let mut dc = 0.0;
            for j in 1..=k {
                ds += j as f64 * a[j] * c[k - j];
                dc -= j as f64 * a[j] * s[k - j];
            }
            s[k] = ds / k as f64;
            c[k] = dc / k as f64;
        }
        (Jet { c: s }, Jet { c })
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        let mut c = self.c;
        c.iter_mut().zip(rhs.c).for_each(|(a, b)| *a += b);
        Jet { c }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        let mut c = self.c;
        c.iter_mut().zip(rhs.c).for_each(|(a, b)| *a -= b);
        Jet { c }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut c = [0.0; ORDER + 1];
        for (k, ck) in c.iter_mut().enumerate() {
            for j in 0..=k {
                *ck += self.c[j] * rhs.c[k - j];
            }
        }
        Jet { c }
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}
