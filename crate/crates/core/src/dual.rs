//! Second-order forward-mode differentiation in one variable.
//!
//! Radial kernel profiles are written once, generically over [`Scalar`], and
//! evaluated either on `f64` (assembly) or on [`Dual2`] (radial derivatives for
//! pointwise traction kernels).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn re(self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// `v + d1·ε + d2·ε²/2` truncated at second order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual2 {
    pub fn var(x: f64) -> Self {
        Dual2 { v: x, d1: 1.0, d2: 0.0 }
    }

    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        Dual2 { v: f, d1: f1 * self.d1, d2: f2 * self.d1 * self.d1 + f1 * self.d2 }
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, o: Dual2) -> Dual2 {
        Dual2 { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, o: Dual2) -> Dual2 {
        Dual2 { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, o: Dual2) -> Dual2 {
        let inv = 1.0 / o.v;
        let r = o.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
        self * r
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        Dual2 { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

impl Add<f64> for Dual2 {
    type Output = Dual2;
    fn add(self, o: f64) -> Dual2 {
        Dual2 { v: self.v + o, ..self }
    }
}

impl Sub<f64> for Dual2 {
    type Output = Dual2;
    fn sub(self, o: f64) -> Dual2 {
        Dual2 { v: self.v - o, ..self }
    }
}

impl Mul<f64> for Dual2 {
    type Output = Dual2;
    fn mul(self, o: f64) -> Dual2 {
        Dual2 { v: self.v * o, d1: self.d1 * o, d2: self.d2 * o }
    }
}

impl Div<f64> for Dual2 {
    type Output = Dual2;
    fn div(self, o: f64) -> Dual2 {
        self * (1.0 / o)
    }
}

impl Scalar for Dual2 {
    fn cst(x: f64) -> Self {
        Dual2 { v: x, d1: 0.0, d2: 0.0 }
    }
    fn re(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_composite() {
        // f(x) = ln(x) * sqrt(x) / (1 + x)
        let f = |x: Dual2| x.ln() * x.sqrt() / (x + 1.0);
        let x0 = 1.7;
        let d = f(Dual2::var(x0));
        let g = |x: f64| x.ln() * x.sqrt() / (1.0 + x);
        let h = 1e-4;
        let d1 = (g(x0 + h) - g(x0 - h)) / (2.0 * h);
        let d2 = (g(x0 + h) - 2.0 * g(x0) + g(x0 - h)) / (h * h);
        assert!((d.v - g(x0)).abs() < 1e-15);
        assert!((d.d1 - d1).abs() < 1e-8);
        assert!((d.d2 - d2).abs() < 1e-6);
    }
}
