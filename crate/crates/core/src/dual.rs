//! Scalar abstraction shared by plain evaluation and local differentiation.
//!
//! The belief/plausibility formulas are written once against [`Real`]; with
//! `f64` they evaluate, with [`Dual3`] they also carry the partial
//! derivatives with respect to the three GRFN parameters (μ, σ², h).

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::normal;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn exp_m1(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn norm_cdf(self) -> Self;
    /// Φ(b) − Φ(a), evaluated without cancellation.
    fn norm_cdf_diff(a: Self, b: Self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }

    fn shift(self, k: f64) -> Self {
        self + Self::cst(k)
    }

    /// Replaces values below `floor` by the constant `floor` (zero derivative).
    fn floor_at(self, floor: f64) -> Self {
        if self.value() < floor {
            Self::cst(floor)
        } else {
            self
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn norm_cdf(self) -> Self {
        normal::cdf(self)
    }
    #[inline]
    fn norm_cdf_diff(a: Self, b: Self) -> Self {
        normal::cdf_diff(a, b)
    }
}

/// Forward-mode dual number with three tangent directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn var(v: f64, slot: usize) -> Self {
        let mut d = [0.0; 3];
        d[slot] = 1.0;
        Dual3 { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        Dual3 {
            v,
            d: [self.d[0] * dv, self.d[1] * dv, self.d[2] * dv],
        }
    }
}

impl Add for Dual3 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Div for Dual3 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual3 {
            v: q,
            d: [
                (self.d[0] - q * o.d[0]) / o.v,
                (self.d[1] - q * o.d[1]) / o.v,
                (self.d[2] - q * o.d[2]) / o.v,
            ],
        }
    }
}

impl Neg for Dual3 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual3 {
            v: -self.v,
            d: [-self.d[0], -self.d[1], -self.d[2]],
        }
    }
}

impl Real for Dual3 {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        self.chain(self.v.exp_m1(), self.v.exp())
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    #[inline]
    fn norm_cdf(self) -> Self {
        self.chain(normal::cdf(self.v), normal::pdf(self.v))
    }
    fn norm_cdf_diff(a: Self, b: Self) -> Self {
        let (pa, pb) = (normal::pdf(a.v), normal::pdf(b.v));
        // pdf(±inf) is 0; guard inf * 0 in the tangent
        let ta = |i: usize| if pa == 0.0 { 0.0 } else { pa * a.d[i] };
        let tb = |i: usize| if pb == 0.0 { 0.0 } else { pb * b.d[i] };
        Dual3 {
            v: normal::cdf_diff(a.v, b.v),
            d: [tb(0) - ta(0), tb(1) - ta(1), tb(2) - ta(2)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn f<T: Real>(x: T, y: T, z: T) -> T {
        (x * y).exp() / (z.sqrt() + T::cst(1.0)) + T::norm_cdf_diff(x, y.shift(0.5)) - z.ln() * x.norm_cdf()
    }

    #[test]
    fn dual_matches_central_differences() {
        let p = [0.3, -0.7, 2.1];
        let d = f(Dual3::var(p[0], 0), Dual3::var(p[1], 1), Dual3::var(p[2], 2));
        assert_relative_eq!(d.v, f(p[0], p[1], p[2]));
        for i in 0..3 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (f(a[0], a[1], a[2]) - f(b[0], b[1], b[2])) / (2.0 * h);
            assert_relative_eq!(d.d[i], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn floor_kills_derivative() {
        let x = Dual3::var(1e-20, 0);
        let y = x.floor_at(1e-12);
        assert_eq!(y.v, 1e-12);
        assert_eq!(y.d, [0.0; 3]);
        assert_eq!(Dual3::var(0.5, 1).floor_at(1e-12).d, [0.0, 1.0, 0.0]);
    }
}
