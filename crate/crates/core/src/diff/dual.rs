//! Forward-mode dual numbers.
//!
//! A [`Dual<K>`] carries a value together with `K` partial derivatives. Each
//! partial lane is updated independently by the same arithmetic, so the result
//! for a given seed does not depend on how many other seeds share the number.
//! Jacobian chunking relies on that.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic needed by the plant and policy code, implemented for `f64` and
/// for [`Dual`].
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(&self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const K: usize> {
    pub v: f64,
    pub d: [f64; K],
}

impl<const K: usize> Dual<K> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; K] }
    }

    /// Variable with a unit seed in lane `lane`.
    pub fn variable(v: f64, lane: usize) -> Self {
        let mut d = [0.0; K];
        d[lane] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for di in d.iter_mut() {
            *di *= dv;
        }
        Self { v, d }
    }
}

impl<const K: usize> Scalar for Dual<K> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d.iter().all(|x| x.is_finite())
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a += b;
        }
        self
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; K];
        for i in 0..K {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Self { v: self.v * rhs.v, d }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        let mut d = [0.0; K];
        for i in 0..K {
            d[i] = (self.d[i] - v * rhs.d[i]) * inv;
        }
        Self { v, d }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for a in self.d.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<const K: usize> Add<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const K: usize> Sub<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

impl<const K: usize> Mul<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for a in self.d.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl<const K: usize> Div<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const K: usize> AddAssign for Dual<K> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const K: usize> SubAssign for Dual<K> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const K: usize> MulAssign for Dual<K> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_chain_rules() {
        let x = Dual::<2>::variable(0.7, 0);
        let y = Dual::<2>::variable(-1.3, 1);
        let f = (x * y).sin() + x.exp() / y;
        let fx = (0.7f64 * -1.3).cos() * -1.3 + 0.7f64.exp() / -1.3;
        let fy = (0.7f64 * -1.3).cos() * 0.7 - 0.7f64.exp() / (1.3 * 1.3);
        assert!((f.d[0] - fx).abs() < 1e-14);
        assert!((f.d[1] - fy).abs() < 1e-14);
    }

    #[test]
    fn tanh_and_sqrt_derivatives() {
        let x = Dual::<1>::variable(0.4, 0);
        let t = x.tanh();
        assert!((t.d[0] - (1.0 - 0.4f64.tanh().powi(2))).abs() < 1e-15);
        let s = x.sqrt();
        assert!((s.d[0] - 0.5 / 0.4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn division_by_dual() {
        let x = Dual::<1>::variable(2.0, 0);
        let r = x.recip();
        assert_eq!(r.v, 0.5);
        assert!((r.d[0] + 0.25).abs() < 1e-16);
    }

    #[test]
    fn lanes_are_independent_of_width() {
        let a = Dual::<1>::variable(1.1, 0);
        let b = Dual::<4>::variable(1.1, 2);
        let fa = (a * a * 3.0 - a.cos()).exp() / (a + 2.0);
        let fb = (b * b * 3.0 - b.cos()).exp() / (b + 2.0);
        assert_eq!(fa.v, fb.v);
        assert_eq!(fa.d[0], fb.d[2]);
    }
}
