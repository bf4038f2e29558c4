//! Scalar abstraction shared by every numerical kernel.
//!
//! The engine is written against [`Real`] so the same kernels run in `f32`
//! (cheap sweeps, memory-bound 3D grids) and `f64` (oracles, acceptance).
//! Concrete `f64` aliases live at the crate root.

use std::fmt::{Debug, Display, LowerExp};
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type usable by the engine.
pub trait Real:
    RealField
    + Arith
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + rustfft::FftNum
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Machine epsilon.
    fn eps() -> Self;
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` literal into the working scalar.
#[inline(always)]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Minimal field arithmetic: enough to evaluate the LLG one-step map on
/// plain floats and on forward-mode dual numbers alike.
pub trait Arith:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Additive identity.
    fn nil() -> Self;
    /// Multiplicative identity.
    fn unit() -> Self;
    /// Square root.
    fn root(self) -> Self;
}

macro_rules! arith_float {
    ($t:ty) => {
        impl Arith for $t {
            #[inline(always)]
            fn nil() -> Self {
                0.0
            }
            #[inline(always)]
            fn unit() -> Self {
                1.0
            }
            #[inline(always)]
            fn root(self) -> Self {
                <$t>::sqrt(self)
            }
        }
    };
}

arith_float!(f32);
arith_float!(f64);

/// Forward-mode dual number carrying `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub v: T,
    pub d: [T; N],
}

impl<T: Real, const N: usize> Dual<T, N> {
    pub fn constant(v: T) -> Self {
        Self { v, d: [T::zero(); N] }
    }

    /// Independent variable number `i`.
    pub fn var(v: T, i: usize) -> Self {
        let mut d = [T::zero(); N];
        d[i] = T::one();
        Self { v, d }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Self { v: self.v - o.v, d }
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [T::zero(); N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.v;
        let q = self.v * inv;
        let mut d = [T::zero(); N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for a in d.iter_mut() {
            *a = -*a;
        }
        Self { v: -self.v, d }
    }
}

impl<T: Real, const N: usize> Arith for Dual<T, N> {
    fn nil() -> Self {
        Self::constant(T::zero())
    }
    fn unit() -> Self {
        Self::constant(T::one())
    }
    fn root(self) -> Self {
        let s = self.v.sqrt();
        let half_inv = lit::<T>(0.5) / s;
        let mut d = self.d;
        for a in d.iter_mut() {
            *a *= half_inv;
        }
        Self { v: s, d }
    }
}

/// Ordered by value only.
impl<T: Real, const N: usize> PartialOrd for Dual<T, N> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        self.v.partial_cmp(&o.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_matches_hand_derivative() {
        // f(x, y) = sqrt(x*y + 1) / (x - y)
        let (x, y) = (1.7_f64, 0.4_f64);
        let dx = Dual::<f64, 2>::var(x, 0);
        let dy = Dual::<f64, 2>::var(y, 1);
        let f = (dx * dy + Dual::unit()).root() / (dx - dy);
        let s = (x * y + 1.0).sqrt();
        let expect_dx = (y / (2.0 * s)) / (x - y) - s / (x - y).powi(2);
        let expect_dy = (x / (2.0 * s)) / (x - y) + s / (x - y).powi(2);
        assert!((f.v - s / (x - y)).abs() < 1e-15);
        assert!((f.d[0] - expect_dx).abs() < 1e-14);
        assert!((f.d[1] - expect_dy).abs() < 1e-14);
    }
}
