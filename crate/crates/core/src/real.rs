//! Scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the solvers are generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding if needed.
    fn lit(x: f64) -> Self;

    /// Converts a count.
    fn of_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Lossy conversion used for reporting.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// `x^y` for `x > 0` through exp/log, `0` when `x == 0` and `y > 0`.
#[inline]
pub fn pow_pos<T: Real>(x: T, y: T) -> T {
    if x <= T::zero() {
        if y > T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    } else {
        (y * x.ln()).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pow_pos_matches_powf() {
        for &(x, y) in &[(2.0f64, 1.5), (0.25, 0.5), (7.0, -0.75)] {
            assert!((pow_pos(x, y) - x.powf(y)).abs() < 1e-14 * x.powf(y));
        }
        assert_eq!(pow_pos(0.0f64, 0.5), 0.0);
    }

    #[test]
    fn f32_roundtrip() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(3.0f32.as_f64(), 3.0);
    }
}
