use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type the numeric core is generic over (`f32` or `f64`).
///
/// The tolerances scale with the precision: `f64` uses the tight values the
/// checks are specified with, `f32` uses values its 24-bit mantissa can meet.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Allowed deviation of ‖z‖ from 1 before an input is rejected.
    const UNIT_TOL: f64;
    /// Tolerance for world invariants (normalization, marginals).
    const EXACT_TOL: f64;
    /// Tolerance for exact bound checks.
    const CHECK_TOL: f64;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f64 {
    const UNIT_TOL: f64 = 1e-9;
    const EXACT_TOL: f64 = 1e-12;
    const CHECK_TOL: f64 = 1e-9;
}

impl Real for f32 {
    const UNIT_TOL: f64 = 1e-5;
    const EXACT_TOL: f64 = 1e-5;
    const CHECK_TOL: f64 = 1e-4;
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn sum<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(0.125f32.f64(), 0.125);
    }

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(norm(&[3.0f64, 4.0]), 5.0);
    }
}
