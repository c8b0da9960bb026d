//! Floating-point abstraction shared by the decoding rules, losses and the
//! trainable student model.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// A real scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite or infinite float converts to f64")
    }

    /// Tolerance used when checking that a log-distribution sums to one.
    fn normalization_tolerance() -> Self {
        let eps = Self::epsilon() * Self::lit(64.0);
        if eps > Self::lit(1e-6) {
            eps
        } else {
            Self::lit(1e-6)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `ln(sum(exp(x)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || max.is_nan() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// In-place log-softmax.
pub fn log_softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// Index of the maximum value, lowest index on ties. NaN entries never win.
pub fn argmax_lowest<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let xs = [0.1f64, -2.0, 3.5];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0f32, 3.0, 3.0]), Some(1));
        assert_eq!(argmax_lowest::<f64>(&[]), None);
        assert_eq!(argmax_lowest(&[f64::NAN, -1.0]), Some(1));
    }
}
