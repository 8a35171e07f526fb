//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All algorithms are written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Sampling primitives live on the trait so that generic code
//! never has to spell out `rand_distr` bounds at every call site.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when checking that a probability vector sums to one.
    const STOCHASTIC_TOL: f64;
    /// Relative tolerance under which two action scores count as tied.
    const TIE_TOL: f64;
    /// Tolerance on the total of a belief weight vector.
    const WEIGHT_TOL: f64;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals on `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Uniform draw on `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma draw with the given shape and unit scale.
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $stoch:expr, $tie:expr, $weight:expr) => {
        impl Scalar for $t {
            const STOCHASTIC_TOL: f64 = $stoch;
            const TIE_TOL: f64 = $tie;
            const WEIGHT_TOL: f64 = $weight;

            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            #[inline]
            fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0)
                    .expect("gamma shape must be positive")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f64, 1e-9, 1e-10, 1e-12);
impl_scalar!(f32, 1e-4, 1e-5, 1e-5);

/// Log-sum-exp of `ln(w_i) + x_i` with a max shift; zero weights are skipped.
///
/// Returns `-inf` when every weight is zero.
pub fn weighted_log_sum_exp<T: Scalar>(xs: &[T], weights: &[T]) -> T {
    debug_assert_eq!(xs.len(), weights.len());
    let shift = xs
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > T::zero())
        .map(|(x, _)| *x)
        .fold(T::neg_infinity(), T::max);
    if shift == T::neg_infinity() {
        return shift;
    }
    let acc: T = xs
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > T::zero())
        .map(|(x, w)| *w * (*x - shift).exp())
        .sum();
    shift + acc.ln()
}

/// Index of the largest score; ties within a relative tolerance go to the
/// lowest index.
pub fn argmax_lowest<T: Scalar>(scores: &[T]) -> usize {
    let best = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let slack = T::lit(T::TIE_TOL) * best.abs().max(T::one());
    scores
        .iter()
        .position(|&q| q >= best - slack)
        .unwrap_or(0)
}
