//! Scalar abstraction for the core numerics.
//!
//! Everything in the math layers is generic over [`Scalar`], which is any
//! float type ndarray can do linear algebra with plus the sampling hooks we
//! need. `f32` and `f64` are the two implementations; the crate root exposes
//! concrete aliases for the common `f64` case.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum {
    /// Draw from the standard normal distribution.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from [0, 1).
    fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("f64 -> Scalar conversion")
    }

    fn to_f(self) -> f64;
}

impl Scalar for f64 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }

    fn to_f(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn uniform01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }

    fn to_f(self) -> f64 {
        self as f64
    }
}

/// Numerically stable log(1 + e^x).
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function 1 / (1 + e^{-x}).
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
