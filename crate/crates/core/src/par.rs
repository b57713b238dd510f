//! Map/reduce helpers: rayon under the `std` feature, plain loops otherwise.
//!
//! With `deterministic` set, per-item results are collected first and folded
//! left to right, so the sum does not depend on the thread count.

use alloc::vec::Vec;

use crate::bound::BoundGradient;

#[cfg(feature = "std")]
use rayon::prelude::*;

#[cfg(feature = "std")]
pub(crate) fn map<T, F>(idx: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    idx.par_iter().map(|&i| f(i)).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map<T, F>(idx: &[usize], f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    idx.iter().map(|&i| f(i)).collect()
}

#[cfg(feature = "std")]
pub(crate) fn sum_f64<F>(idx: &[usize], deterministic: bool, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if deterministic {
        map(idx, f).into_iter().sum()
    } else {
        idx.par_iter().map(|&i| f(i)).sum()
    }
}

#[cfg(not(feature = "std"))]
pub(crate) fn sum_f64<F>(idx: &[usize], _deterministic: bool, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    idx.iter().map(|&i| f(i)).sum()
}

#[cfg(feature = "std")]
pub(crate) fn sum_gradient<F>(idx: &[usize], deterministic: bool, f: F) -> BoundGradient
where
    F: Fn(usize) -> BoundGradient + Sync + Send,
{
    if deterministic {
        map(idx, f)
            .into_iter()
            .fold(BoundGradient::default(), |a, b| a + b)
    } else {
        idx.par_iter()
            .map(|&i| f(i))
            .reduce(BoundGradient::default, |a, b| a + b)
    }
}

#[cfg(not(feature = "std"))]
pub(crate) fn sum_gradient<F>(idx: &[usize], _deterministic: bool, f: F) -> BoundGradient
where
    F: Fn(usize) -> BoundGradient,
{
    idx.iter()
        .map(|&i| f(i))
        .fold(BoundGradient::default(), |a, b| a + b)
}
