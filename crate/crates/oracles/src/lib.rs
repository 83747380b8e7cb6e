//! Reference computations used only by tests.
//!
//! Everything here is deliberately written without reference to `ncg-core`
//! so that checks built on it stay independent of the code under test:
//! adaptive Gauss-Kronrod quadrature, tabulated CDFs built from an
//! unnormalised density, Kolmogorov-Smirnov statistics and a normal CDF
//! computed by series / continued fraction, a nested-quadrature posterior
//! for a one-coefficient model, and direct simulation of the prior hierarchy.

pub mod ks;
pub mod normal;
pub mod posterior;
pub mod prior_sim;
pub mod quad;
pub mod tabulated;

pub use ks::{ks_one_sample, ks_two_sample};
pub use normal::{normal_cdf, normal_quantile};
pub use quad::{integrate, integrate_to_infinity, integrate_whole_line};
pub use tabulated::TabulatedCdf;

/// Sample mean and (n-1) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Standard error of the mean of a correlated series by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let (_, v) = mean_var(&means);
    (v / batches as f64).sqrt()
}
