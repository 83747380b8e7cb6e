//! Gamma and inverse-gamma variates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Uniform on (0, 1]; safe to take the log of.
pub(crate) fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// ln of a Gamma(shape, 1) variate.
///
/// Marsaglia–Tsang squeeze-free rejection for shape ≥ 1; for shape < 1 a
/// Gamma(shape + 1) draw is multiplied by U^{1/shape}. Staying in log space
/// keeps tiny shapes from underflowing to zero before the caller decides
/// how to clamp.
pub(crate) fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let boost = open_uniform(rng).ln() / shape;
        return log_gamma_variate(shape + 1.0, rng) + boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z = standard_normal(rng);
        let t = 1.0 + c * z;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = open_uniform(rng);
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return (d * v).ln();
        }
    }
}

pub(crate) fn gamma_unchecked<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    (log_gamma_variate(shape, rng) - rate.ln())
        .exp()
        .clamp(f64::MIN_POSITIVE, f64::MAX)
}

pub(crate) fn inverse_gamma_unchecked<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    (scale.ln() - log_gamma_variate(shape, rng))
        .exp()
        .clamp(f64::MIN_POSITIVE, f64::MAX)
}

fn check_positive(name: &str, what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name}: {what} must be finite and positive, got {v}"
        )))
    }
}

/// Draw from Gamma(shape, rate), mean shape/rate.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    check_positive("sample_gamma", "shape", shape)?;
    check_positive("sample_gamma", "rate", rate)?;
    Ok(gamma_unchecked(shape, rate, rng))
}

/// Draw from InverseGamma(shape, scale), i.e. scale / Gamma(shape, 1).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    check_positive("sample_inverse_gamma", "shape", shape)?;
    check_positive("sample_inverse_gamma", "scale", scale)?;
    Ok(inverse_gamma_unchecked(shape, scale, rng))
}
