//! Direct simulation of the shrinkage hierarchy, written against rand_distr
//! only.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Gamma, Normal};

/// Gamma with a rate parameter.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
}

/// Top-down chain: z_N ~ G(c_N, φ), z_k ~ G(c_k, z_{k+1}); returns z₁.
pub fn chain_scale<R: Rng + ?Sized>(shapes: &[f64], phi: f64, rng: &mut R) -> f64 {
    let mut rate = phi;
    for &c in shapes.iter().rev() {
        rate = gamma(c, rate, rng);
    }
    rate
}

/// |C| for C ~ Cauchy(0, scale).
pub fn half_cauchy<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    Cauchy::new(0.0, scale).unwrap().sample(rng).abs()
}

/// β with a half-Cauchy local scale whose own scale is half-Cauchy:
/// τ ~ C⁺(0,1), s ~ C⁺(0, τ), β ~ N(0, s²).
pub fn horseshoe_beta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let tau = half_cauchy(1.0, rng);
    let s = half_cauchy(tau, rng);
    Normal::new(0.0, s).unwrap().sample(rng)
}

pub fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    Normal::new(mean, sd).unwrap().sample(rng)
}
