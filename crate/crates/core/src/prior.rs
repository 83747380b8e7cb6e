//! The compound-gamma scale prior: its two sampling representations, the
//! implied marginal density of β (with σ² = 1), moments, and numeric checks
//! of the prior conditions behind posterior consistency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_hyperparameters, Hyperparameters};
use crate::special::{log_gamma_variate, normal_sf};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// ln z₁ from the chain z_N ~ G(c_N, φ), z_k ~ G(c_k, z_{k+1}).
pub fn sample_prior_log_scale_chain<R: Rng + ?Sized>(h: &Hyperparameters, rng: &mut R) -> f64 {
    let mut log_rate = h.phi.ln();
    for &c in h.shapes.iter().rev() {
        log_rate = log_gamma_variate(c, rng) - log_rate;
    }
    log_rate
}

/// z₁ from the chain representation.
pub fn sample_prior_scale_chain<R: Rng + ?Sized>(h: &Hyperparameters, rng: &mut R) -> f64 {
    sample_prior_log_scale_chain(h, rng).exp()
}

/// ln λ from the product representation: λ = ∏ₖ wₖ with independent
/// w_odd ~ G(c_k, 1) and w_even ~ IG(c_k, 1); the terminal factor carries
/// rate φ (gamma) or scale φ (inverse gamma).
pub fn sample_prior_log_scale_product<R: Rng + ?Sized>(h: &Hyperparameters, rng: &mut R) -> f64 {
    let n = h.depth();
    let mut acc = 0.0;
    for (k, &c) in h.shapes.iter().enumerate() {
        let g = log_gamma_variate(c, rng);
        let sign = if Hyperparameters::is_gamma_level(k) { 1.0 } else { -1.0 };
        acc += sign * g;
        if k + 1 == n {
            acc -= sign * h.phi.ln();
        }
    }
    acc
}

pub fn sample_prior_scale_product<R: Rng + ?Sized>(h: &Hyperparameters, rng: &mut R) -> f64 {
    sample_prior_log_scale_product(h, rng).exp()
}

/// β drawn from the prior with σ² = 1.
pub fn sample_prior_beta<R: Rng + ?Sized>(h: &Hyperparameters, rng: &mut R) -> f64 {
    let log_lambda = sample_prior_log_scale_product(h, rng);
    (0.5 * log_lambda).exp() * crate::special::standard_normal(rng)
}

fn log_normal_pdf(x: f64, log_var: f64) -> f64 {
    let q = if x == 0.0 { 0.0 } else { x * x * (-log_var).exp() };
    -0.5 * (LN_2PI + log_var + q)
}

/// (log-mean-exp, delta-method standard error) of a set of log weights.
fn log_mean_exp(logs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let top = logs.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::INFINITY {
        return (f64::INFINITY, 0.0);
    }
    if top == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let mut n = 0usize;
    let mut s = 0.0;
    let mut s2 = 0.0;
    for l in logs {
        let w = (l - top).exp();
        s += w;
        s2 += w * w;
        n += 1;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    (top + mean.ln(), (var / nf).sqrt() / mean)
}

pub const MIN_DENSITY_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x: f64,
    pub log_density: f64,
    pub stderr: f64,
}

fn check_draws(n_mc: usize) -> Result<()> {
    if n_mc < MIN_DENSITY_DRAWS {
        return Err(Error::domain(format!(
            "density estimates need at least {MIN_DENSITY_DRAWS} draws, got {n_mc}"
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of ln f(x), f the marginal prior density of β.
pub fn marginal_log_density<R: Rng + ?Sized>(
    x: f64,
    h: &Hyperparameters,
    n_mc: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let p = density_curve(&[x], h, n_mc, rng)?;
    Ok((p[0].log_density, p[0].stderr))
}

/// [`marginal_log_density`] on a grid, reusing the same scale draws at
/// every grid point.
pub fn density_curve<R: Rng + ?Sized>(
    grid: &[f64],
    h: &Hyperparameters,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<DensityPoint>> {
    check_draws(n_mc)?;
    validate_hyperparameters(h)?;
    if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("grid point {x} is not finite")));
    }
    let log_scales: Vec<f64> = (0..n_mc).map(|_| sample_prior_log_scale_product(h, rng)).collect();
    Ok(grid
        .iter()
        .map(|&x| {
            let (log_density, stderr) = log_mean_exp(log_scales.iter().map(|&l| log_normal_pdf(x, l)));
            DensityPoint { x, log_density, stderr }
        })
        .collect())
}

/// E[β²] with σ² = 1, level by level from the product representation.
/// Infinite when any even-level shape is ≤ 1.
pub fn prior_second_moment(h: &Hyperparameters) -> f64 {
    let n = h.depth();
    let mut m = 1.0;
    for (k, &c) in h.shapes.iter().enumerate() {
        let scale = if k + 1 == n { h.phi } else { 1.0 };
        if Hyperparameters::is_gamma_level(k) {
            m *= c / scale;
        } else if c <= 1.0 {
            return f64::INFINITY;
        } else {
            m *= scale / (c - 1.0);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheckInput {
    pub n: usize,
    pub p_n: usize,
    pub s_n: usize,
    pub u: f64,
}

impl ConsistencyCheckInput {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n == 0 {
            errors.push("n must be positive".to_string());
        }
        if self.p_n == 0 {
            errors.push("p_n must be positive".to_string());
        }
        if self.s_n == 0 || self.s_n > self.p_n {
            errors.push(format!("s_n must lie in 1..=p_n, got {}", self.s_n));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            errors.push(format!("u must be positive, got {}", self.u));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// k_n = √(s_n log p_n / n) / p_n.
    pub fn k_n(&self) -> f64 {
        ((self.s_n as f64) * (self.p_n as f64).ln() / self.n as f64).sqrt() / self.p_n as f64
    }

    /// p_n^{-(1+u)}.
    pub fn bound(&self) -> f64 {
        (self.p_n as f64).powf(-(1.0 + self.u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub input: ConsistencyCheckInput,
    pub hyperparameters: Hyperparameters,
    pub n_mc: usize,
    pub k_n: f64,
    pub tail_mass_estimate: f64,
    pub tail_mass_stderr: f64,
    /// 99% Wilson interval around the estimate.
    pub wilson_lower: f64,
    pub wilson_upper: f64,
    pub bound: f64,
    /// Scaling c₁ ≲ k_n² p_n^{-(1+u)} that suffices for the tail bound.
    pub sufficient_c1: f64,
    pub satisfied: bool,
}

const Z99: f64 = 2.575_829_303_548_900_4;

fn wilson(p_hat: f64, n: f64, z: f64) -> (f64, f64) {
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = p_hat + z2 / (2.0 * n);
    let half = z * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
    (((centre - half) / denom).max(0.0), ((centre + half) / denom).min(1.0))
}

/// Estimates P(|β| > k_n) under the prior (σ² = 1) and compares it with
/// p_n^{-(1+u)}. The estimate averages the exact conditional tail
/// 2Φ̄(k_n/√λ) over scale draws; the condition counts as satisfied when
/// the upper end of the 99% Wilson interval is below the bound.
pub fn check_tail_condition<R: Rng + ?Sized>(
    h: &Hyperparameters,
    input: ConsistencyCheckInput,
    n_mc: usize,
    rng: &mut R,
) -> Result<TailReport> {
    input.validate()?;
    validate_hyperparameters(h)?;
    if n_mc < 2 {
        return Err(Error::domain("tail check needs at least 2 draws"));
    }
    let k = input.k_n();
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..n_mc {
        let half_log = 0.5 * sample_prior_log_scale_product(h, rng);
        let t = 2.0 * normal_sf((k.ln() - half_log).exp());
        s += t;
        s2 += t * t;
    }
    let n = n_mc as f64;
    let est = s / n;
    let var = ((s2 / n - est * est) * n / (n - 1.0)).max(0.0);
    let (lo, hi) = wilson(est, n, Z99);
    let bound = input.bound();
    Ok(TailReport {
        input,
        hyperparameters: h.clone(),
        n_mc,
        k_n: k,
        tail_mass_estimate: est,
        tail_mass_stderr: (var / n).sqrt(),
        wilson_lower: lo,
        wilson_upper: hi,
        bound,
        sufficient_c1: k * k * bound,
        satisfied: hi <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFloorReport {
    pub hyperparameters: Hyperparameters,
    pub e_n: f64,
    pub p_n: usize,
    pub n_mc: usize,
    /// ln f(E_n); +∞ at a pole.
    pub log_density: f64,
    pub stderr: f64,
    /// -ln f(E_n) / ln p_n, reported as 0 at a pole.
    pub ratio: f64,
}

/// The density has a pole at zero exactly when some gamma-level shape is ≤ ½.
pub fn has_pole_at_zero(h: &Hyperparameters) -> bool {
    h.shapes
        .iter()
        .enumerate()
        .any(|(k, &c)| Hyperparameters::is_gamma_level(k) && c <= 0.5)
}

/// Evaluates the marginal density at ±E_n, where it attains its minimum on
/// [-E_n, E_n] (the density is even and decreasing in |x|).
pub fn check_density_floor<R: Rng + ?Sized>(
    h: &Hyperparameters,
    e_n: f64,
    p_n: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<DensityFloorReport> {
    if !(e_n >= 0.0) || !e_n.is_finite() {
        return Err(Error::domain(format!("E_n must be finite and non-negative, got {e_n}")));
    }
    if p_n < 2 {
        return Err(Error::domain(format!(
            "p_n must be at least 2 for the log ratio, got {p_n}"
        )));
    }
    validate_hyperparameters(h)?;
    let (log_density, stderr) = if e_n == 0.0 && has_pole_at_zero(h) {
        (f64::INFINITY, 0.0)
    } else {
        marginal_log_density(e_n, h, n_mc, rng)?
    };
    let ratio = if log_density == f64::INFINITY {
        0.0
    } else {
        -log_density / (p_n as f64).ln()
    };
    Ok(DensityFloorReport {
        hyperparameters: h.clone(),
        e_n,
        p_n,
        n_mc,
        log_density,
        stderr,
        ratio,
    })
}
