//! Special functions and random-variate generators.
//!
//! All generators take the random stream explicitly and are pure functions
//! of (parameters, stream state).

mod bessel;
mod gig;
mod variates;

pub use bessel::{bessel_k_dnu, log_bessel_k};
pub use gig::{gig_moments, sample_gig, GigMoments, GigParams};
pub use variates::{sample_gamma, sample_inverse_gamma};

pub(crate) use gig::{gig_moments_unchecked, sample_gig_unchecked};
pub(crate) use variates::{inverse_gamma_unchecked, log_gamma_variate, standard_normal};

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn log_gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma_fn requires finite x > 0, got {x}")));
    }
    Ok(ln_gamma(x))
}

pub(crate) fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection keeps the series in its accurate range
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("digamma requires finite x > 0, got {x}")));
    }
    Ok(psi(x))
}

pub(crate) fn psi(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    // Bernoulli-number asymptotic series through x^-16
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0
                        - r * (1.0 / 132.0 - r * (691.0 / 32_760.0 - r * (1.0 / 12.0 - r * 3_617.0 / 8_160.0)))))));
    acc + x.ln() - 0.5 / x - series
}

/// ψ'(x) for x > 0.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / x
        + r / 2.0
        + r / x
            * (1.0 / 6.0
                - r * (1.0 / 30.0
                    - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2_730.0 - r * 7.0 / 6.0))))));
    acc + series
}

/// Solve `weight * ψ(c) = target` for c > 0.
///
/// Newton steps on ψ, falling back to bisection (in log c) whenever a step
/// leaves the current bracket. The bracket starts at (1e-8, 1e8) and is
/// widened only when the root lies outside it.
pub fn solve_digamma(target: f64, weight: u32) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::domain(format!(
            "solve_digamma target must be finite, got {target}"
        )));
    }
    if weight == 0 {
        return Err(Error::domain("solve_digamma weight must be positive"));
    }
    let w = weight as f64;
    let t = target / w;
    let (mut lo, mut hi) = (1e-8_f64, 1e8_f64);
    while psi(lo) > t && lo > 1e-300 {
        lo *= 1e-8;
    }
    while psi(hi) < t && hi < 1e300 {
        hi *= 1e8;
    }
    // Minka's initialisation of the inverse digamma
    let mut c = if t >= -2.22 {
        t.exp() + 0.5
    } else {
        -1.0 / (t + EULER_GAMMA)
    };
    c = c.clamp(lo, hi);
    for _ in 0..200 {
        let f = psi(c) - t;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let mut next = c - f / trigamma(c);
        if !(next > lo && next < hi) {
            next = (lo * hi).sqrt();
        }
        if ((next - c) / c).abs() < 1e-15 {
            c = next;
            break;
        }
        c = next;
    }
    Ok(c)
}

/// Upper regularised incomplete gamma Q(a, x).
pub(crate) fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        // series for P
        let mut sum = 1.0 / a;
        let mut del = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        // Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-x + a * x.ln() - ln_gamma(a)).exp() * h
    }
}

/// Standard normal upper tail 1 - Φ(z).
pub fn normal_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    let q = gamma_q(0.5, 0.5 * z * z);
    if z >= 0.0 {
        0.5 * q
    } else {
        1.0 - 0.5 * q
    }
}

/// Standard normal quantile by Newton iteration on [`normal_sf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = 0.0;
    for _ in 0..100 {
        let f = (1.0 - normal_sf(z)) - p;
        let dens = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let step = f / dens.max(1e-300);
        z -= step.clamp(-2.0, 2.0);
        if step.abs() < 1e-14 {
            break;
        }
    }
    z
}
