//! Modified Bessel function of the second kind, in log scale.
//!
//! The order is reduced to μ ∈ [-½, ½) plus an integer count. K_μ and
//! K_{μ+1} come from Temme's series (x < 2) or Steed's continued fraction
//! (x ≥ 2); the integer part is covered by the forward recurrence, carried
//! as a sum of log ratios so nothing overflows.

use std::f64::consts::PI;

use crate::error::{Error, Result};

// Taylor coefficients of 1/Γ(z) about 0: 1/Γ(z) = Σ_{k≥1} c_k z^k.
const RECIP_GAMMA: [f64; 28] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
];

/// (gam1, gam2, 1/Γ(1+μ), 1/Γ(1-μ)) for |μ| ≤ ½, where
/// gam1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ) and gam2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let m2 = mu * mu;
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut pow = 1.0;
    for k in 0..RECIP_GAMMA.len() / 2 {
        gam2 += RECIP_GAMMA[2 * k] * pow;
        gam1 -= RECIP_GAMMA[2 * k + 1] * pow;
        pow *= m2;
    }
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// (ln K_μ(x), ln(K_{μ+1}(x) / K_μ(x))) for |μ| ≤ ½.
fn log_k_base(mu: f64, x: f64) -> (f64, f64) {
    const EPS: f64 = 1e-17;
    const MAXIT: usize = 100_000;
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < 1e-15 { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < 1e-15 { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let m2 = mu * mu;
        for i in 1..MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - m2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        // K_{μ+1} = sum1 · 2/x
        (sum.ln(), (sum1 * 2.0 / x).ln() - sum.ln())
    } else {
        let m2 = mu * mu;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - m2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let log_k = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
        (log_k, ((mu + x + 0.5 - h) / x).ln())
    }
}

/// ln K_ν(x) without argument checks; x must be positive.
pub(crate) fn log_bessel_k_abs(nu: f64, x: f64) -> f64 {
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut log_k, log_r0) = log_k_base(mu, x);
    if nl >= 1.0 {
        log_k += log_r0;
        let mut r = log_r0.exp();
        let mut order = mu + 1.0;
        for _ in 1..(nl as usize) {
            // K_{ν+1}/K_ν = 2ν/x + K_{ν-1}/K_ν
            r = 2.0 * order / x + 1.0 / r;
            log_k += r.ln();
            order += 1.0;
        }
    }
    log_k
}

/// ln K_ν(x) for x > 0. Exactly symmetric in ν.
pub fn log_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() || !nu.is_finite() {
        return Err(Error::domain(format!(
            "log_bessel_k requires finite nu and x > 0, got ({nu}, {x})"
        )));
    }
    Ok(log_bessel_k_abs(nu, x))
}

/// ∂/∂ν ln K_ν(x): central difference with h = 1e-6·max(1, |ν|),
/// extrapolated once with h/2.
pub fn bessel_k_dnu(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() || !nu.is_finite() {
        return Err(Error::domain(format!(
            "bessel_k_dnu requires finite nu and x > 0, got ({nu}, {x})"
        )));
    }
    Ok(dnu_unchecked(nu, x))
}

pub(crate) fn dnu_unchecked(nu: f64, x: f64) -> f64 {
    let h = 1e-6 * nu.abs().max(1.0);
    let diff = |h: f64| (log_bessel_k_abs(nu + h, x) - log_bessel_k_abs(nu - h, x)) / (2.0 * h);
    (4.0 * diff(0.5 * h) - diff(h)) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_integer_log_k(n: usize, x: f64) -> f64 {
        // K_{n+1/2} via the terminating series √(π/2x) e^{-x} Σ (n+k)!/(k!(n-k)!) (2x)^{-k}
        let mut logs = Vec::with_capacity(n + 1);
        let mut lt = 0.0;
        for k in 0..=n {
            if k > 0 {
                lt += (((n + k) * (n - k + 1)) as f64 / (k as f64 * 2.0 * x)).ln();
            }
            logs.push(lt);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        0.5 * (PI / (2.0 * x)).ln() - x + top + s.ln()
    }

    #[test]
    fn closed_forms() {
        // K_{1/2}(x) = √(π/(2x)) e^{-x}
        let want = 0.5 * (PI / 2.0).ln() - 1.0;
        assert!((log_bessel_k(0.5, 1.0).unwrap() - want).abs() < 1e-13);
        assert_eq!(log_bessel_k(-0.5, 1.0).unwrap(), log_bessel_k(0.5, 1.0).unwrap());
        assert!((log_bessel_k(2.0, 3.0).unwrap() + 2.788_548_062_176_534).abs() < 1e-12);
        assert!(log_bessel_k(1.0, 0.0).is_err());
        assert!(log_bessel_k(1.0, -1.0).is_err());
    }

    #[test]
    fn half_integer_orders_across_range() {
        for n in [0usize, 1, 2, 5, 12, 30, 49] {
            for &x in &[1e-6, 1e-3, 0.3, 1.0, 1.999, 2.0, 7.5, 80.0, 1e4] {
                let want = half_integer_log_k(n, x);
                let got = log_bessel_k(n as f64 + 0.5, x).unwrap();
                assert!(
                    (got - want).abs() < 1e-9 * want.abs().max(1.0),
                    "n={n} x={x} got={got} want={want}"
                );
            }
        }
    }

    #[test]
    fn continuity_at_branch_switch() {
        for &nu in &[0.0, 0.3, 1.7, 10.2] {
            let a = log_bessel_k_abs(nu, 2.0 - 1e-12);
            let b = log_bessel_k_abs(nu, 2.0);
            assert!((a - b).abs() < 1e-11, "nu={nu}");
        }
    }

    #[test]
    fn order_derivative() {
        assert_eq!(bessel_k_dnu(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(bessel_k_dnu(0.0, 5.0).unwrap(), 0.0);
        let d = bessel_k_dnu(1.0, 2.0).unwrap();
        assert!(d > 0.0 && d.is_finite());
        // two step sizes agree
        let coarse = {
            let h = 2e-6;
            (log_bessel_k_abs(1.0 + h, 2.0) - log_bessel_k_abs(1.0 - h, 2.0)) / (2.0 * h)
        };
        assert!((coarse - d).abs() < 1e-6);
        assert!(bessel_k_dnu(1.0, 0.0).is_err());
    }
}
