//! CDF of a positive random variable tabulated from its unnormalised log-density.

use crate::quad::gk15;

/// Cumulative mass on a uniform grid in `u = ln x`, each cell integrated
/// with a 15-point Kronrod rule, normalised to total mass one.
pub struct TabulatedCdf {
    u0: f64,
    du: f64,
    cum: Vec<f64>,
}

impl TabulatedCdf {
    /// `log_density` is the log of an unnormalised density in x.
    /// Mass outside `[x_lo, x_hi]` must be negligible.
    pub fn from_log_density<F: Fn(f64) -> f64>(log_density: F, x_lo: f64, x_hi: f64, cells: usize) -> Self {
        let u0 = x_lo.ln();
        let du = (x_hi.ln() - u0) / cells as f64;
        // locate the peak to avoid overflow
        let mut peak = f64::NEG_INFINITY;
        for i in 0..=cells {
            let u = u0 + du * i as f64;
            peak = peak.max(log_density(u.exp()) + u);
        }
        let g = |u: f64| (log_density(u.exp()) + u - peak).exp();
        let mut cum = Vec::with_capacity(cells + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..cells {
            let a = u0 + du * i as f64;
            acc += gk15(&g, a, a + du).0;
            cum.push(acc);
        }
        for c in cum.iter_mut() {
            *c /= acc;
        }
        TabulatedCdf { u0, du, cum }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let t = (x.ln() - self.u0) / self.du;
        if t <= 0.0 {
            return 0.0;
        }
        let i = t.floor() as usize;
        if i >= self.cum.len() - 1 {
            return 1.0;
        }
        let w = t - i as f64;
        self.cum[i] * (1.0 - w) + self.cum[i + 1] * w
    }

    /// Smallest tabulated x with CDF >= p (linear interpolation between nodes).
    pub fn quantile(&self, p: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < p).max(1).min(self.cum.len() - 1);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        (self.u0 + self.du * ((i - 1) as f64 + w)).exp()
    }
}
