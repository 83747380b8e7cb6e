//! Posterior of a single regression coefficient under a depth-two
//! compound-gamma prior, by nested quadrature.
//!
//! Model: y = xβ + ε, ε ~ N(0, σ²), β | σ², z₁ ~ N(0, σ² z₁),
//! z₁ | z₂ ~ Gamma(c₁, rate z₂), z₂ ~ Gamma(c₂, rate φ), σ² ~ InvGamma(c₀, d₀).
//! σ² is integrated in closed form; (log z₁, log z₂) numerically for each β
//! on a grid.

use crate::quad::integrate;

/// ln Γ(x), x > 0: shift up to x ≥ 15 then Stirling's series.
pub fn ln_gamma(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut x = x;
    while x < 15.0 {
        shift += x.ln();
        x += 1.0;
    }
    let x2 = x * x;
    let series =
        1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2) - 1.0 / (1680.0 * x * x2 * x2 * x2);
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

#[derive(Debug, Clone)]
pub struct SmallModel {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub phi: f64,
    pub c0: f64,
    pub d0: f64,
}

impl SmallModel {
    fn rss(&self, beta: f64) -> f64 {
        self.x.iter().zip(&self.y).map(|(x, y)| (y - x * beta).powi(2)).sum()
    }

    /// ln p(y, β | z₁) with σ² integrated out.
    fn log_lik_prior(&self, beta: f64, log_z1: f64) -> f64 {
        let n = self.y.len() as f64;
        let a = self.c0 + 0.5 * (n + 1.0);
        let b = self.d0 + 0.5 * self.rss(beta) + 0.5 * beta * beta * (-log_z1).exp();
        -0.5 * (n + 1.0) * (2.0 * std::f64::consts::PI).ln() + self.c0 * self.d0.ln() - ln_gamma(self.c0) + ln_gamma(a)
            - a * b.ln()
            - 0.5 * log_z1
    }

    /// ln of the joint density of (log z₁, log z₂), Jacobian included.
    fn log_scale_prior(&self, u1: f64, u2: f64) -> f64 {
        let (z1, z2) = (u1.exp(), u2.exp());
        self.c1 * u2 + self.c1 * u1 - z2 * z1 - ln_gamma(self.c1) + self.c2 * self.phi.ln() + self.c2 * u2
            - self.phi * z2
            - ln_gamma(self.c2)
    }

    /// ln p(y, β) by nested quadrature over (log z₁, log z₂).
    pub fn log_joint(&self, beta: f64) -> f64 {
        // a rough shift keeps the integrand near unity at its peak
        let shift = self.log_lik_prior(beta, 0.0);
        let inner = |u1: f64| {
            let base = self.log_lik_prior(beta, u1) - shift;
            // z₂ | z₁ concentrates around (c₁ + c₂) / (z₁ + φ)
            let centre = ((self.c1 + self.c2) / (u1.exp() + self.phi)).ln();
            integrate(
                |u2| (base + self.log_scale_prior(u1, u2)).exp(),
                centre - 30.0,
                centre + 15.0,
                1e-14,
                1e-10,
            )
        };
        let outer = integrate(inner, -60.0, 40.0, 1e-13, 1e-10);
        shift + outer.ln()
    }

    /// Same quantity with z₂ integrated analytically (beta-prime prior on z₁).
    pub fn log_joint_closed(&self, beta: f64) -> f64 {
        let shift = self.log_lik_prior(beta, 0.0);
        let f = |u1: f64| {
            let z1 = u1.exp();
            let lp = ln_gamma(self.c1 + self.c2) - ln_gamma(self.c1) - ln_gamma(self.c2)
                + self.c2 * self.phi.ln()
                + self.c1 * u1
                - (self.c1 + self.c2) * (z1 + self.phi).ln();
            (self.log_lik_prior(beta, u1) - shift + lp).exp()
        };
        shift + integrate(f, -60.0, 40.0, 1e-300, 1e-10).ln()
    }

    /// Posterior of β tabulated on `points` equally spaced nodes of [lo, hi].
    pub fn beta_posterior(&self, lo: f64, hi: f64, points: usize) -> GridPosterior {
        let h = (hi - lo) / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = grid.iter().map(|&b| self.log_joint(b)).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        // composite Simpson for the totals (points must be odd)
        let simpson = |g: &dyn Fn(usize) -> f64| {
            let mut s = g(0) + g(points - 1);
            for i in 1..points - 1 {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i);
            }
            s * h / 3.0
        };
        let mass = simpson(&|i| dens[i]);
        let mean = simpson(&|i| dens[i] * grid[i]) / mass;
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let last = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= last);
        GridPosterior {
            grid,
            cdf,
            mean,
            log_evidence: peak + mass.ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    /// ln p(y).
    pub log_evidence: f64,
}

impl GridPosterior {
    pub fn cdf_at(&self, b: f64) -> f64 {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if b <= lo {
            return 0.0;
        }
        if b >= hi {
            return 1.0;
        }
        let h = self.grid[1] - lo;
        let t = (b - lo) / h;
        let i = (t.floor() as usize).min(self.grid.len() - 2);
        let w = t - i as f64;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stirling_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn numeric_and_closed_scale_integrals_agree() {
        let m = SmallModel {
            x: vec![1.0, -0.5],
            y: vec![0.8, -0.2],
            c1: 1.0,
            c2: 1.5,
            phi: 1.0,
            c0: 1.0,
            d0: 1.0,
        };
        for &b in &[-1.0, 0.0, 0.3, 2.0] {
            assert!((m.log_joint(b) - m.log_joint_closed(b)).abs() < 1e-7, "{b}");
        }
    }
}
