//! Hyperparameters, datasets, sampler states and draw storage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every scale draw is clamped into this range.
pub const Z_MIN: f64 = 1e-12;
pub const Z_MAX: f64 = 1e12;

/// Shapes c₁..c_N of the compounded gammas, terminal rate φ and the
/// inverse-gamma prior IG(c₀, d₀) on σ².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub shapes: Vec<f64>,
    pub phi: f64,
    pub c0: f64,
    pub d0: f64,
}

pub const DEFAULT_SHAPE: f64 = 0.5;
pub const DEFAULT_C0: f64 = 0.01;
pub const DEFAULT_D0: f64 = 0.01;

impl Hyperparameters {
    pub fn with_depth(depth: usize) -> Self {
        Hyperparameters {
            shapes: vec![DEFAULT_SHAPE; depth],
            phi: 1.0,
            c0: DEFAULT_C0,
            d0: DEFAULT_D0,
        }
    }

    /// `ncg2`, `ncg10` or `horseshoe`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ncg2" => Ok(Self::with_depth(2)),
            "ncg10" => Ok(Self::with_depth(10)),
            "horseshoe" => Ok(Self::with_depth(4)),
            other => Err(Error::Validation(vec![format!(
                "unknown preset '{other}' (expected ncg2, ncg10 or horseshoe)"
            )])),
        }
    }

    pub fn depth(&self) -> usize {
        self.shapes.len()
    }

    /// Rate attached to level k (0-based): φ at the terminal level, 1 elsewhere.
    pub fn level_rate(&self, k: usize) -> f64 {
        if k + 1 == self.depth() {
            self.phi
        } else {
            1.0
        }
    }

    /// Levels 1, 3, 5, ... (1-based) are gamma factors, the rest inverse gamma.
    pub fn is_gamma_level(k: usize) -> bool {
        k.is_multiple_of(2)
    }
}

/// Check every invariant. Returns warnings on success.
pub fn validate_hyperparameters(h: &Hyperparameters) -> Result<Vec<String>> {
    let mut errors = Vec::new();
    if h.shapes.is_empty() {
        errors.push("shapes: depth N must be at least 1".to_string());
    }
    for (k, &c) in h.shapes.iter().enumerate() {
        if !(c > 0.0) || !c.is_finite() {
            errors.push(format!("shapes[{}]: must be finite and positive, got {c}", k + 1));
        }
    }
    for (name, v) in [("phi", h.phi), ("c0", h.c0), ("d0", h.d0)] {
        if !(v > 0.0) || !v.is_finite() {
            errors.push(format!("{name}: must be finite and positive, got {v}"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let mut warnings = Vec::new();
    let heavy: Vec<String> = h
        .shapes
        .iter()
        .enumerate()
        .filter(|&(k, &c)| !Hyperparameters::is_gamma_level(k) && c <= 1.0)
        .map(|(k, _)| format!("c{}", k + 1))
        .collect();
    if !heavy.is_empty() {
        warnings.push(format!(
            "prior second moment of beta is infinite: even-level shapes {} are <= 1",
            heavy.join(", ")
        ));
    }
    Ok(warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta0: DVector<f64>,
    pub sigma0sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, truth: Option<Truth>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::data(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % x.nrows(), idx / x.nrows());
            return Err(Error::data(format!("X[{r}, {c}] is not finite")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("y[{i}] is not finite")));
        }
        if let Some(t) = &truth {
            if t.beta0.len() != x.ncols() {
                return Err(Error::data(format!(
                    "true beta has {} entries but X has {} columns",
                    t.beta0.len(),
                    x.ncols()
                )));
            }
        }
        Ok(Dataset { x, y, truth })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// One Gibbs iterate. `z` is N×p: row k holds level k+1 for every coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub beta: DVector<f64>,
    pub z: DMatrix<f64>,
    pub sigma2: f64,
}

impl GibbsState {
    /// β = 0, every scale 1.
    pub fn initial(depth: usize, p: usize, sigma2: f64) -> Self {
        GibbsState {
            beta: DVector::zeros(p),
            z: DMatrix::from_element(depth, p, 1.0),
            sigma2,
        }
    }

    pub fn log_local_scale(&self, j: usize) -> f64 {
        self.z.column(j).iter().map(|v| v.ln()).sum()
    }
}

/// λⱼ = ∏ₖ z_kj; the prior variance of βⱼ given the scales is σ²λⱼ.
pub fn local_scale(state: &GibbsState, j: usize) -> f64 {
    state.z.column(j).iter().product()
}

/// Running sums of Σⱼ log z_kj per level over a number of iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogScaleStats {
    pub sums: Vec<f64>,
    pub iterations: usize,
    pub p: usize,
}

impl LogScaleStats {
    pub fn new(depth: usize, p: usize) -> Self {
        LogScaleStats {
            sums: vec![0.0; depth],
            iterations: 0,
            p,
        }
    }

    pub fn record(&mut self, z: &DMatrix<f64>) {
        for (k, s) in self.sums.iter_mut().enumerate() {
            *s += z.row(k).iter().map(|v| v.ln()).sum::<f64>();
        }
        self.iterations += 1;
    }

    /// Σⱼ of the per-iteration average of log z_kj, one entry per level.
    pub fn level_totals(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.iterations as f64).collect()
    }
}

/// Kept (post burn-in, thinned) draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// Iteration number (1-based, counting burn-in) of each kept draw.
    pub iterations: Vec<usize>,
    /// kept × p.
    pub beta_draws: DMatrix<f64>,
    pub sigma2_draws: Vec<f64>,
    pub z_log_sums: Option<LogScaleStats>,
}

impl PosteriorDraws {
    pub fn kept(&self) -> usize {
        self.sigma2_draws.len()
    }
}
