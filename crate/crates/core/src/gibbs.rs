//! Blocked Gibbs sampler with optional Monte Carlo EM updates of the shapes.
//!
//! Each sweep draws β jointly, then the scale levels 1..N, then σ².

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_hyperparameters, Dataset, GibbsState, Hyperparameters, LogScaleStats, PosteriorDraws, Z_MAX, Z_MIN,
};
use crate::special::{inverse_gamma_unchecked, sample_gig_unchecked, solve_digamma, standard_normal, GigParams};

pub const SHAPE_MIN: f64 = 1e-3;
pub const SHAPE_MAX: f64 = 1e3;
/// EM rounds stop once no shape moves by more than this.
pub const EM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McemConfig {
    /// Iterations averaged per EM round.
    pub window: usize,
    pub max_rounds: usize,
}

impl Default for McemConfig {
    fn default() -> Self {
        McemConfig {
            window: 500,
            max_rounds: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub total_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub mcem: Option<McemConfig>,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            total_iters: 15_000,
            burn_in: 2_000,
            thin: 1,
            mcem: None,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.total_iters == 0 {
            errors.push("total_iters must be positive".to_string());
        }
        if self.burn_in >= self.total_iters {
            errors.push(format!(
                "burn_in ({}) must be below total_iters ({})",
                self.burn_in, self.total_iters
            ));
        }
        if self.thin == 0 {
            errors.push("thin must be positive".to_string());
        }
        if let Some(m) = self.mcem {
            if m.window == 0 || m.max_rounds == 0 {
                errors.push("mcem window and max_rounds must be positive".to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

/// XᵀX and Xᵀy, computed once per chain.
#[derive(Debug, Clone)]
pub struct Gram {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl Gram {
    pub fn new(data: &Dataset) -> Self {
        Gram {
            xtx: data.x.tr_mul(&data.x),
            xty: data.x.tr_mul(&data.y),
        }
    }
}

/// Draw β ~ N(Σ⁻¹Xᵀy, σ²Σ⁻¹) with Σ = XᵀX + diag(1/λ).
///
/// Works with A = D^{½}XᵀXD^{½} + I (D = diag λ), whose Cholesky factor L
/// gives β = D^{½}(A⁻¹D^{½}Xᵀy + σL⁻ᵀε). A stays well conditioned however
/// small or large the local scales get.
pub fn update_beta_with<R: Rng + ?Sized>(
    state: &GibbsState,
    gram: &Gram,
    iteration: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = gram.xty.len();
    let d: DVector<f64> = DVector::from_fn(p, |j, _| (0.5 * state.log_local_scale(j)).exp());
    let mut a = gram.xtx.clone();
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] *= d[i] * d[j];
        }
        a[(i, i)] += 1.0;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler {
            iteration,
            message: "non-finite entry in the beta precision".into(),
        });
    }
    let chol = Cholesky::new(a).ok_or_else(|| Error::Sampler {
        iteration,
        message: "beta precision is not positive definite".into(),
    })?;
    let rhs = gram.xty.component_mul(&d);
    let mean = chol.solve(&rhs);
    let eps = DVector::from_fn(p, |_, _| standard_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| Error::Sampler {
            iteration,
            message: "triangular solve failed".into(),
        })?;
    let beta = (mean + noise * state.sigma2.sqrt()).component_mul(&d);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler {
            iteration,
            message: "non-finite beta draw".into(),
        });
    }
    Ok(beta)
}

pub fn update_beta<R: Rng + ?Sized>(state: &GibbsState, data: &Dataset, rng: &mut R) -> Result<DVector<f64>> {
    update_beta_with(state, &Gram::new(data), 0, rng)
}

/// Redraw level k (0-based) for every coefficient. With
/// qⱼ = βⱼ² / (σ² ∏_{i≠k} z_ij): gamma levels draw GIG(c_k - ½, qⱼ, 2φ_k),
/// inverse-gamma levels draw IG(c_k + ½, qⱼ/2 + φ_k). Returns the new row
/// and the number of draws that had to be clamped into [Z_MIN, Z_MAX].
pub fn update_z_level<R: Rng + ?Sized>(
    k: usize,
    state: &GibbsState,
    h: &Hyperparameters,
    rng: &mut R,
) -> Result<(DVector<f64>, usize)> {
    if k >= h.depth() || state.z.nrows() != h.depth() {
        return Err(Error::domain(format!("level {k} out of range for depth {}", h.depth())));
    }
    let c = h.shapes[k];
    let rate = h.level_rate(k);
    let log_sigma2 = state.sigma2.ln();
    let p = state.beta.len();
    let mut row = DVector::zeros(p);
    let mut clamped = 0;
    for j in 0..p {
        let b = state.beta[j];
        let log_others = state.log_local_scale(j) - state.z[(k, j)].ln();
        let q = if b == 0.0 {
            0.0
        } else {
            (2.0 * b.abs().ln() - log_sigma2 - log_others).exp()
        };
        let draw = if Hyperparameters::is_gamma_level(k) {
            let lambda = c - 0.5;
            // β exactly zero with λ ≤ 0 would make the conditional improper
            let chi = if lambda <= 0.0 { q.max(1e-300) } else { q };
            sample_gig_unchecked(
                GigParams {
                    lambda,
                    chi,
                    psi: 2.0 * rate,
                },
                rng,
            )
        } else {
            inverse_gamma_unchecked(c + 0.5, 0.5 * q + rate, rng)
        };
        let kept = draw.clamp(Z_MIN, Z_MAX);
        if kept != draw {
            clamped += 1;
        }
        row[j] = kept;
    }
    Ok((row, clamped))
}

/// σ² ~ IG((n + p + 2c₀)/2, (‖y - Xβ‖² + Σⱼβⱼ²/λⱼ + 2d₀)/2).
pub fn sigma2_conditional(state: &GibbsState, data: &Dataset, h: &Hyperparameters) -> (f64, f64) {
    let resid = &data.y - &data.x * &state.beta;
    let penalty: f64 = (0..state.beta.len())
        .map(|j| {
            let b = state.beta[j];
            if b == 0.0 {
                0.0
            } else {
                (2.0 * b.abs().ln() - state.log_local_scale(j)).exp()
            }
        })
        .sum();
    let shape = 0.5 * (data.n() + data.p()) as f64 + h.c0;
    let scale = 0.5 * (resid.norm_squared() + penalty) + h.d0;
    (shape, scale)
}

pub fn update_sigma2<R: Rng + ?Sized>(state: &GibbsState, data: &Dataset, h: &Hyperparameters, rng: &mut R) -> f64 {
    let (shape, scale) = sigma2_conditional(state, data, h);
    inverse_gamma_unchecked(shape, scale, rng)
}

/// Solve p·ψ(c_k) = Σⱼ(-1)^{k+1} mean log z_kj + p·log φ·I(k = N) for every
/// level, clamping the result into [SHAPE_MIN, SHAPE_MAX].
pub fn mcem_update_c(stats: &LogScaleStats, h: &Hyperparameters) -> Result<Hyperparameters> {
    if stats.iterations == 0 {
        return Err(Error::Em("no iterations in the EM window".into()));
    }
    shapes_from_log_totals(&stats.level_totals(), stats.p, h)
}

/// Shared M-step: `totals[k]` is Σⱼ E[log z_kj].
pub(crate) fn shapes_from_log_totals(totals: &[f64], p: usize, h: &Hyperparameters) -> Result<Hyperparameters> {
    if totals.len() != h.depth() {
        return Err(Error::Em(format!(
            "expected {} level statistics, got {}",
            h.depth(),
            totals.len()
        )));
    }
    let weight = u32::try_from(p).map_err(|_| Error::Em("too many coefficients".into()))?;
    let mut out = h.clone();
    for (k, &t) in totals.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::Em(format!("non-finite log-scale statistic at level {}", k + 1)));
        }
        let sign = if Hyperparameters::is_gamma_level(k) { 1.0 } else { -1.0 };
        let mut target = sign * t;
        if k + 1 == h.depth() {
            target += p as f64 * h.phi.ln();
        }
        out.shapes[k] = solve_digamma(target, weight)?.clamp(SHAPE_MIN, SHAPE_MAX);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRound {
    pub round: usize,
    pub shapes: Vec<f64>,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsRun {
    pub draws: PosteriorDraws,
    /// Hyperparameters in force during the kept phase.
    pub hyperparameters: Hyperparameters,
    pub em_trace: Vec<EmRound>,
    pub clamp_events: usize,
    pub final_state: GibbsState,
}

struct Chain<'a> {
    data: &'a Dataset,
    gram: Gram,
    state: GibbsState,
    clamp_events: usize,
    iteration: usize,
}

impl Chain<'_> {
    fn sweep<R: Rng + ?Sized>(&mut self, h: &Hyperparameters, rng: &mut R) -> Result<()> {
        self.iteration += 1;
        self.state.beta = update_beta_with(&self.state, &self.gram, self.iteration, rng)?;
        for k in 0..h.depth() {
            let (row, clamped) = update_z_level(k, &self.state, h, rng)?;
            self.state.z.set_row(k, &row.transpose());
            self.clamp_events += clamped;
        }
        self.state.sigma2 = update_sigma2(&self.state, self.data, h, rng);
        if !(self.state.sigma2 > 0.0) || !self.state.sigma2.is_finite() {
            return Err(Error::Sampler {
                iteration: self.iteration,
                message: "invalid sigma2 draw".into(),
            });
        }
        Ok(())
    }
}

fn sample_variance(y: &DVector<f64>) -> f64 {
    let n = y.len();
    if n < 2 {
        return 1.0;
    }
    let m = y.mean();
    let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

/// Run one chain: burn-in, then (if enabled) EM rounds, then the kept phase
/// of `total_iters - burn_in` iterations thinned by `thin`.
pub fn run_gibbs<R: Rng + ?Sized>(
    data: &Dataset,
    h: &Hyperparameters,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsRun> {
    validate_hyperparameters(h)?;
    cfg.validate()?;
    let mut h = h.clone();
    let mut chain = Chain {
        data,
        gram: Gram::new(data),
        state: GibbsState::initial(h.depth(), data.p(), sample_variance(&data.y)),
        clamp_events: 0,
        iteration: 0,
    };
    for _ in 0..cfg.burn_in {
        chain.sweep(&h, rng)?;
    }
    let mut em_trace = Vec::new();
    if let Some(m) = cfg.mcem {
        for round in 1..=m.max_rounds {
            let mut stats = LogScaleStats::new(h.depth(), data.p());
            for _ in 0..m.window {
                chain.sweep(&h, rng)?;
                stats.record(&chain.state.z);
            }
            let next = mcem_update_c(&stats, &h)?;
            let max_change = next
                .shapes
                .iter()
                .zip(&h.shapes)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            h = next;
            em_trace.push(EmRound {
                round,
                shapes: h.shapes.clone(),
                max_change,
            });
            if max_change < EM_TOLERANCE {
                break;
            }
        }
    }
    let kept_iters = cfg.total_iters - cfg.burn_in;
    let kept = kept_iters / cfg.thin;
    let p = data.p();
    let mut beta_draws = DMatrix::zeros(kept, p);
    let mut sigma2_draws = Vec::with_capacity(kept);
    let mut iterations = Vec::with_capacity(kept);
    let mut stats = LogScaleStats::new(h.depth(), p);
    let mut row = 0;
    for i in 1..=kept_iters {
        chain.sweep(&h, rng)?;
        stats.record(&chain.state.z);
        if i % cfg.thin == 0 && row < kept {
            beta_draws.set_row(row, &chain.state.beta.transpose());
            sigma2_draws.push(chain.state.sigma2);
            iterations.push(chain.iteration);
            row += 1;
        }
    }
    Ok(GibbsRun {
        draws: PosteriorDraws {
            iterations,
            beta_draws,
            sigma2_draws,
            z_log_sums: Some(stats),
        },
        hyperparameters: h,
        em_trace,
        clamp_events: chain.clamp_events,
        final_state: chain.state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CoefficientSummary {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if w == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Posterior mean, sd and equal-tailed interval at `level` per coefficient.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<Vec<CoefficientSummary>> {
    if draws.kept() == 0 {
        return Err(Error::Inference("no kept draws to summarise".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("credible level must lie in (0, 1), got {level}")));
    }
    let m = draws.kept();
    let alpha = 0.5 * (1.0 - level);
    Ok((0..draws.beta_draws.ncols())
        .map(|j| {
            let mut col: Vec<f64> = draws.beta_draws.column(j).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            // summing sorted values keeps the mean independent of draw order
            let mean = col.iter().sum::<f64>() / m as f64;
            let sd = if m > 1 {
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
            } else {
                0.0
            };
            CoefficientSummary {
                mean,
                sd,
                lower: quantile_sorted(&col, alpha),
                upper: quantile_sorted(&col, 1.0 - alpha),
            }
        })
        .collect())
}
