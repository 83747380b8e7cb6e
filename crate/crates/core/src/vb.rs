//! Mean-field coordinate-ascent variational inference for the same model,
//! with shape updates driven by the variational log-scale moments.
//!
//! Factors: q(β) = N(μ*, V*); gamma levels q(z_kj) = GIG(c_k - ½, c*_kj, 2φ_k);
//! inverse-gamma levels q(z_kj) = IG(c_k + ½, c*_kj); q(σ²) = IG(a, d₀*) with
//! a = (n + p + 2c₀)/2.
//!
//! V* is scaled by 1/E[σ⁻²], the exact coordinate update for q(β), so that
//! every sweep increases the ELBO.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{shapes_from_log_totals, EmRound, Gram, EM_TOLERANCE};
use crate::model::{validate_hyperparameters, Dataset, Hyperparameters};
use crate::special::{gig_moments_unchecked, ln_gamma, psi, GigParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    pub log_det_v: f64,
    /// N×p: χ of the GIG factor (gamma levels) or scale of the IG factor.
    pub c_star: DMatrix<f64>,
    pub d0_star: f64,
    pub e_z: DMatrix<f64>,
    pub e_inv_z: DMatrix<f64>,
    pub e_log_z: DMatrix<f64>,
    pub e_inv_sigma2: f64,
    pub e_beta2: DVector<f64>,
}

impl VariationalState {
    /// Unit scale moments, μ* = 0, and E[σ⁻²] = 1/var(y).
    pub fn initial(data: &Dataset, h: &Hyperparameters) -> Self {
        let (depth, p) = (h.depth(), data.p());
        let a = sigma2_shape(data, h);
        let n = data.n();
        let var = if n > 1 {
            let m = data.y.mean();
            data.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            1.0
        };
        let var = if var > 0.0 && var.is_finite() { var } else { 1.0 };
        VariationalState {
            mu_star: DVector::zeros(p),
            v_star: DMatrix::zeros(p, p),
            log_det_v: 0.0,
            c_star: DMatrix::zeros(depth, p),
            d0_star: a * var,
            e_z: DMatrix::from_element(depth, p, 1.0),
            e_inv_z: DMatrix::from_element(depth, p, 1.0),
            e_log_z: DMatrix::zeros(depth, p),
            e_inv_sigma2: 1.0 / var,
            e_beta2: DVector::zeros(p),
        }
    }

    /// ln ∏ₖ E[1/z_kj].
    fn log_prior_precision(&self, j: usize) -> f64 {
        self.e_inv_z.column(j).iter().map(|v| v.ln()).sum()
    }

    /// Marginal 95%-style interval μⱼ ± z·√V_jj.
    pub fn interval(&self, j: usize, z: f64) -> (f64, f64) {
        let half = z * self.v_star[(j, j)].max(0.0).sqrt();
        (self.mu_star[j] - half, self.mu_star[j] + half)
    }
}

pub fn sigma2_shape(data: &Dataset, h: &Hyperparameters) -> f64 {
    0.5 * (data.n() + data.p()) as f64 + h.c0
}

/// μ* = (XᵀX + Z*⁻¹)⁻¹Xᵀy and V* = (XᵀX + Z*⁻¹)⁻¹ / E[σ⁻²], with
/// Z*⁻¹ = diag(∏ₖ E[1/z_kj]). Refreshes E[βⱼ²].
pub fn vb_update_beta_with(state: &mut VariationalState, gram: &Gram) -> Result<()> {
    let p = gram.xty.len();
    // D = diag(∏ E[1/z])^{-½}; the system is solved as D(DXᵀXD + I)⁻¹D
    let d: DVector<f64> = DVector::from_fn(p, |j, _| (-0.5 * state.log_prior_precision(j)).exp());
    let mut a = gram.xtx.clone();
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] *= d[i] * d[j];
        }
        a[(i, i)] += 1.0;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference("non-finite entry in the beta precision".into()));
    }
    let chol = Cholesky::new(a).ok_or_else(|| Error::Inference("beta precision is singular".into()))?;
    let mu = chol.solve(&gram.xty.component_mul(&d)).component_mul(&d);
    let mut inv = chol.inverse();
    let s = state.e_inv_sigma2;
    for i in 0..p {
        for j in 0..p {
            inv[(i, j)] *= d[i] * d[j] / s;
        }
    }
    // exact symmetry
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    state.log_det_v = 2.0 * d.iter().map(|v| v.ln()).sum::<f64>() - p as f64 * s.ln() - log_det_a;
    if mu.iter().any(|v| !v.is_finite()) || inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference("non-finite variational moments for beta".into()));
    }
    state.e_beta2 = DVector::from_fn(p, |j, _| mu[j] * mu[j] + inv[(j, j)]);
    state.mu_star = mu;
    state.v_star = inv;
    Ok(())
}

pub fn vb_update_beta(state: &mut VariationalState, data: &Dataset) -> Result<()> {
    vb_update_beta_with(state, &Gram::new(data))
}

/// (E[z], E[1/z], E[log z]) of the level-k factor with parameter `c_star`.
pub fn level_moments(k: usize, c_star: f64, h: &Hyperparameters) -> (f64, f64, f64) {
    if Hyperparameters::is_gamma_level(k) {
        let m = gig_moments_unchecked(gig_factor(k, c_star, h));
        (m.mean, m.inv_mean, m.log_mean)
    } else {
        let a = h.shapes[k] + 0.5;
        let mean = if a > 1.0 { c_star / (a - 1.0) } else { f64::INFINITY };
        (mean, a / c_star, c_star.ln() - psi(a))
    }
}

fn gig_factor(k: usize, c_star: f64, h: &Hyperparameters) -> GigParams {
    let lambda = h.shapes[k] - 0.5;
    let chi = if lambda <= 0.0 { c_star.max(1e-300) } else { c_star };
    GigParams {
        lambda,
        chi,
        psi: 2.0 * h.level_rate(k),
    }
}

/// Update level k (0-based): with Pⱼ = E[βⱼ²]E[σ⁻²]∏_{i≠k}E[1/z_ij],
/// gamma levels set c*_kj = Pⱼ and inverse-gamma levels c*_kj = Pⱼ/2 + φ_k.
pub fn vb_update_z_level(k: usize, state: &mut VariationalState, h: &Hyperparameters) -> Result<()> {
    if k >= h.depth() || state.c_star.nrows() != h.depth() {
        return Err(Error::domain(format!("level {k} out of range for depth {}", h.depth())));
    }
    let log_s = state.e_inv_sigma2.ln();
    for j in 0..state.mu_star.len() {
        let log_others = state.log_prior_precision(j) - state.e_inv_z[(k, j)].ln();
        let b2 = state.e_beta2[j];
        let prod = if b2 > 0.0 {
            (b2.ln() + log_s + log_others).exp()
        } else {
            0.0
        };
        let cs = if Hyperparameters::is_gamma_level(k) {
            prod
        } else {
            0.5 * prod + h.level_rate(k)
        };
        let (ez, einv, elog) = level_moments(k, cs, h);
        if !einv.is_finite() || !elog.is_finite() || einv <= 0.0 {
            return Err(Error::Inference(format!(
                "non-finite scale moments at level {}, coefficient {j}",
                k + 1
            )));
        }
        state.c_star[(k, j)] = cs;
        state.e_z[(k, j)] = ez;
        state.e_inv_z[(k, j)] = einv;
        state.e_log_z[(k, j)] = elog;
    }
    Ok(())
}

/// E‖y - Xβ‖² = ‖y - Xμ*‖² + tr(XᵀX V*).
fn expected_rss(state: &VariationalState, data: &Dataset, gram: &Gram) -> f64 {
    let r = &data.y - &data.x * &state.mu_star;
    r.norm_squared() + gram.xtx.component_mul(&state.v_star).sum()
}

/// Σⱼ E[βⱼ²]∏ₖE[1/z_kj].
fn expected_penalty(state: &VariationalState) -> f64 {
    (0..state.mu_star.len())
        .map(|j| {
            let b2 = state.e_beta2[j];
            if b2 > 0.0 {
                (b2.ln() + state.log_prior_precision(j)).exp()
            } else {
                0.0
            }
        })
        .sum()
}

/// d₀* = (E‖y - Xβ‖² + E[βᵀΛβ] + 2d₀)/2 and E[σ⁻²] = a/d₀*.
pub fn vb_update_sigma2_with(
    state: &mut VariationalState,
    data: &Dataset,
    gram: &Gram,
    h: &Hyperparameters,
) -> Result<()> {
    let d = 0.5 * (expected_rss(state, data, gram) + expected_penalty(state) + 2.0 * h.d0);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Inference(format!("sigma2 factor scale is {d}")));
    }
    state.d0_star = d;
    state.e_inv_sigma2 = sigma2_shape(data, h) / d;
    Ok(())
}

pub fn vb_update_sigma2(state: &mut VariationalState, data: &Dataset, h: &Hyperparameters) -> Result<()> {
    vb_update_sigma2_with(state, data, &Gram::new(data), h)
}

/// Expected log-joint and entropy contributions, each written out in full.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub beta_prior: f64,
    pub scale_prior: f64,
    pub sigma2_prior: f64,
    pub beta_entropy: f64,
    pub scale_entropy: f64,
    pub sigma2_entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.beta_prior
            + self.scale_prior
            + self.sigma2_prior
            + self.beta_entropy
            + self.scale_entropy
            + self.sigma2_entropy
    }
}

pub fn elbo_terms(state: &VariationalState, data: &Dataset, h: &Hyperparameters) -> ElboTerms {
    let gram = Gram::new(data);
    let (n, p) = (data.n() as f64, data.p() as f64);
    let s = state.e_inv_sigma2;
    let a = sigma2_shape(data, h);
    let e_log_s2 = state.d0_star.ln() - psi(a);
    let likelihood = -0.5 * n * (LN_2PI + e_log_s2) - 0.5 * s * expected_rss(state, data, &gram);
    let sum_log_z: f64 = state.e_log_z.sum();
    let beta_prior = -0.5 * p * (LN_2PI + e_log_s2) - 0.5 * sum_log_z - 0.5 * s * expected_penalty(state);
    let mut scale_prior = 0.0;
    let mut scale_entropy = 0.0;
    for k in 0..h.depth() {
        let c = h.shapes[k];
        let rate = h.level_rate(k);
        for j in 0..state.mu_star.len() {
            let (ez, einv, elog) = (state.e_z[(k, j)], state.e_inv_z[(k, j)], state.e_log_z[(k, j)]);
            let cs = state.c_star[(k, j)];
            scale_prior += c * rate.ln() - ln_gamma(c);
            if Hyperparameters::is_gamma_level(k) {
                scale_prior += (c - 1.0) * elog - rate * ez;
                let g = gig_factor(k, cs, h);
                scale_entropy += g.log_normalizer() - (g.lambda - 1.0) * elog + 0.5 * (g.chi * einv + g.psi * ez);
            } else {
                scale_prior += -(c + 1.0) * elog - rate * einv;
                let sh = c + 0.5;
                scale_entropy += ln_gamma(sh) - sh * cs.ln() + (sh + 1.0) * elog + cs * einv;
            }
        }
    }
    let sigma2_prior = h.c0 * h.d0.ln() - ln_gamma(h.c0) - (h.c0 + 1.0) * e_log_s2 - h.d0 * s;
    let beta_entropy = 0.5 * (p * (1.0 + LN_2PI) + state.log_det_v);
    let sigma2_entropy = ln_gamma(a) - a * state.d0_star.ln() + (a + 1.0) * e_log_s2 + state.d0_star * s;
    ElboTerms {
        likelihood,
        beta_prior,
        scale_prior,
        sigma2_prior,
        beta_entropy,
        scale_entropy,
        sigma2_entropy,
    }
}

/// Evidence lower bound, constants included.
///
/// Within each factor family the E[log z] and E[log σ²] coefficients of the
/// log-joint and of the entropy cancel exactly (the shape of every factor is
/// fixed by the model), so they are dropped here; [`elbo_terms`] keeps them
/// and sums to the same value.
pub fn elbo(state: &VariationalState, data: &Dataset, h: &Hyperparameters) -> f64 {
    elbo_with(state, data, &Gram::new(data), h)
}

fn elbo_with(state: &VariationalState, data: &Dataset, gram: &Gram, h: &Hyperparameters) -> f64 {
    let (n, p) = (data.n() as f64, data.p() as f64);
    let s = state.e_inv_sigma2;
    let a = sigma2_shape(data, h);
    let mut total = -0.5 * n * LN_2PI - 0.5 * s * expected_rss(state, data, gram);
    total += -0.5 * p * LN_2PI - 0.5 * s * expected_penalty(state);
    for k in 0..h.depth() {
        let c = h.shapes[k];
        let rate = h.level_rate(k);
        let base = c * rate.ln() - ln_gamma(c);
        for j in 0..state.mu_star.len() {
            let cs = state.c_star[(k, j)];
            total += base;
            if Hyperparameters::is_gamma_level(k) {
                let g = gig_factor(k, cs, h);
                total += -rate * state.e_z[(k, j)]
                    + g.log_normalizer()
                    + 0.5 * (g.chi * state.e_inv_z[(k, j)] + g.psi * state.e_z[(k, j)]);
            } else {
                let sh = c + 0.5;
                total += -rate * state.e_inv_z[(k, j)] + ln_gamma(sh) - sh * cs.ln() + cs * state.e_inv_z[(k, j)];
            }
        }
    }
    total += h.c0 * h.d0.ln() - ln_gamma(h.c0) - h.d0 * s;
    total += 0.5 * (p * (1.0 + LN_2PI) + state.log_det_v);
    total += ln_gamma(a) - a * state.d0_star.ln() + state.d0_star * s;
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaviConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CaviConfig {
    fn default() -> Self {
        CaviConfig {
            tol: 1e-8,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboRecord {
    pub sweep: usize,
    pub elbo: f64,
    /// Largest absolute change in μ* during the sweep.
    pub max_abs_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviRun {
    pub state: VariationalState,
    pub trace: Vec<ElboRecord>,
    pub converged: bool,
}

/// Sweeps β → levels 1..N → σ² until the relative ELBO change drops below
/// `tol` or `max_iters` sweeps have run.
pub fn run_cavi(data: &Dataset, h: &Hyperparameters, cfg: &CaviConfig) -> Result<CaviRun> {
    validate_hyperparameters(h)?;
    run_cavi_from(VariationalState::initial(data, h), data, h, cfg)
}

pub fn run_cavi_from(
    mut state: VariationalState,
    data: &Dataset,
    h: &Hyperparameters,
    cfg: &CaviConfig,
) -> Result<CaviRun> {
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(Error::Validation(vec!["CAVI needs tol > 0 and max_iters > 0".into()]));
    }
    let gram = Gram::new(data);
    let mut trace: Vec<ElboRecord> = Vec::new();
    let mut converged = false;
    for sweep in 1..=cfg.max_iters {
        let before = state.mu_star.clone();
        vb_update_beta_with(&mut state, &gram)?;
        for k in 0..h.depth() {
            vb_update_z_level(k, &mut state, h)?;
        }
        vb_update_sigma2_with(&mut state, data, &gram, h)?;
        let value = elbo_with(&state, data, &gram, h);
        if !value.is_finite() {
            return Err(Error::Inference(format!("ELBO became non-finite at sweep {sweep}")));
        }
        let max_abs_change = (&state.mu_star - before).amax();
        let done = trace
            .last()
            .is_some_and(|prev| ((value - prev.elbo) / prev.elbo.abs()).abs() < cfg.tol);
        trace.push(ElboRecord {
            sweep,
            elbo: value,
            max_abs_change,
        });
        if done {
            converged = true;
            break;
        }
    }
    Ok(CaviRun {
        state,
        trace,
        converged,
    })
}

/// Solve the digamma stationarity condition with the variational E[log z].
pub fn mfvb_update_c(state: &VariationalState, h: &Hyperparameters) -> Result<Hyperparameters> {
    let totals: Vec<f64> = (0..h.depth()).map(|k| state.e_log_z.row(k).sum()).collect();
    shapes_from_log_totals(&totals, state.mu_star.len(), h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfvbConfig {
    pub max_rounds: usize,
}

impl Default for MfvbConfig {
    fn default() -> Self {
        MfvbConfig { max_rounds: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfvbRun {
    pub fit: CaviRun,
    pub hyperparameters: Hyperparameters,
    pub rounds: Vec<EmRound>,
}

/// Alternate full CAVI convergence with shape updates until no shape moves
/// by more than 1e-3 or `max_rounds` is reached. The returned fit is the
/// CAVI run under the final shapes.
pub fn run_mfvb(data: &Dataset, h: &Hyperparameters, cavi: &CaviConfig, em: &MfvbConfig) -> Result<MfvbRun> {
    validate_hyperparameters(h)?;
    let mut h = h.clone();
    let mut fit = run_cavi(data, &h, cavi)?;
    let mut rounds = Vec::new();
    for round in 1..=em.max_rounds {
        let next = mfvb_update_c(&fit.state, &h)?;
        let max_change = next
            .shapes
            .iter()
            .zip(&h.shapes)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        h = next;
        rounds.push(EmRound {
            round,
            shapes: h.shapes.clone(),
            max_change,
        });
        fit = run_cavi_from(fit.state, data, &h, cavi)?;
        if max_change < EM_TOLERANCE {
            break;
        }
    }
    Ok(MfvbRun {
        fit,
        hyperparameters: h,
        rounds,
    })
}
