//! Simulation scenarios, accuracy metrics and the replication harness.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{quantile_sorted, run_gibbs, summarize, GibbsConfig};
use crate::model::{Dataset, Hyperparameters, Truth};
use crate::rng::{stream, tag};
use crate::special::{normal_quantile, standard_normal};
use crate::vb::{run_cavi, run_mfvb, CaviConfig, MfvbConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceCase {
    Identity,
    /// Σᵢⱼ = ρ^{|i-j|}.
    Ar1 {
        rho: f64,
    },
    /// Σᵢⱼ = ρ for i ≠ j.
    Equi {
        rho: f64,
    },
    Custom {
        matrix: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub beta0: Vec<f64>,
    pub sigma2: f64,
    pub covariance: CovarianceCase,
    pub n_train: usize,
    pub n_test: usize,
    pub replications: usize,
}

pub const SIM1_BETA: [f64; 10] = [2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
pub const SIM3_BETA: [f64; 4] = [5.6, 5.6, 5.6, 0.0];

impl CovarianceCase {
    /// `identity`, `ar1` or `equi` (ρ = 0.5 for the latter two).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(CovarianceCase::Identity),
            "ar1" => Ok(CovarianceCase::Ar1 { rho: 0.5 }),
            "equi" => Ok(CovarianceCase::Equi { rho: 0.5 }),
            other => Err(Error::Validation(vec![format!(
                "unknown covariance case '{other}' (expected identity, ar1 or equi)"
            )])),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            CovarianceCase::Identity => "identity",
            CovarianceCase::Ar1 { .. } => "ar1",
            CovarianceCase::Equi { .. } => "equi",
            CovarianceCase::Custom { .. } => "custom",
        }
    }
}

impl Scenario {
    /// Sparse signal with three non-zero effects among ten covariates.
    pub fn sim1(case: CovarianceCase, sigma2: f64) -> Self {
        Scenario {
            name: format!("sim1-{}-s2_{sigma2}", case.tag()),
            beta0: SIM1_BETA.to_vec(),
            sigma2,
            covariance: case,
            n_train: 20,
            n_test: 200,
            replications: 100,
        }
    }

    /// A single non-zero effect among ten covariates.
    pub fn sim2(case: CovarianceCase, sigma2: f64) -> Self {
        let mut beta0 = vec![0.0; 10];
        beta0[0] = 1.0;
        Scenario {
            name: format!("sim2-{}-s2_{sigma2}", case.tag()),
            beta0,
            sigma2,
            covariance: case,
            n_train: 20,
            n_test: 200,
            replications: 100,
        }
    }

    /// Three large correlated effects (pairwise correlation -0.39) and a
    /// null covariate correlated 0.23 with each of them; σ² = 1.
    pub fn sim3(n_train: usize) -> Self {
        let mut m = DMatrix::identity(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    m[(i, j)] = if i == 3 || j == 3 { 0.23 } else { -0.39 };
                }
            }
        }
        Scenario {
            name: format!("sim3-n{n_train}"),
            beta0: SIM3_BETA.to_vec(),
            sigma2: 1.0,
            covariance: CovarianceCase::Custom { matrix: m },
            n_train,
            n_test: 200,
            replications: 100,
        }
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        match &self.covariance {
            CovarianceCase::Identity => DMatrix::identity(p, p),
            CovarianceCase::Ar1 { rho } => DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())),
            CovarianceCase::Equi { rho } => DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { *rho }),
            CovarianceCase::Custom { matrix } => matrix.clone(),
        }
    }

    pub fn validate(&self) -> Result<DMatrix<f64>> {
        let mut errors = Vec::new();
        if self.beta0.is_empty() {
            errors.push("beta0 must be non-empty".to_string());
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            errors.push(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.n_train == 0 || self.n_test == 0 || self.replications == 0 {
            errors.push("n_train, n_test and replications must be positive".to_string());
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let sigma = self.covariance_matrix();
        if sigma.nrows() != self.p() || sigma.ncols() != self.p() {
            return Err(Error::Validation(vec![format!(
                "covariance is {}x{} but beta0 has {} entries",
                sigma.nrows(),
                sigma.ncols(),
                self.p()
            )]));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 {
            return Err(Error::Validation(vec!["covariance matrix is not symmetric".into()]));
        }
        let chol = Cholesky::new(sigma)
            .ok_or_else(|| Error::Validation(vec!["covariance matrix is not positive definite".into()]))?;
        Ok(chol.l())
    }
}

fn draw_design<R: Rng + ?Sized>(l: &DMatrix<f64>, rows: usize, rng: &mut R) -> DMatrix<f64> {
    let p = l.nrows();
    let z = DMatrix::from_fn(p, rows, |_, _| standard_normal(rng));
    (l * z).transpose()
}

/// Train and test sets for one replication, drawn from the stream
/// (base_seed, DATA, rep_index).
pub fn generate_scenario(s: &Scenario, rep_index: u64, base_seed: u64) -> Result<(Dataset, Dataset)> {
    let l = s.validate()?;
    let mut rng = stream(&[base_seed, tag::DATA, rep_index]);
    let beta = DVector::from_vec(s.beta0.clone());
    let sd = s.sigma2.sqrt();
    let mut make = |rows: usize| {
        let x = draw_design(&l, rows, &mut rng);
        let noise = DVector::from_fn(rows, |_, _| standard_normal(&mut rng));
        let y = &x * &beta + noise * sd;
        Dataset::new(
            x,
            y,
            Some(Truth {
                beta0: beta.clone(),
                sigma0sq: s.sigma2,
            }),
        )
    };
    let train = make(s.n_train)?;
    let test = make(s.n_test)?;
    Ok((train, test))
}

/// (1/n) ‖Xβ̂ - Xβ₀‖² on the test covariates.
pub fn model_error_mse(beta_hat: &DVector<f64>, test: &Dataset) -> Result<f64> {
    let truth = test
        .truth
        .as_ref()
        .ok_or_else(|| Error::data("test set carries no true coefficients"))?;
    if beta_hat.len() != test.p() {
        return Err(Error::data(format!(
            "estimate has {} entries, design has {} columns",
            beta_hat.len(),
            test.p()
        )));
    }
    let diff = beta_hat - &truth.beta0;
    Ok((&test.x * diff).norm_squared() / test.n() as f64)
}

/// (1/n) ‖y - Xβ̂‖² on observed test responses.
pub fn prediction_mse(beta_hat: &DVector<f64>, test: &Dataset) -> f64 {
    (&test.y - &test.x * beta_hat).norm_squared() / test.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub fp: usize,
    pub fn_: usize,
}

/// A coefficient is selected when its interval excludes zero. Counts
/// selected true zeros (fp) and unselected true signals (fn).
pub fn selection_metrics(selected: &[bool], beta0: &[f64]) -> Result<SelectionCounts> {
    if selected.len() != beta0.len() {
        return Err(Error::data(format!(
            "{} selections for {} coefficients",
            selected.len(),
            beta0.len()
        )));
    }
    let mut c = SelectionCounts { fp: 0, fn_: 0 };
    for (&s, &b) in selected.iter().zip(beta0) {
        if s && b == 0.0 {
            c.fp += 1;
        }
        if !s && b != 0.0 {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

pub fn interval_excludes_zero(intervals: &[(f64, f64)]) -> Vec<bool> {
    intervals.iter().map(|&(lo, hi)| lo > 0.0 || hi < 0.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    /// Equal-tailed credible interval at `level` excludes zero.
    Interval { level: f64 },
    /// |posterior median| exceeds `threshold`.
    MedianThreshold { threshold: f64 },
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::Interval { level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum EngineConfig {
    Gibbs(GibbsConfig),
    Vb { cavi: CaviConfig, mfvb: Option<MfvbConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub hyperparameters: Hyperparameters,
    pub engine: EngineConfig,
}

impl MethodConfig {
    pub fn gibbs(name: &str, preset: &str, cfg: GibbsConfig) -> Result<Self> {
        Ok(MethodConfig {
            name: name.into(),
            hyperparameters: Hyperparameters::preset(preset)?,
            engine: EngineConfig::Gibbs(cfg),
        })
    }

    pub fn vb(name: &str, preset: &str, cavi: CaviConfig, mfvb: Option<MfvbConfig>) -> Result<Self> {
        Ok(MethodConfig {
            name: name.into(),
            hyperparameters: Hyperparameters::preset(preset)?,
            engine: EngineConfig::Vb { cavi, mfvb },
        })
    }
}

/// Point estimate and selection decisions of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub beta_hat: DVector<f64>,
    pub selected: Vec<bool>,
    pub clamp_events: usize,
}

/// Fit one method. Gibbs fits draw from (base_seed, FIT, cfg.seed, rep).
pub fn fit_method(
    method: &MethodConfig,
    train: &Dataset,
    rule: SelectionRule,
    base_seed: u64,
    rep: u64,
) -> Result<FitSummary> {
    match &method.engine {
        EngineConfig::Gibbs(cfg) => {
            let mut rng = stream(&[base_seed, tag::FIT, cfg.seed, rep]);
            let run = run_gibbs(train, &method.hyperparameters, cfg, &mut rng)?;
            let level = match rule {
                SelectionRule::Interval { level } => level,
                SelectionRule::MedianThreshold { .. } => 0.95,
            };
            let summary = summarize(&run.draws, level)?;
            let beta_hat = DVector::from_iterator(summary.len(), summary.iter().map(|s| s.mean));
            let selected = match rule {
                SelectionRule::Interval { .. } => summary.iter().map(|s| s.excludes_zero()).collect(),
                SelectionRule::MedianThreshold { threshold } => (0..train.p())
                    .map(|j| {
                        let mut col: Vec<f64> = run.draws.beta_draws.column(j).iter().copied().collect();
                        col.sort_by(f64::total_cmp);
                        quantile_sorted(&col, 0.5).abs() > threshold
                    })
                    .collect(),
            };
            Ok(FitSummary {
                beta_hat,
                selected,
                clamp_events: run.clamp_events,
            })
        }
        EngineConfig::Vb { cavi, mfvb } => {
            let state = match mfvb {
                Some(em) => run_mfvb(train, &method.hyperparameters, cavi, em)?.fit.state,
                None => run_cavi(train, &method.hyperparameters, cavi)?.state,
            };
            let selected = match rule {
                SelectionRule::Interval { level } => {
                    let z = normal_quantile(0.5 + 0.5 * level);
                    let iv: Vec<(f64, f64)> = (0..train.p()).map(|j| state.interval(j, z)).collect();
                    interval_excludes_zero(&iv)
                }
                SelectionRule::MedianThreshold { threshold } => {
                    state.mu_star.iter().map(|m| m.abs() > threshold).collect()
                }
            };
            Ok(FitSummary {
                beta_hat: state.mu_star,
                selected,
                clamp_events: 0,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub mse: f64,
    pub fp: usize,
    pub fn_: usize,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub train_hash: String,
    pub test_hash: String,
    /// One entry per method, in method order; `Err` holds the fault message.
    pub results: Vec<std::result::Result<MethodMetrics, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub fp_mean: f64,
    pub fp_sd: f64,
    pub fn_mean: f64,
    pub fn_sd: f64,
    pub replications: usize,
    pub faults: usize,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub methods: Vec<MethodConfig>,
    pub selection: SelectionRule,
    pub base_seed: u64,
    pub config_hash: String,
    pub summary: Vec<MethodReport>,
    pub reps: Vec<RepRecord>,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_hash(d: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(8 * (d.x.len() + d.y.len()) + 16);
    bytes.extend_from_slice(&(d.n() as u64).to_le_bytes());
    bytes.extend_from_slice(&(d.p() as u64).to_le_bytes());
    for v in d.x.iter().chain(d.y.iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex_digest(&bytes)
}

/// Mean and sample standard deviation (n - 1 divisor; 0 for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub(crate) fn aggregate(names: &[String], reps: &[RepRecord]) -> Vec<MethodReport> {
    names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let ok: Vec<&MethodMetrics> = reps.iter().filter_map(|r| r.results[m].as_ref().ok()).collect();
            let mse: Vec<f64> = ok.iter().map(|r| r.mse).collect();
            let fp: Vec<f64> = ok.iter().map(|r| r.fp as f64).collect();
            let fneg: Vec<f64> = ok.iter().map(|r| r.fn_ as f64).collect();
            let (mse_mean, mse_sd) = mean_sd(&mse);
            let (fp_mean, fp_sd) = mean_sd(&fp);
            let (fn_mean, fn_sd) = mean_sd(&fneg);
            MethodReport {
                method: name.clone(),
                mse_mean,
                mse_sd,
                fp_mean,
                fp_sd,
                fn_mean,
                fn_sd,
                replications: ok.len(),
                faults: reps.len() - ok.len(),
                clamp_events: ok.iter().map(|r| r.clamp_events).sum(),
            }
        })
        .collect()
}

/// Run every method on every replication. Replications run in parallel on
/// the current rayon pool; results are collected in replication order.
pub fn run_replications(
    s: &Scenario,
    methods: &[MethodConfig],
    rule: SelectionRule,
    base_seed: u64,
) -> Result<RunReport> {
    s.validate()?;
    if methods.is_empty() {
        return Err(Error::Validation(vec!["at least one method is required".into()]));
    }
    let config_hash = hex_digest(&serde_json::to_vec(&(s, methods, rule, base_seed))?);
    let reps: Vec<RepRecord> = (0..s.replications as u64)
        .into_par_iter()
        .map(|rep| -> Result<RepRecord> {
            let (train, test) = generate_scenario(s, rep, base_seed)?;
            let results = methods
                .iter()
                .map(|m| {
                    let fit = fit_method(m, &train, rule, base_seed, rep).map_err(|e| e.to_string())?;
                    let mse = model_error_mse(&fit.beta_hat, &test).map_err(|e| e.to_string())?;
                    let c = selection_metrics(&fit.selected, &s.beta0).map_err(|e| e.to_string())?;
                    Ok(MethodMetrics {
                        mse,
                        fp: c.fp,
                        fn_: c.fn_,
                        clamp_events: fit.clamp_events,
                    })
                })
                .collect();
            Ok(RepRecord {
                rep,
                train_hash: dataset_hash(&train),
                test_hash: dataset_hash(&test),
                results,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = methods.iter().map(|m| m.name.clone()).collect();
    let summary = aggregate(&names, &reps);
    Ok(RunReport {
        scenario: s.clone(),
        methods: methods.to_vec(),
        selection: rule,
        base_seed,
        config_hash,
        summary,
        reps,
    })
}

/// Human-readable table: Methods / σ² / MSE (sd) / FPR (sd) / FNR (sd).
pub fn format_table(report: &RunReport) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:>20} {:>20} {:>20}\n",
        "Methods", "sigma2", "MSE (sd)", "FPR (sd)", "FNR (sd)"
    );
    for r in &report.summary {
        out.push_str(&format!(
            "{:<16} {:>8} {:>20} {:>20} {:>20}\n",
            r.method,
            report.scenario.sigma2,
            format!("{:.4} ({:.4})", r.mse_mean, r.mse_sd),
            format!("{:.4} ({:.4})", r.fp_mean, r.fp_sd),
            format!("{:.4} ({:.4})", r.fn_mean, r.fn_sd),
        ));
    }
    out
}

/// Methods used by the simulation presets: Gibbs with ncg2, ncg10 and the
/// horseshoe preset, plus plain CAVI with ncg10.
pub fn default_methods(gibbs: GibbsConfig) -> Vec<MethodConfig> {
    let mut out: Vec<MethodConfig> = ["ncg2", "ncg10", "horseshoe"]
        .iter()
        .map(|p| MethodConfig::gibbs(p, p, gibbs).expect("preset exists"))
        .collect();
    out.push(MethodConfig::vb("vb-ncg10", "ncg10", CaviConfig::default(), None).expect("preset exists"));
    out
}
