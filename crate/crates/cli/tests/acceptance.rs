//! Acceptance suite: one PASS/FAIL line per criterion. Every criterion writes
//! its numeric record to a JSON file; the last criterion re-runs everything
//! and compares the files byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ncg_core::eval::{generate_scenario, run_replications, CovarianceCase, MethodConfig, Scenario, SelectionRule};
use ncg_core::gibbs::{mcem_update_c, run_gibbs, update_beta, update_sigma2, update_z_level, GibbsConfig};
use ncg_core::io::{load_prostate, prostate_split};
use ncg_core::model::{Dataset, GibbsState, Hyperparameters, LogScaleStats};
use ncg_core::prior::{
    check_tail_condition, sample_prior_beta, sample_prior_log_scale_chain, sample_prior_log_scale_product,
    ConsistencyCheckInput,
};
use ncg_core::rng::{stream, Stream};
use ncg_core::special::{digamma, gig_moments, log_bessel_k, sample_gig, solve_digamma, GigParams};
use ncg_core::vb::{run_cavi, CaviConfig};
use ncg_oracles::posterior::SmallModel;
use ncg_oracles::prior_sim::{gamma, horseshoe_beta, normal};
use ncg_oracles::{batch_means_se, ks_one_sample, ks_two_sample, mean_var};
use serde_json::{json, Value};

const SEED: u64 = 20_240_601;
const SMALL_X: [f64; 5] = [1.0, -0.5, 2.0, 0.3, -1.2];
const SMALL_Y: [f64; 5] = [1.1, -0.2, 1.9, 0.1, -1.3];

struct Outcome {
    pass: bool,
    detail: String,
    record: Value,
}

struct Criterion {
    id: u8,
    name: &'static str,
    /// Wall-clock limit included in the verdict, when one applies.
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn hyper(shapes: &[f64], phi: f64, c0: f64, d0: f64) -> Hyperparameters {
    Hyperparameters {
        shapes: shapes.to_vec(),
        phi,
        c0,
        d0,
    }
}

fn small_data() -> Dataset {
    Dataset::new(
        DMatrix::from_column_slice(5, 1, &SMALL_X),
        DVector::from_column_slice(&SMALL_Y),
        None,
    )
    .unwrap()
}

fn small_model() -> SmallModel {
    SmallModel {
        x: SMALL_X.to_vec(),
        y: SMALL_Y.to_vec(),
        c1: 1.0,
        c2: 1.0,
        phi: 1.0,
        c0: 1.0,
        d0: 1.0,
    }
}

fn representations() -> Outcome {
    let presets = [
        hyper(&[1.0, 1.0], 1.0, 1.0, 1.0),
        hyper(&[0.5; 4], 1.0, 1.0, 1.0),
        hyper(&[0.5; 10], 1.0, 1.0, 1.0),
    ];
    let n = 100_000;
    let ks: Vec<f64> = presets
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut r1 = stream(&[SEED, 1, i as u64, 0]);
            let mut r2 = stream(&[SEED, 1, i as u64, 1]);
            let chain: Vec<f64> = (0..n).map(|_| sample_prior_log_scale_chain(h, &mut r1)).collect();
            let product: Vec<f64> = (0..n).map(|_| sample_prior_log_scale_product(h, &mut r2)).collect();
            ks_two_sample(&chain, &product)
        })
        .collect();
    Outcome {
        pass: ks.iter().all(|&d| d < 0.01),
        detail: format!("KS N=2,4,10: {}", fmt_list(&ks)),
        record: json!({ "ks": ks }),
    }
}

fn horseshoe() -> Outcome {
    let h = Hyperparameters::preset("horseshoe").unwrap();
    let n = 100_000;
    let mut r1 = stream(&[SEED, 2, 0]);
    let mut r2 = stream(&[SEED, 2, 1]);
    let ours: Vec<f64> = (0..n).map(|_| sample_prior_beta(&h, &mut r1)).collect();
    let direct: Vec<f64> = (0..n).map(|_| horseshoe_beta(&mut r2)).collect();
    let d = ks_two_sample(&ours, &direct);
    Outcome {
        pass: d < 0.01,
        detail: format!("KS {d:.5}"),
        record: json!({ "ks": d }),
    }
}

fn gibbs_exactness() -> Outcome {
    let post = small_model().beta_posterior(-3.0, 4.0, 401);
    let cfg = GibbsConfig {
        total_iters: 101_000,
        burn_in: 1_000,
        thin: 1,
        mcem: None,
        seed: 0,
    };
    let h = hyper(&[1.0, 1.0], 1.0, 1.0, 1.0);
    let run = run_gibbs(&small_data(), &h, &cfg, &mut stream(&[SEED, 3])).unwrap();
    let draws: Vec<f64> = run.draws.beta_draws.column(0).iter().copied().collect();
    let d = ks_one_sample(&draws, |b| post.cdf_at(b));
    let (m, _) = mean_var(&draws);
    Outcome {
        pass: d < 0.05,
        detail: format!("KS {d:.5} over {} draws; mean {m:.4} vs {:.4}", draws.len(), post.mean),
        record: json!({ "ks": d, "mean": m, "quadrature_mean": post.mean }),
    }
}

/// One draw of (z, σ², β, y) from the model, simulated with the oracle samplers.
fn prior_draw(x: &DMatrix<f64>, h: &Hyperparameters, rng: &mut Stream) -> (GibbsState, DVector<f64>) {
    let p = x.ncols();
    let mut z = DMatrix::zeros(2, p);
    for j in 0..p {
        z[(0, j)] = gamma(h.shapes[0], 1.0, rng);
        z[(1, j)] = 1.0 / gamma(h.shapes[1], h.phi, rng);
    }
    let sigma2 = 1.0 / gamma(h.c0, h.d0, rng);
    let beta = DVector::from_fn(p, |j, _| normal(0.0, (sigma2 * z[(0, j)] * z[(1, j)]).sqrt(), rng));
    let y = simulate_y(x, &beta, sigma2, rng);
    (GibbsState { beta, z, sigma2 }, y)
}

fn simulate_y(x: &DMatrix<f64>, beta: &DVector<f64>, sigma2: f64, rng: &mut Stream) -> DVector<f64> {
    let mean = x * beta;
    DVector::from_fn(x.nrows(), |i, _| normal(mean[i], sigma2.sqrt(), rng))
}

fn geweke() -> Outcome {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, -0.4, 1.2, 0.8, -0.9, 0.1, 0.5]);
    let h = hyper(&[1.5, 3.0], 1.0, 4.0, 3.0);
    let m = 200_000;
    let stat = |s: &GibbsState| [s.beta[0], s.sigma2, s.z[(0, 0)]];
    let mut rng = stream(&[SEED, 4, 0]);
    let mut marginal = vec![Vec::new(); 3];
    for _ in 0..m {
        let (s, _) = prior_draw(&x, &h, &mut rng);
        for (v, t) in marginal.iter_mut().zip(stat(&s)) {
            v.push(t);
        }
    }
    let mut rng = stream(&[SEED, 4, 1]);
    let (mut state, mut y) = prior_draw(&x, &h, &mut rng);
    let mut chain = vec![Vec::new(); 3];
    for _ in 0..m {
        let data = Dataset::new(x.clone(), y.clone(), None).unwrap();
        state.beta = update_beta(&state, &data, &mut rng).unwrap();
        for k in 0..2 {
            let row = update_z_level(k, &state, &h, &mut rng).unwrap().0;
            state.z.set_row(k, &row.transpose());
        }
        state.sigma2 = update_sigma2(&state, &data, &h, &mut rng);
        y = simulate_y(&x, &state.beta, state.sigma2, &mut rng);
        for (v, t) in chain.iter_mut().zip(stat(&state)) {
            v.push(t);
        }
    }
    let z: Vec<f64> = marginal
        .iter()
        .zip(&chain)
        .map(|(a, b)| {
            let (ma, va) = mean_var(a);
            let (mb, _) = mean_var(b);
            (ma - mb) / (va / m as f64 + batch_means_se(b, 50).powi(2)).sqrt()
        })
        .collect();
    Outcome {
        pass: z.iter().all(|v| v.abs() < 4.0),
        detail: format!("standardized gaps beta1, sigma2, z11: {}", fmt_list(&z)),
        record: json!({ "z": z }),
    }
}

fn test_datasets() -> Vec<(String, Dataset)> {
    let mut out = vec![("small".to_string(), small_data())];
    for case in ["identity", "ar1", "equi"] {
        for sigma2 in [1.0, 9.0] {
            let s = Scenario::sim1(CovarianceCase::by_name(case).unwrap(), sigma2);
            out.push((s.name.clone(), generate_scenario(&s, 0, SEED).unwrap().0));
        }
        let s = Scenario::sim2(CovarianceCase::by_name(case).unwrap(), 1.0);
        out.push((s.name.clone(), generate_scenario(&s, 0, SEED).unwrap().0));
    }
    for n in [20, 250] {
        let s = Scenario::sim3(n);
        out.push((s.name.clone(), generate_scenario(&s, 0, SEED).unwrap().0));
    }
    let mut wide = Scenario::sim2(CovarianceCase::Identity, 1.0);
    wide.name = "wide".into();
    wide.beta0 = (0..30).map(|j| if j < 2 { 1.5 } else { 0.0 }).collect();
    wide.n_train = 15;
    out.push((wide.name.clone(), generate_scenario(&wide, 0, SEED).unwrap().0));
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/prostate_synthetic.csv");
    let prostate = load_prostate(&fixture).unwrap();
    out.push((
        "prostate-fixture".into(),
        prostate_split(&prostate, SEED, 0, true).unwrap().0,
    ));
    out
}

fn vb_correctness() -> Outcome {
    let mut worst_drop = 0.0_f64;
    let mut fits = 0;
    let mut hypers: Vec<Hyperparameters> = ["ncg2", "ncg10", "horseshoe"]
        .iter()
        .map(|p| Hyperparameters::preset(p).unwrap())
        .collect();
    hypers.push(hyper(&[1.0, 1.0], 1.0, 1.0, 1.0));
    for h in &hypers {
        for (_, d) in test_datasets() {
            let run = run_cavi(&d, h, &CaviConfig::default()).unwrap();
            for w in run.trace.windows(2) {
                worst_drop = worst_drop.min(w[1].elbo - w[0].elbo);
            }
            fits += 1;
        }
    }
    let h = hyper(&[1.0, 1.0], 1.0, 1.0, 1.0);
    let run = run_cavi(&small_data(), &h, &CaviConfig::default()).unwrap();
    let post = small_model().beta_posterior(-3.0, 4.0, 401);
    let mu = run.state.mu_star[0];
    let elbo = run.trace.last().unwrap().elbo;
    let pass = worst_drop >= -1e-8 && (mu - post.mean).abs() < 0.05 && elbo <= post.log_evidence;
    Outcome {
        pass,
        detail: format!(
            "{fits} fits, worst ELBO step {worst_drop:.3e}; mu* {mu:.4} vs {:.4}; ELBO {elbo:.4} <= log evidence {:.4}",
            post.mean, post.log_evidence
        ),
        record: json!({ "worst_step": worst_drop, "mu": mu, "quadrature_mean": post.mean, "elbo": elbo,
                        "log_evidence": post.log_evidence }),
    }
}

fn em_recovery() -> Outcome {
    let (odd, even, phi, p, window) = (0.7, 2.0, 1.5, 200, 500);
    let h = hyper(&[0.5, 0.5], phi, 1.0, 1.0);
    let mut rng = stream(&[SEED, 6]);
    let mut stats = LogScaleStats::new(2, p);
    for _ in 0..window {
        let z = DMatrix::from_fn(2, p, |k, _| {
            if k == 0 {
                gamma(odd, 1.0, &mut rng)
            } else {
                1.0 / gamma(even, phi, &mut rng)
            }
        });
        stats.record(&z);
    }
    let c = mcem_update_c(&stats, &h).unwrap().shapes;
    Outcome {
        pass: (c[0] - odd).abs() < 0.02 && (c[1] - even).abs() < 0.05,
        detail: format!("recovered ({:.4}, {:.4}) for ({odd}, {even})", c[0], c[1]),
        record: json!({ "shapes": c }),
    }
}

fn micro_oracles() -> Outcome {
    let mut worst_moment = 0.0_f64;
    for (i, &lambda) in [-0.5, 0.5, 2.0].iter().enumerate() {
        for (j, &chi) in [0.5, 2.0, 8.0].iter().enumerate() {
            for (k, &psi) in [0.5, 2.0, 8.0].iter().enumerate() {
                let p = GigParams::new(lambda, chi, psi).unwrap();
                let m = gig_moments(p).unwrap();
                let mut rng = stream(&[SEED, 7, i as u64, j as u64, k as u64]);
                let n = 1_000_000;
                let (mut s, mut si) = (0.0, 0.0);
                for _ in 0..n {
                    let x = sample_gig(p, &mut rng).unwrap();
                    s += x;
                    si += 1.0 / x;
                }
                let nf = n as f64;
                worst_moment = worst_moment
                    .max((s / nf / m.mean - 1.0).abs())
                    .max((si / nf / m.inv_mean - 1.0).abs());
            }
        }
    }
    let mut worst_inverse = 0.0_f64;
    for &c in &[1e-3, 0.05, 0.3, 0.7, 1.0, 2.0, 7.5, 40.0, 900.0] {
        for &w in &[1u32, 10, 200] {
            let back = solve_digamma(w as f64 * digamma(c).unwrap(), w).unwrap();
            worst_inverse = worst_inverse.max((back - c).abs() / c);
        }
    }
    let mut worst_bessel = 0.0_f64;
    for &x in &[1e-3, 0.1, 0.5, 1.0, 3.0, 10.0, 50.0] {
        let closed = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        worst_bessel = worst_bessel.max((log_bessel_k(0.5, x).unwrap().exp() / closed - 1.0).abs());
    }
    Outcome {
        pass: worst_moment < 0.005 && worst_inverse < 1e-8 && worst_bessel < 1e-9,
        detail: format!(
            "GIG moments {worst_moment:.2e} rel; digamma inverse {worst_inverse:.2e} rel; K_1/2 {worst_bessel:.2e} rel"
        ),
        record: json!({ "moment": worst_moment, "inverse": worst_inverse, "bessel": worst_bessel }),
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn simulation_three() -> Outcome {
    let method = [MethodConfig::gibbs("ncg10", "ncg10", GibbsConfig::default()).unwrap()];
    let mut rows = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, lo, hi) in [(20, 0.12, 0.30), (250, 0.010, 0.026)] {
        let r = run_replications(&Scenario::sim3(n), &method, SelectionRule::default(), SEED).unwrap();
        let m = &r.summary[0];
        pass &= in_range(m.mse_mean, lo, hi) && m.fn_mean == 0.0 && m.faults == 0 && m.replications == 100;
        detail.push(format!(
            "n={n}: mse {:.4} ({:.4}) fn {:.2} fp {:.2}",
            m.mse_mean, m.mse_sd, m.fn_mean, m.fp_mean
        ));
        rows.push(json!({ "n": n, "summary": m, "config_hash": r.config_hash }));
    }
    Outcome {
        pass,
        detail: detail.join("; "),
        record: json!(rows),
    }
}

fn simulation_one() -> Outcome {
    let methods: Vec<MethodConfig> = ["ncg10", "horseshoe", "ncg2"]
        .iter()
        .map(|p| MethodConfig::gibbs(p, p, GibbsConfig::default()).unwrap())
        .collect();
    let r = run_replications(
        &Scenario::sim1(CovarianceCase::Identity, 1.0),
        &methods,
        SelectionRule::default(),
        SEED,
    )
    .unwrap();
    let [ncg10, hs, ncg2] = [&r.summary[0], &r.summary[1], &r.summary[2]];
    let pass = in_range(ncg10.mse_mean, 0.18, 0.45)
        && ncg10.mse_mean <= hs.mse_mean + 0.05
        && ncg10.fp_mean <= ncg2.fp_mean
        && r.summary.iter().all(|m| m.faults == 0);
    let detail = r
        .summary
        .iter()
        .map(|m| {
            format!(
                "{}: mse {:.4} ({:.4}) fp {:.2} fn {:.2}",
                m.method, m.mse_mean, m.mse_sd, m.fp_mean, m.fn_mean
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        pass,
        detail,
        record: json!({ "summary": r.summary, "config_hash": r.config_hash }),
    }
}

fn tail_condition() -> Outcome {
    let input = ConsistencyCheckInput {
        n: 100,
        p_n: 1000,
        s_n: 5,
        u: 0.5,
    };
    let c1 = input.k_n().powi(2) * input.bound() / 100.0;
    let small = check_tail_condition(
        &hyper(&[c1, 2.0], 1.0, 1.0, 1.0),
        input,
        10_000_000,
        &mut stream(&[SEED, 10, 0]),
    )
    .unwrap();
    let large = check_tail_condition(
        &hyper(&[10.0, 2.0], 1.0, 1.0, 1.0),
        input,
        1_000_000,
        &mut stream(&[SEED, 10, 1]),
    )
    .unwrap();
    let pass = small.satisfied && small.wilson_upper < small.bound && !large.satisfied;
    Outcome {
        pass,
        detail: format!(
            "c1={c1:.3e}: tail {:.3e}, 99% upper {:.3e} < bound {:.3e}; c1=10: tail {:.3e}, satisfied={}",
            small.tail_mass_estimate, small.wilson_upper, small.bound, large.tail_mass_estimate, large.satisfied
        ),
        record: json!({ "small": small, "large": large }),
    }
}

fn criteria() -> Vec<Criterion> {
    let c = |id, name, limit: Option<u64>, run| Criterion {
        id,
        name,
        limit: limit.map(Duration::from_secs),
        run,
    };
    vec![
        c(
            1,
            "chain and product scale representations agree",
            Some(60),
            representations,
        ),
        c(2, "horseshoe preset matches the half-Cauchy hierarchy", None, horseshoe),
        c(
            3,
            "Gibbs marginal matches nested quadrature on the small instance",
            Some(300),
            gibbs_exactness,
        ),
        c(4, "successive-conditional chain matches prior simulation", None, geweke),
        c(
            5,
            "CAVI monotone ELBO, mean and evidence bound on the small instance",
            None,
            vb_correctness,
        ),
        c(6, "M-step recovers known shapes", None, em_recovery),
        c(
            7,
            "GIG moments, digamma inverse and K_1/2 micro-oracles",
            None,
            micro_oracles,
        ),
        c(
            8,
            "simulation 3 model error and false negatives",
            Some(1800),
            simulation_three,
        ),
        c(9, "simulation 1 case I model error and ordering", None, simulation_one),
        c(10, "tail-mass condition checker", None, tail_condition),
    ]
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ")
}

fn record_path(dir: &Path, id: u8) -> PathBuf {
    dir.join(format!("criterion_{id:02}.json"))
}

fn write_record(dir: &Path, id: u8, record: &Value) {
    let mut text = serde_json::to_string_pretty(record).unwrap();
    text.push('\n');
    std::fs::write(record_path(dir, id), text).unwrap();
}

fn main() -> ExitCode {
    // the standard test harness flags (--nocapture, filters) are accepted and ignored
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let (first, second) = (root.join("run1"), root.join("run2"));
    for d in [&first, &second] {
        let _ = std::fs::remove_dir_all(d);
        std::fs::create_dir_all(d).unwrap();
    }
    let mut failures = 0;
    for c in criteria() {
        let start = Instant::now();
        let out = (c.run)();
        let elapsed = start.elapsed();
        write_record(&first, c.id, &out.record);
        let in_time = c.limit.is_none_or(|l| elapsed <= l);
        let pass = out.pass && in_time;
        failures += usize::from(!pass);
        let budget = match c.limit {
            Some(l) if !in_time => format!(" [over the {}s limit]", l.as_secs()),
            _ => String::new(),
        };
        println!(
            "{} criterion {}: {} ({}; {:.1}s{budget})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            out.detail,
            elapsed.as_secs_f64()
        );
    }

    let start = Instant::now();
    let mut differing = Vec::new();
    for c in criteria() {
        write_record(&second, c.id, &(c.run)().record);
        if std::fs::read(record_path(&first, c.id)).unwrap() != std::fs::read(record_path(&second, c.id)).unwrap() {
            differing.push(c.id);
        }
    }
    let pass = differing.is_empty();
    failures += usize::from(!pass);
    println!(
        "{} criterion 11: re-run reproduces every record byte for byte ({}; {:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        if pass {
            "10 of 10 identical".to_string()
        } else {
            format!("differing: {differing:?}")
        },
        start.elapsed().as_secs_f64()
    );
    if failures == 0 {
        return ExitCode::SUCCESS;
    }
    println!("{failures} of 11 criteria failed");
    // the report is the product; strict mode turns a FAIL into a failing exit status
    if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
