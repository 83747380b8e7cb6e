use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ncg_core::eval::{format_table, run_replications, CovarianceCase, MethodConfig, Scenario, SelectionRule};
use ncg_core::gibbs::{run_gibbs, summarize};
use ncg_core::io::{
    format_prostate_table, load_csv, load_prostate, report_csv, run_prostate, standardize, write_json, write_text,
    CsvWriter, EmMode, Engine, HyperSpec, RunConfig,
};
use ncg_core::model::{validate_hyperparameters, Dataset, Hyperparameters};
use ncg_core::prior::{check_density_floor, check_tail_condition, density_curve, ConsistencyCheckInput};
use ncg_core::rng::{stream, tag};
use ncg_core::special::normal_quantile;
use ncg_core::vb::{run_cavi, run_mfvb};
use ncg_core::{Error, Result};

/// Normal compound-gamma shrinkage regression.
#[derive(Parser, Debug)]
#[command(name = "ncg", version)]
struct Cli {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one dataset and write summaries, draws or ELBO trace, and the fitted state.
    Fit(FitArgs),
    /// Run a simulation scenario over replications and write a run report.
    Simulate(SimulateArgs),
    /// Write the marginal prior density of a coefficient on a grid.
    PriorPlot(PriorPlotArgs),
    /// Check the tail-mass and density-floor prior conditions.
    PriorCheck(PriorCheckArgs),
    /// Noise-augmented prostate cancer comparison.
    Prostate(ProstateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Gibbs,
    Vb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EmArg {
    Off,
    Mcem,
    Mfvb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    Interval,
    Median,
}

#[derive(Args, Debug, Clone)]
struct GibbsArgs {
    /// Total Gibbs iterations including burn-in.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct SelectionArgs {
    #[arg(long, value_enum, default_value = "interval")]
    selection: SelectionArg,
    /// Credible level for interval selection.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// |median| threshold for median selection.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
}

impl SelectionArgs {
    fn rule(&self) -> SelectionRule {
        match self.selection {
            SelectionArg::Interval => SelectionRule::Interval { level: self.level },
            SelectionArg::Median => SelectionRule::MedianThreshold {
                threshold: self.threshold,
            },
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// ncg2, ncg10 or horseshoe.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    em: Option<EmArg>,
    /// Center y and scale X columns before fitting (default on).
    #[arg(long)]
    standardize: Option<bool>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    gibbs: GibbsArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// sim1, sim2 or sim3.
    #[arg(long)]
    preset: String,
    /// identity, ar1 or equi (sim1 and sim2).
    #[arg(long, default_value = "identity")]
    case: String,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Training rows.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods: a preset (Gibbs), or mcem-, vb- or mfvb- followed by a preset.
    #[arg(long, value_delimiter = ',', default_value = "ncg2,ncg10,horseshoe")]
    methods: Vec<String>,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[command(flatten)]
    select: SelectionArgs,
}

#[derive(Args, Debug)]
struct HyperArgs {
    #[arg(long, default_value = "ncg2")]
    preset: String,
    /// Comma-separated shapes c1..cN (overrides the preset's depth).
    #[arg(long, value_delimiter = ',')]
    shapes: Option<Vec<f64>>,
    /// Override the first shape only.
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::preset(&self.preset)?;
        if let Some(s) = &self.shapes {
            h.shapes = s.clone();
        }
        if let Some(c1) = self.c1 {
            if let Some(first) = h.shapes.first_mut() {
                *first = c1;
            }
        }
        if let Some(phi) = self.phi {
            h.phi = phi;
        }
        Ok(h)
    }
}

#[derive(Args, Debug)]
struct PriorPlotArgs {
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    grid_min: f64,
    #[arg(long, default_value_t = 3.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 121)]
    grid_points: usize,
    /// Monte Carlo scale draws shared by every grid point.
    #[arg(long, default_value_t = 200_000)]
    draws: usize,
}

#[derive(Args, Debug)]
struct PriorCheckArgs {
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    p_n: usize,
    #[arg(long, default_value_t = 5)]
    s_n: usize,
    #[arg(long, default_value_t = 0.5)]
    u: f64,
    /// Half-width of the interval on which the density floor is checked.
    #[arg(long, default_value_t = 1.0)]
    e_n: f64,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
}

#[derive(Args, Debug)]
struct ProstateArgs {
    /// CSV with columns lcavol, lweight, age, lbph, svi, lcp, gleason, pgg45 and lpsa.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "ncg2,ncg10,horseshoe")]
    methods: Vec<String>,
    #[arg(long)]
    standardize: Option<bool>,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[command(flatten)]
    select: SelectionArgs,
}

struct Context {
    base: RunConfig,
    out_dir: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn apply_gibbs(cfg: &mut RunConfig, g: &GibbsArgs) {
    if let Some(v) = g.iters {
        cfg.gibbs.total_iters = v;
    }
    if let Some(v) = g.burn_in {
        cfg.gibbs.burn_in = v;
    }
    if let Some(v) = g.thin {
        cfg.gibbs.thin = v;
    }
}

/// `ncg10` → Gibbs, `mcem-ncg10` → Gibbs with MCEM, `vb-ncg10` → CAVI,
/// `mfvb-ncg10` → CAVI with shape updates.
fn method_from_name(name: &str, base: &RunConfig) -> Result<MethodConfig> {
    let mut cfg = base.clone();
    let (engine, em, preset) = if let Some(p) = name.strip_prefix("mcem-") {
        (Engine::Gibbs, EmMode::Mcem, p)
    } else if let Some(p) = name.strip_prefix("mfvb-") {
        (Engine::Vb, EmMode::Mfvb, p)
    } else if let Some(p) = name.strip_prefix("vb-") {
        (Engine::Vb, EmMode::Off, p)
    } else {
        (Engine::Gibbs, EmMode::Off, name)
    };
    cfg.engine = engine;
    cfg.em = em;
    cfg.hyperparameters = HyperSpec::Preset(preset.to_string());
    cfg.method(name)
}

fn compact_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn fit(ctx: &Context, args: &FitArgs) -> Result<()> {
    let mut cfg = ctx.base.clone();
    if let Some(e) = args.engine {
        cfg.engine = match e {
            EngineArg::Gibbs => Engine::Gibbs,
            EngineArg::Vb => Engine::Vb,
        };
    }
    if let Some(p) = &args.preset {
        cfg.hyperparameters = HyperSpec::Preset(p.clone());
    }
    if let Some(em) = args.em {
        cfg.em = match em {
            EmArg::Off => EmMode::Off,
            EmArg::Mcem => EmMode::Mcem,
            EmArg::Mfvb => EmMode::Mfvb,
        };
    }
    apply_gibbs(&mut cfg, &args.gibbs);
    let standardize_x = args.standardize.or(cfg.standardize).unwrap_or(true);
    cfg.standardize = Some(standardize_x);
    let method = cfg.method("fit")?;
    for w in validate_hyperparameters(&method.hyperparameters)? {
        eprintln!("warning: {w}");
    }
    let raw = load_csv(&args.data, &args.response)?;
    let data = if standardize_x { standardize(&raw, &raw)?.0 } else { raw };
    let p = data.p();
    let meta_json =
        compact_json(&json!({ "run": cfg, "method": method, "data": args.data, "response": args.response }))?;
    let meta = [("config", meta_json.clone())];
    let coef_header: Vec<String> = (1..=p).map(|j| format!("beta_{j}")).collect();
    let mut summary = CsvWriter::new(&meta, &["index", "mean", "sd", "lower", "upper", "selected"]);
    let mut rows = Vec::with_capacity(p);

    match cfg.engine {
        Engine::Gibbs => {
            let mut rng = stream(&[cfg.seed, tag::FIT, cfg.gibbs.seed, 0]);
            let ncg_core::eval::EngineConfig::Gibbs(gcfg) = &method.engine else {
                unreachable!()
            };
            let run = run_gibbs(&data, &method.hyperparameters, gcfg, &mut rng)?;
            let mut header = vec!["iter"];
            header.extend(coef_header.iter().map(String::as_str));
            header.push("sigma2");
            let mut draws = CsvWriter::new(&meta, &header);
            for (r, &it) in run.draws.iterations.iter().enumerate() {
                let mut row = vec![it as f64];
                row.extend(run.draws.beta_draws.row(r).iter());
                row.push(run.draws.sigma2_draws[r]);
                draws.row(&row);
            }
            draws.write(&ctx.path("draws.csv"))?;
            if !run.em_trace.is_empty() {
                let names: Vec<String> = (1..=method.hyperparameters.depth()).map(|k| format!("c_{k}")).collect();
                let mut header = vec!["round"];
                header.extend(names.iter().map(String::as_str));
                header.push("max_change");
                let mut em = CsvWriter::new(&meta, &header);
                for r in &run.em_trace {
                    let mut row = vec![r.round as f64];
                    row.extend(&r.shapes);
                    row.push(r.max_change);
                    em.row(&row);
                }
                em.write(&ctx.path("em_trace.csv"))?;
            }
            for (j, s) in summarize(&run.draws, args.level)?.iter().enumerate() {
                rows.push([
                    (j + 1) as f64,
                    s.mean,
                    s.sd,
                    s.lower,
                    s.upper,
                    f64::from(u8::from(s.excludes_zero())),
                ]);
            }
            write_json(
                &ctx.path("fit.json"),
                &json!({
                    "config": cfg,
                    "method": method,
                    "hyperparameters": run.hyperparameters,
                    "clamp_events": run.clamp_events,
                    "kept_draws": run.draws.kept(),
                    "final_state": run.final_state,
                }),
            )?;
        }
        Engine::Vb => {
            let (fit_run, hyper, rounds) = match cfg.em {
                EmMode::Mfvb => {
                    let r = run_mfvb(&data, &method.hyperparameters, &cfg.cavi, &cfg.mfvb)?;
                    (r.fit, r.hyperparameters, r.rounds)
                }
                _ => (
                    run_cavi(&data, &method.hyperparameters, &cfg.cavi)?,
                    method.hyperparameters.clone(),
                    Vec::new(),
                ),
            };
            let mut trace = CsvWriter::new(&meta, &["sweep", "elbo", "max_abs_change"]);
            for r in &fit_run.trace {
                trace.row(&[r.sweep as f64, r.elbo, r.max_abs_change]);
            }
            trace.write(&ctx.path("elbo_trace.csv"))?;
            if !rounds.is_empty() {
                let names: Vec<String> = (1..=hyper.depth()).map(|k| format!("c_{k}")).collect();
                let mut header = vec!["round"];
                header.extend(names.iter().map(String::as_str));
                header.push("max_change");
                let mut em = CsvWriter::new(&meta, &header);
                for r in &rounds {
                    let mut row = vec![r.round as f64];
                    row.extend(&r.shapes);
                    row.push(r.max_change);
                    em.row(&row);
                }
                em.write(&ctx.path("em_trace.csv"))?;
            }
            let z = normal_quantile(0.5 + 0.5 * args.level);
            let st = &fit_run.state;
            for j in 0..p {
                let (lo, hi) = st.interval(j, z);
                let sel = lo > 0.0 || hi < 0.0;
                rows.push([
                    (j + 1) as f64,
                    st.mu_star[j],
                    st.v_star[(j, j)].sqrt(),
                    lo,
                    hi,
                    f64::from(u8::from(sel)),
                ]);
            }
            if !fit_run.converged {
                eprintln!("warning: CAVI stopped at the iteration cap before reaching the ELBO tolerance");
            }
            write_json(
                &ctx.path("fit.json"),
                &json!({
                    "config": cfg,
                    "method": method,
                    "hyperparameters": hyper,
                    "converged": fit_run.converged,
                    "state": fit_run.state,
                }),
            )?;
        }
    }
    for r in &rows {
        summary.row(r);
    }
    summary.write(&ctx.path("summary.csv"))?;
    println!(
        "{:<6} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "coef", "mean", "sd", "lower", "upper", "selected"
    );
    for r in &rows {
        println!(
            "{:<6} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>8}",
            format!("b{}", r[0]),
            r[1],
            r[2],
            r[3],
            r[4],
            if r[5] > 0.0 { "yes" } else { "no" }
        );
    }
    Ok(())
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let mut cfg = ctx.base.clone();
    apply_gibbs(&mut cfg, &args.gibbs);
    let mut scenario = match args.preset.as_str() {
        "sim1" => Scenario::sim1(CovarianceCase::by_name(&args.case)?, args.sigma2),
        "sim2" => Scenario::sim2(CovarianceCase::by_name(&args.case)?, args.sigma2),
        "sim3" => Scenario::sim3(args.n.unwrap_or(20)),
        other => {
            return Err(Error::Validation(vec![format!(
                "unknown scenario preset '{other}' (expected sim1, sim2 or sim3)"
            )]))
        }
    };
    if let Some(n) = args.n {
        scenario.n_train = n;
    }
    if let Some(n) = args.n_test {
        scenario.n_test = n;
    }
    if let Some(r) = args.reps {
        scenario.replications = r;
    }
    let methods = args
        .methods
        .iter()
        .map(|m| method_from_name(m, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let rule = args.select.rule();
    let report = run_replications(&scenario, &methods, rule, cfg.seed)?;
    let meta_json = compact_json(&json!({
        "scenario": scenario,
        "methods": methods,
        "selection": rule,
        "seed": cfg.seed,
        "config_hash": report.config_hash,
    }))?;
    write_text(&ctx.path("run_report.csv"), &report_csv(&meta_json, &report.summary))?;
    let mut reps = CsvWriter::new(
        &[("config", meta_json.clone())],
        &["rep", "method", "mse", "fp", "fn", "fault"],
    );
    for r in &report.reps {
        for (m, res) in r.results.iter().enumerate() {
            match res {
                Ok(v) => reps.row(&[r.rep as f64, m as f64, v.mse, v.fp as f64, v.fn_ as f64, 0.0]),
                Err(_) => reps.row(&[r.rep as f64, m as f64, f64::NAN, f64::NAN, f64::NAN, 1.0]),
            }
        }
    }
    reps.write(&ctx.path("reps.csv"))?;
    write_json(&ctx.path("run_report.json"), &report)?;
    let table = format!("# {}\n{}", scenario.name, format_table(&report));
    write_text(&ctx.path("table.txt"), &table)?;
    print!("{table}");
    for r in report.reps.iter() {
        for (m, res) in r.results.iter().enumerate() {
            if let Err(e) = res {
                eprintln!("fault: rep {} method {}: {e}", r.rep, methods[m].name);
            }
        }
    }
    Ok(())
}

fn grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(max > min) {
        return Err(Error::Validation(vec![
            "grid needs grid_max > grid_min and at least 2 points".into(),
        ]));
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points).map(|i| min + step * i as f64).collect())
}

fn prior_plot(ctx: &Context, args: &PriorPlotArgs) -> Result<()> {
    let h = args.hyper.resolve()?;
    for w in validate_hyperparameters(&h)? {
        eprintln!("warning: {w}");
    }
    let xs = grid(args.grid_min, args.grid_max, args.grid_points)?;
    let seed = ctx.base.seed;
    let mut rng = stream(&[seed, tag::FIT, 0]);
    let curve = density_curve(&xs, &h, args.draws, &mut rng)?;
    let meta_json = compact_json(&json!({
        "hyperparameters": h,
        "grid": [args.grid_min, args.grid_max, args.grid_points],
        "draws": args.draws,
        "seed": seed,
    }))?;
    let mut w = CsvWriter::new(&[("config", meta_json)], &["x", "log_density", "stderr"]);
    for p in &curve {
        w.row(&[p.x, p.log_density, p.stderr]);
    }
    let path = ctx.path("density_curve.csv");
    w.write(&path)?;
    println!("wrote {} grid points to {}", curve.len(), path.display());
    Ok(())
}

fn prior_check(ctx: &Context, args: &PriorCheckArgs) -> Result<()> {
    let h = args.hyper.resolve()?;
    let input = ConsistencyCheckInput {
        n: args.n,
        p_n: args.p_n,
        s_n: args.s_n,
        u: args.u,
    };
    let seed = ctx.base.seed;
    let tail = check_tail_condition(&h, input, args.draws, &mut stream(&[seed, tag::FIT, 1]))?;
    let floor = check_density_floor(&h, args.e_n, args.p_n, args.draws, &mut stream(&[seed, tag::FIT, 2]))?;
    write_json(&ctx.path("tail_check.json"), &json!({ "seed": seed, "report": tail }))?;
    write_json(
        &ctx.path("density_floor.json"),
        &json!({ "seed": seed, "report": floor }),
    )?;
    println!(
        "tail mass {:.4e} (99% interval [{:.4e}, {:.4e}]) vs bound {:.4e}: {}",
        tail.tail_mass_estimate,
        tail.wilson_lower,
        tail.wilson_upper,
        tail.bound,
        if tail.satisfied { "satisfied" } else { "not satisfied" }
    );
    println!("sufficient c1 for this setting: {:.4e}", tail.sufficient_c1);
    println!(
        "density floor at E_n={}: ln f = {:.4} (ratio {:.4})",
        floor.e_n, floor.log_density, floor.ratio
    );
    Ok(())
}

fn prostate(ctx: &Context, args: &ProstateArgs) -> Result<()> {
    let mut cfg = ctx.base.clone();
    apply_gibbs(&mut cfg, &args.gibbs);
    let standardize_x = args.standardize.or(cfg.standardize).unwrap_or(true);
    let data: Dataset = load_prostate(&args.data)?;
    let methods = args
        .methods
        .iter()
        .map(|m| method_from_name(m, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let rule = args.select.rule();
    let report = run_prostate(&data, &methods, rule, args.reps, cfg.seed, standardize_x)?;
    let meta_json = compact_json(&json!({
        "data": args.data,
        "methods": methods,
        "selection": rule,
        "reps": args.reps,
        "seed": cfg.seed,
        "standardize": standardize_x,
        "config_hash": report.config_hash,
    }))?;
    write_text(
        &ctx.path("prostate_report.csv"),
        &report_csv(&meta_json, &report.summary),
    )?;
    write_json(&ctx.path("prostate_report.json"), &report)?;
    let table = format_prostate_table(&report);
    write_text(&ctx.path("prostate_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        base.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        base.out_dir = d.clone();
    }
    if let Some(t) = cli.threads {
        // a second initialisation in the same process is harmless to ignore
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let ctx = Context {
        out_dir: base.out_dir.clone(),
        base,
    };
    match &cli.command {
        Command::Fit(a) => fit(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::PriorPlot(a) => prior_plot(&ctx, a),
        Command::PriorCheck(a) => prior_check(&ctx, a),
        Command::Prostate(a) => prostate(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
