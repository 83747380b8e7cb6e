//! CSV ingestion, file emission, run configuration and the prostate pipeline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    aggregate, dataset_hash, fit_method, hex_digest, prediction_mse, EngineConfig, MethodConfig, MethodMetrics,
    MethodReport, RepRecord, SelectionRule,
};
use crate::gibbs::{GibbsConfig, McemConfig};
use crate::model::{validate_hyperparameters, Dataset, Hyperparameters};
use crate::rng::{stream, tag};
use crate::special::standard_normal;
use crate::vb::{CaviConfig, MfvbConfig};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Column-named numeric table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// rows × columns.
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| {
            Error::data(format!(
                "no column named '{name}'; available columns: {}",
                self.columns.join(", ")
            ))
        })
    }
}

/// Parse a comma-separated table with a header row. Lines starting with `#`
/// are skipped. Every cell must parse as a finite or infinite f64.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(Error::data("missing header row"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!(
                    "line {line}, column '{}': '{cell}' is not a number",
                    columns[c]
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Table {
        values: DMatrix::from_row_slice(rows, columns.len(), &data),
        columns,
    })
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_table(&text).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Dataset from a table: `response` becomes y, every other column (in file
/// order) becomes a column of X.
pub fn dataset_from_table(table: &Table, response: &str) -> Result<(Dataset, Vec<String>)> {
    let r = table.column_index(response)?;
    let keep: Vec<usize> = (0..table.columns.len()).filter(|&c| c != r).collect();
    let x = table.values.select_columns(&keep);
    let y = table.values.column(r).into_owned();
    let names = keep.iter().map(|&c| table.columns[c].clone()).collect();
    Ok((Dataset::new(x, y, None)?, names))
}

pub fn load_csv(path: &Path, response: &str) -> Result<Dataset> {
    let table = read_table(path)?;
    Ok(dataset_from_table(&table, response)?.0)
}

/// Shortest representation that parses back to the same f64.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Buffered CSV text whose first lines carry `# key: value` metadata.
pub struct CsvWriter {
    text: String,
    width: usize,
}

impl CsvWriter {
    pub fn new(meta: &[(&str, String)], header: &[&str]) -> Self {
        let mut text = String::new();
        for (k, v) in meta {
            text.push_str(&format!("# {k}: {}\n", v.replace('\n', " ")));
        }
        text.push_str(&header.join(","));
        text.push('\n');
        CsvWriter {
            text,
            width: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        let cells: Vec<String> = values.iter().map(|&v| format_float(v)).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_text(path, &self.text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Gibbs,
    Vb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmMode {
    #[default]
    Off,
    Mcem,
    Mfvb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperSpec {
    Preset(String),
    Explicit(Hyperparameters),
}

impl HyperSpec {
    pub fn resolve(&self) -> Result<Hyperparameters> {
        match self {
            HyperSpec::Preset(name) => Hyperparameters::preset(name),
            HyperSpec::Explicit(h) => Ok(h.clone()),
        }
    }
}

/// Everything needed to reproduce one fit. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub engine: Engine,
    pub hyperparameters: HyperSpec,
    pub gibbs: GibbsConfig,
    pub cavi: CaviConfig,
    pub mcem: McemConfig,
    pub mfvb: MfvbConfig,
    pub em: EmMode,
    pub seed: u64,
    /// `None` means the context default (on for real data, off for synthetic).
    pub standardize: Option<bool>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            engine: Engine::Gibbs,
            hyperparameters: HyperSpec::Preset("ncg10".into()),
            gibbs: GibbsConfig::default(),
            cavi: CaviConfig::default(),
            mcem: McemConfig::default(),
            mfvb: MfvbConfig::default(),
            em: EmMode::Off,
            seed: 0,
            standardize: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&text)
    }

    /// Resolve the preset and check that the EM mode fits the engine.
    pub fn method(&self, name: &str) -> Result<MethodConfig> {
        let hyperparameters = self.hyperparameters.resolve()?;
        validate_hyperparameters(&hyperparameters)?;
        let engine = match (self.engine, self.em) {
            (Engine::Gibbs, EmMode::Mfvb) | (Engine::Vb, EmMode::Mcem) => {
                return Err(Error::Validation(vec![format!(
                    "em mode {:?} does not apply to engine {:?}",
                    self.em, self.engine
                )]))
            }
            (Engine::Gibbs, em) => {
                let mut g = self.gibbs;
                g.seed = self.seed;
                g.mcem = (em == EmMode::Mcem).then_some(self.mcem);
                g.validate()?;
                EngineConfig::Gibbs(g)
            }
            (Engine::Vb, em) => EngineConfig::Vb {
                cavi: self.cavi,
                mfvb: (em == EmMode::Mfvb).then_some(self.mfvb),
            },
        };
        Ok(MethodConfig {
            name: name.into(),
            hyperparameters,
            engine,
        })
    }
}

pub const PROSTATE_COVARIATES: [&str; 8] = ["lcavol", "lweight", "age", "lbph", "svi", "lcp", "gleason", "pgg45"];
pub const PROSTATE_RESPONSE: &str = "lpsa";
pub const PROSTATE_ROWS: usize = 97;
pub const PROSTATE_TRAIN: usize = 67;
pub const PROSTATE_NOISE: usize = 12;

/// The eight clinical covariates and log-PSA, checked for the expected 97 rows.
pub fn load_prostate(path: &Path) -> Result<Dataset> {
    let table = read_table(path)?;
    if table.values.nrows() != PROSTATE_ROWS {
        return Err(Error::data(format!(
            "{}: expected {PROSTATE_ROWS} prostate rows, found {}",
            path.display(),
            table.values.nrows()
        )));
    }
    let cols = PROSTATE_COVARIATES
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let y = table.values.column(table.column_index(PROSTATE_RESPONSE)?).into_owned();
    Dataset::new(table.values.select_columns(&cols), y, None)
}

/// Center y and center/scale each X column with training statistics,
/// applying the same transform to the test set.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = train.n() as f64;
    let ybar = train.y.mean();
    let mut xtr = train.x.clone();
    let mut xte = test.x.clone();
    for j in 0..train.p() {
        let m = train.x.column(j).mean();
        let var = train.x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let s = if var > 0.0 { var.sqrt() } else { 1.0 };
        xtr.column_mut(j).apply(|v| *v = (*v - m) / s);
        xte.column_mut(j).apply(|v| *v = (*v - m) / s);
    }
    let ytr = train.y.map(|v| v - ybar);
    let yte = test.y.map(|v| v - ybar);
    Ok((Dataset::new(xtr, ytr, None)?, Dataset::new(xte, yte, None)?))
}

/// Append 12 standard-normal noise columns and split 67/30 at random, both
/// drawn from the stream (seed, PROSTATE, rep).
pub fn prostate_split(data: &Dataset, seed: u64, rep: u64, standardize_x: bool) -> Result<(Dataset, Dataset)> {
    if data.n() != PROSTATE_ROWS {
        return Err(Error::data(format!(
            "expected {PROSTATE_ROWS} rows, found {}",
            data.n()
        )));
    }
    let mut rng = stream(&[seed, tag::PROSTATE, rep]);
    let n = data.n();
    let p = data.p();
    let mut x = DMatrix::zeros(n, p + PROSTATE_NOISE);
    x.columns_mut(0, p).copy_from(&data.x);
    for j in p..p + PROSTATE_NOISE {
        for i in 0..n {
            x[(i, j)] = standard_normal(&mut rng);
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (tr, te) = idx.split_at(PROSTATE_TRAIN);
    let pick = |rows: &[usize]| {
        Dataset::new(
            x.select_rows(rows),
            DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i])),
            None,
        )
    };
    let (train, test) = (pick(tr)?, pick(te)?);
    if standardize_x {
        standardize(&train, &test)
    } else {
        Ok((train, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProstateReport {
    pub methods: Vec<MethodConfig>,
    pub selection: SelectionRule,
    pub seed: u64,
    pub standardize: bool,
    pub config_hash: String,
    /// `fp` counts selected noise columns; `fn_` is unused (always 0).
    pub summary: Vec<MethodReport>,
    pub reps: Vec<RepRecord>,
}

/// Fit every method on `reps` random noise-augmented splits; the test
/// metric is prediction MSE on observed responses.
pub fn run_prostate(
    data: &Dataset,
    methods: &[MethodConfig],
    rule: SelectionRule,
    reps: usize,
    seed: u64,
    standardize_x: bool,
) -> Result<ProstateReport> {
    if reps == 0 || methods.is_empty() {
        return Err(Error::Validation(vec![
            "need at least one replication and one method".into()
        ]));
    }
    let config_hash = hex_digest(&serde_json::to_vec(&(methods, rule, reps, seed, standardize_x))?);
    let p = data.p();
    let records = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<RepRecord> {
            let (train, test) = prostate_split(data, seed, rep, standardize_x)?;
            let results = methods
                .iter()
                .map(|m| {
                    let fit = fit_method(m, &train, rule, seed, rep).map_err(|e| e.to_string())?;
                    let fp = fit.selected[p..].iter().filter(|&&s| s).count();
                    Ok(MethodMetrics {
                        mse: prediction_mse(&fit.beta_hat, &test),
                        fp,
                        fn_: 0,
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
    Ok(ProstateReport {
        summary: aggregate(&names, &records),
        methods: methods.to_vec(),
        selection: rule,
        seed,
        standardize: standardize_x,
        config_hash,
        reps: records,
    })
}

/// Method summary rows as CSV with the config embedded as a comment.
pub fn report_csv(config_json: &str, summary: &[MethodReport]) -> String {
    let mut out = format!("# config: {config_json}\n");
    out.push_str("method,mse_mean,mse_sd,fp_mean,fp_sd,fn_mean,fn_sd,replications,faults,clamp_events\n");
    for r in summary {
        let nums = [r.mse_mean, r.mse_sd, r.fp_mean, r.fp_sd, r.fn_mean, r.fn_sd]
            .map(format_float)
            .join(",");
        out.push_str(&format!(
            "{},{nums},{},{},{}\n",
            r.method, r.replications, r.faults, r.clamp_events
        ));
    }
    out
}

pub fn format_prostate_table(report: &ProstateReport) -> String {
    let mut out = format!("{:<16} {:>20} {:>20}\n", "Methods", "MSE (sd)", "FPR (sd)");
    for r in &report.summary {
        out.push_str(&format!(
            "{:<16} {:>20} {:>20}\n",
            r.method,
            format!("{:.4} ({:.4})", r.mse_mean, r.mse_sd),
            format!("{:.4} ({:.4})", r.fp_mean, r.fp_sd),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_row_file() {
        let t = parse_table("y,x1\n1,2\n3,4\n5,6").unwrap();
        let (d, names) = dataset_from_table(&t, "y").unwrap();
        assert_eq!((d.n(), d.p()), (3, 1));
        assert_eq!(d.y.as_slice(), &[1.0, 3.0, 5.0]);
        assert_eq!(names, vec!["x1"]);
    }

    #[test]
    fn missing_response_names_available_columns() {
        let t = parse_table("a,b\n1,2\n").unwrap();
        let msg = dataset_from_table(&t, "y").unwrap_err().to_string();
        assert!(msg.contains("'y'") && msg.contains("a, b"), "{msg}");
    }

    #[test]
    fn bad_cell_reports_location() {
        let msg = parse_table("y,x\n1,2\n3,oops\n").unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("column 'x'"), "{msg}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_csv(Path::new("/nonexistent/data.csv"), "y").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn comments_are_skipped() {
        let t = parse_table("# config: {}\ny,x\n1,2\n").unwrap();
        assert_eq!(t.values.nrows(), 1);
    }

    #[test]
    fn run_config_resolution() {
        let cfg = RunConfig::from_json(r#"{"engine":"vb","em":"mfvb","hyperparameters":"ncg2","seed":4}"#).unwrap();
        let m = cfg.method("vb").unwrap();
        assert_eq!(m.hyperparameters.depth(), 2);
        assert!(matches!(m.engine, EngineConfig::Vb { mfvb: Some(_), .. }));
        let bad = RunConfig::from_json(r#"{"engine":"gibbs","em":"mfvb"}"#).unwrap();
        assert!(bad.method("x").is_err());
        let explicit = RunConfig::from_json(
            r#"{"hyperparameters":{"shapes":[1.0,2.0],"phi":1.0,"c0":1.0,"d0":1.0},"em":"mcem","seed":9}"#,
        )
        .unwrap();
        match explicit.method("g").unwrap().engine {
            EngineConfig::Gibbs(g) => assert!(g.mcem.is_some() && g.seed == 9),
            other => panic!("{other:?}"),
        }
    }

    fn fake_prostate() -> Dataset {
        let x = DMatrix::from_fn(PROSTATE_ROWS, 8, |i, j| (i * 8 + j) as f64);
        let y = DVector::from_fn(PROSTATE_ROWS, |i, _| i as f64);
        Dataset::new(x, y, None).unwrap()
    }

    #[test]
    fn prostate_split_is_an_exact_partition() {
        let d = fake_prostate();
        let (tr, te) = prostate_split(&d, 3, 0, false).unwrap();
        assert_eq!((tr.n(), te.n(), tr.p()), (67, 30, 20));
        let mut ys: Vec<f64> = tr.y.iter().chain(te.y.iter()).copied().collect();
        ys.sort_by(f64::total_cmp);
        assert_eq!(ys, (0..97).map(|i| i as f64).collect::<Vec<_>>());
        let again = prostate_split(&d, 3, 0, false).unwrap();
        assert_eq!((tr.clone(), te), again);
        let other = prostate_split(&d, 4, 0, false).unwrap();
        assert_ne!(tr, other.0);
    }

    #[test]
    fn standardization_uses_training_statistics() {
        let d = fake_prostate();
        let (tr, _) = prostate_split(&d, 1, 0, true).unwrap();
        assert!(tr.y.mean().abs() < 1e-10);
        for j in 0..tr.p() {
            let c = tr.x.column(j);
            let var = c.iter().map(|v| v * v).sum::<f64>() / (tr.n() - 1) as f64;
            assert!(c.mean().abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let mut w = CsvWriter::new(&[("config", "{\"a\":1}".into())], &["y", "x"]);
            for pair in vals.chunks(2) {
                w.row(&[pair[0], *pair.get(1).unwrap_or(&0.0)]);
            }
            let t = parse_table(&w.finish()).unwrap();
            for (i, pair) in vals.chunks(2).enumerate() {
                prop_assert_eq!(t.values[(i, 0)].to_bits(), pair[0].to_bits());
            }
        }
    }
}
