//! Experiment orchestration: configuration, the `sample`, `features`,
//! `approx`, `bench`, `krr` and `klr` pipelines, and report emission.
//!
//! A run writes one JSON report (schema-versioned, embedding the full
//! configuration) and a long-format CSV next to it. If a run fails part way,
//! the records gathered so far are still written, with `status = "failed"`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, preprocess, synthetic_classification, synthetic_regression, synthetic_sphere, CsvOptions, DataSet,
    LabelColumn, Recipe, ShapeSource, Target, DEFAULT_SUBSAMPLE_CAP,
};
use crate::distributions::{cauchy_cdf, gbp_cdf, Chi, GbpParams};
use crate::error::{Error, Result};
use crate::features::{build, fourier_law, round_up_to_multiple, FeatureOperator, OperatorRecord, RadialLaw, Scheme};
use crate::harness::{approx_error, bench_speedup, cf_check, BenchOptions, NormKind};
use crate::io::write_atomic;
use crate::kernels::{kernel_matrix_symmetric, KernelFamily, KernelSpec};
use crate::learners::{
    accuracy, ece, fit_krr_exact, fit_logistic_features, fit_ridge_features, one_hot, predict_proba, r_squared,
    squared_loss_probabilities, LogisticOptions, ProbabilityMapping, Task, ECE_BINS,
};
use crate::multivariate::MultivariateSampler;
use crate::rng::{RngStream, StreamId};
use crate::stats::{ks_one_sample, ks_two_sample};

pub const REPORT_SCHEMA: &str = "rfkernel-report";
pub const REPORT_VERSION: u32 = 1;
/// Eigen-based norms are cubic in `n`; larger runs need `allow_large`.
pub const EIGEN_NORM_CAP: usize = 1_000;

// stream ids; operators use OPERATOR_STREAM + index in the p grid
const DATA_STREAM: u64 = 0;
const SUBSAMPLE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const SAMPLER_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;
const RADIAL_STREAM: u64 = 5;
const OPERATOR_STREAM: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Csv { path: String, label_col: LabelColumn, task: Task },
    /// Points uniform on a sphere, with no target.
    Sphere { n: usize, d: usize, radius: f64 },
    Classification { n: usize, d: usize, classes: usize, lengthscale: f64, temperature: f64 },
    Regression { n: usize, d: usize, noise: f64 },
}

impl DataSource {
    pub fn load(&self, rng: &mut RngStream) -> Result<DataSet> {
        match self {
            DataSource::Csv { path, label_col, task } => {
                load_csv(Path::new(path), &CsvOptions { label_col: label_col.clone(), task: *task })
            }
            DataSource::Sphere { n, d, radius } => {
                let x = synthetic_sphere(*n, *d, *radius, rng);
                DataSet::new("synthetic-sphere", x, Target::Values(DVector::zeros(*n)))
            }
            DataSource::Classification { n, d, classes, lengthscale, temperature } => {
                synthetic_classification(*n, *d, *classes, *lengthscale, *temperature, rng)
            }
            DataSource::Regression { n, d, noise } => synthetic_regression(*n, *d, *noise, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Draw from the kernel's Fourier law; check characteristic function and norm law.
    Sample { n: usize, d: usize, probes: usize },
    /// Build operators and record their seed records.
    Features { d: usize },
    Approx { allow_large: bool },
    Bench { repeats: usize, include_construction: bool },
    Krr { exact: bool, mapping: ProbabilityMapping },
    Klr { max_iter: usize, tol: f64, mapping: ProbabilityMapping },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Features { .. } => "features",
            Command::Approx { .. } => "approx",
            Command::Bench { .. } => "bench",
            Command::Krr { .. } => "krr",
            Command::Klr { .. } => "klr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub data: Option<DataSource>,
    pub preprocess: Recipe,
    pub subsample_cap: usize,
    pub test_fraction: f64,
    pub kernel: KernelFamily,
    pub shape: ShapeSource,
    pub scheme: Scheme,
    pub p: Vec<usize>,
    pub seed: u64,
    pub lambda: Vec<f64>,
    pub norms: Vec<NormKind>,
    /// Path of the JSON report; the CSV table goes next to it.
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(command: Command, kernel: KernelFamily, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            data: None,
            preprocess: Recipe::default(),
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            test_fraction: 0.2,
            kernel,
            shape: ShapeSource::Identity,
            scheme: Scheme::Rff,
            p: vec![1024],
            seed: 0,
            lambda: vec![1e-3],
            norms: vec![NormKind::Frobenius],
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.p.is_empty() || self.p.contains(&0) {
            return Err(Error::param("p grid must be non-empty with every p >= 1"));
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::param("lambda grid must be non-empty with finite values >= 0"));
        }
        if self.norms.is_empty() {
            return Err(Error::param("norm set must not be empty"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::param("test fraction must lie in [0, 1)"));
        }
        if self.subsample_cap == 0 {
            return Err(Error::param("subsample cap must be >= 1"));
        }
        if self.scheme == Scheme::Orf && self.kernel == KernelFamily::L1Laplacian {
            return Err(Error::param("ORF is not defined for the l1-Laplacian kernel"));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::param("output path is empty"));
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out.with_extension("csv")
    }

    fn stream(&self, stream_id: u64) -> StreamId {
        StreamId { seed: self.seed, stream_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportError {
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub task: Task,
    pub preprocess: Recipe,
}

/// One measured row. Norms that do not apply are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub dataset: String,
    pub kernel: String,
    pub scheme: String,
    pub p: Option<usize>,
    pub seed: Option<StreamId>,
    pub lambda: Option<f64>,
    pub loss: Option<String>,
    pub rel_frobenius: Option<f64>,
    pub rel_operator: Option<f64>,
    pub rel_nuclear: Option<f64>,
    pub metric: BTreeMap<String, f64>,
    pub time_ms: f64,
}

impl Record {
    fn new(dataset: &str, kernel: KernelFamily, scheme: &str) -> Self {
        Self {
            dataset: dataset.into(),
            kernel: kernel.label(),
            scheme: scheme.into(),
            p: None,
            seed: None,
            lambda: None,
            loss: None,
            rel_frobenius: None,
            rel_operator: None,
            rel_nuclear: None,
            metric: BTreeMap::new(),
            time_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub schema_version: u32,
    pub status: Status,
    pub error: Option<ReportError>,
    pub config: ExperimentConfig,
    pub dataset: Option<DatasetSummary>,
    pub threads: usize,
    pub notes: Vec<String>,
    pub operators: Vec<OperatorRecord>,
    pub records: Vec<Record>,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_VERSION,
            status: Status::Ok,
            error: None,
            config: config.clone(),
            dataset: None,
            threads: rayon::current_num_threads(),
            notes: Vec::new(),
            operators: Vec::new(),
            records: Vec::new(),
        }
    }

    /// Copy with every wall-time set to zero, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.time_ms = 0.0;
            rec.metric.retain(|k, _| !k.ends_with("_ms") && k != "speedup");
        }
        r
    }

    /// Long-format table: dataset, kernel, scheme, p, norm, value, time_ms, seed.
    /// Metrics share the `norm` column with the error norms.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Serde(e.to_string());
        w.write_record(["dataset", "kernel", "scheme", "p", "norm", "value", "time_ms", "seed"]).map_err(csv_err)?;
        for r in &self.records {
            let p = r.p.map(|p| p.to_string()).unwrap_or_default();
            let seed = r.seed.map(|s| format!("{}:{}", s.seed, s.stream_id)).unwrap_or_default();
            let scheme = match &r.loss {
                Some(loss) => format!("{}-{loss}", r.scheme),
                None => r.scheme.clone(),
            };
            let norms = [("frobenius", r.rel_frobenius), ("operator", r.rel_operator), ("nuclear", r.rel_nuclear)];
            let rows = norms
                .iter()
                .filter_map(|(name, v)| v.map(|v| (name.to_string(), v)))
                .chain(r.metric.iter().map(|(k, v)| (k.clone(), *v)));
            for (name, value) in rows {
                w.write_record([
                    r.dataset.as_str(),
                    r.kernel.as_str(),
                    scheme.as_str(),
                    p.as_str(),
                    name.as_str(),
                    &value.to_string(),
                    &r.time_ms.to_string(),
                    seed.as_str(),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        write_atomic(csv_path, self.to_csv()?.as_bytes())?;
        write_atomic(json_path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Run the configured pipeline and write its report. On failure the partial
/// report is still written (status `failed`) before the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(config);
    let result = config.validate().and_then(|_| run_inner(config, &mut report));
    if let Err(e) = &result {
        report.status = Status::Failed;
        report.error = Some(ReportError { class: e.class().into(), message: e.to_string() });
    }
    let written = report.write(&config.out, &config.csv_path());
    result?;
    written?;
    Ok(report)
}

fn run_inner(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    match &config.command {
        Command::Sample { n, d, probes } => run_sample(config, report, *n, *d, *probes),
        Command::Features { d } => run_features(config, report, *d),
        Command::Approx { allow_large } => run_approx(config, report, *allow_large),
        Command::Bench { repeats, include_construction } => {
            run_bench(config, report, BenchOptions { repeats: *repeats, include_construction: *include_construction })
        }
        Command::Krr { exact, mapping } => run_krr(config, report, *exact, *mapping),
        Command::Klr { max_iter, tol, mapping } => {
            let opts = LogisticOptions { max_iter: *max_iter, tol: *tol, ..LogisticOptions::default() };
            run_klr(config, report, opts, *mapping)
        }
    }
}

fn load_data(config: &ExperimentConfig, report: &mut ExperimentReport, cap: usize) -> Result<DataSet> {
    let source = config.data.as_ref().ok_or_else(|| Error::param("this command needs a dataset"))?;
    let raw = source.load(&mut RngStream::from_id(config.stream(DATA_STREAM)))?;
    let ds = raw.subsample(cap, &mut RngStream::from_id(config.stream(SUBSAMPLE_STREAM)));
    if ds.n() < raw.n() {
        report.notes.push(format!("subsampled {} of {} rows (cap {cap})", ds.n(), raw.n()));
    }
    let ds = preprocess(&ds, &config.preprocess)?;
    report.dataset = Some(DatasetSummary {
        name: ds.name.clone(),
        n: ds.n(),
        d: ds.d(),
        task: ds.task(),
        preprocess: config.preprocess.clone(),
    });
    Ok(ds)
}

fn kernel_spec(config: &ExperimentConfig, d: usize) -> Result<KernelSpec> {
    KernelSpec::new(config.kernel, config.shape.load(d)?)
}

/// The p grid actually used: ORF needs multiples of `d`.
fn effective_p(config: &ExperimentConfig, d: usize, report: &mut ExperimentReport) -> Vec<usize> {
    config
        .p
        .iter()
        .map(|&p| {
            if config.scheme == Scheme::Orf && !p.is_multiple_of(d) {
                let q = round_up_to_multiple(p, d);
                report.notes.push(format!("ORF: p = {p} rounded up to {q}, the next multiple of d = {d}"));
                q
            } else {
                p
            }
        })
        .collect()
}

fn run_sample(config: &ExperimentConfig, report: &mut ExperimentReport, n: usize, d: usize, probes: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::param("sample needs n >= 1 and d >= 1"));
    }
    let spec = kernel_spec(config, d)?;
    let sampler = MultivariateSampler::new(fourier_law(config.kernel), spec.shape.clone())?;
    let label = format!("fourier-law-d{d}");

    // probes along random directions at radii spread over the kernel's range
    let mut prng = RngStream::from_id(config.stream(PROBE_STREAM));
    let radii = [0.1, 0.3, 0.7, 1.5, 3.0];
    let probe_set: Vec<DVector<f64>> = (0..probes)
        .map(|i| {
            let dir = synthetic_sphere(1, d, radii[i % radii.len()], &mut prng);
            DVector::from_iterator(d, dir.iter().cloned())
        })
        .collect();
    let t = Instant::now();
    let dev = cf_check(&sampler, &spec, &probe_set, n, config.stream(SAMPLER_STREAM))?;
    let mut rec = Record::new(&label, config.kernel, "sampler");
    rec.seed = Some(config.stream(SAMPLER_STREAM));
    rec.time_ms = ms_since(t);
    for (i, v) in dev.iter().enumerate() {
        rec.metric.insert(format!("cf_deviation_{i}"), *v);
    }
    rec.metric.insert("cf_deviation_max".into(), dev.iter().cloned().fold(0.0, f64::max));
    rec.metric.insert("cf_tolerance".into(), 3.0 / (n as f64).sqrt());

    // norm (or entry) law against its analytic or sampled reference
    let mut rng = RngStream::from_id(config.stream(SAMPLER_STREAM));
    let draws: Vec<DVector<f64>> = (0..n).map(|_| sampler.sample(&mut rng)).collect::<Result<_>>()?;
    let ks = if config.kernel == KernelFamily::L1Laplacian {
        let entries: Vec<f64> = draws.iter().map(|w| w[0]).collect();
        Some(ks_one_sample(&entries, |x| cauchy_cdf(x, 1.0))?)
    } else if !spec.shape.is_identity() {
        report.notes.push("norm-law check skipped: it assumes M = I".into());
        None
    } else {
        let norms: Vec<f64> = draws.iter().map(|w| w.norm()).collect();
        Some(match config.kernel {
            KernelFamily::Laplacian => ks_one_sample(&norms, |x| gbp_cdf(GbpParams::norm_of_cauchy(d, 1.0), x))?,
            KernelFamily::Matern { nu } => ks_one_sample(&norms, |x| gbp_cdf(GbpParams::norm_of_t(d, nu, 1.0), x))?,
            KernelFamily::Gaussian => {
                let chi = Chi::new(d as f64)?;
                ks_one_sample(&norms, |x| chi.cdf(x))?
            }
            _ => {
                let radial = RadialLaw::for_kernel(config.kernel, d)?;
                let mut rr = RngStream::from_id(config.stream(RADIAL_STREAM));
                let reference: Vec<f64> = (0..n).map(|_| radial.sample(&mut rr)).collect::<Result<_>>()?;
                ks_two_sample(&norms, &reference)?
            }
        })
    };
    if let Some(ks) = ks {
        rec.metric.insert("ks_statistic".into(), ks.statistic);
        rec.metric.insert("ks_p_value".into(), ks.p_value);
    }
    report.records.push(rec);
    Ok(())
}

fn run_features(config: &ExperimentConfig, report: &mut ExperimentReport, d: usize) -> Result<()> {
    let ds = match &config.data {
        Some(_) => Some(load_data(config, report, config.subsample_cap)?),
        None => None,
    };
    let d = ds.as_ref().map_or(d, |ds| ds.d());
    if d == 0 {
        return Err(Error::param("features needs d >= 1"));
    }
    let spec = kernel_spec(config, d)?;
    for (i, p) in effective_p(config, d, report).into_iter().enumerate() {
        let seed = config.stream(OPERATOR_STREAM + i as u64);
        let t = Instant::now();
        let op = build(&spec, config.scheme, p, seed)?;
        let mut rec = Record::new(ds.as_ref().map_or("none", |d| d.name.as_str()), config.kernel, config.scheme.label());
        rec.metric.insert("construct_ms".into(), ms_since(t));
        let again = FeatureOperator::from_record(&op.to_record())?;
        rec.metric.insert("reconstruction_bitwise".into(), if again == op { 1.0 } else { 0.0 });
        if let Some(ds) = &ds {
            let t = Instant::now();
            let phi = op.featurize(&ds.x)?;
            rec.metric.insert("featurize_ms".into(), ms_since(t));
            let worst = phi.phi.row_iter().map(|r| (r.norm_squared() - 1.0).abs()).fold(0.0, f64::max);
            rec.metric.insert("max_row_norm_error".into(), worst);
        }
        rec.p = Some(p);
        rec.seed = Some(seed);
        rec.time_ms = rec.metric["construct_ms"] + rec.metric.get("featurize_ms").copied().unwrap_or(0.0);
        report.operators.push(op.to_record());
        report.records.push(rec);
    }
    Ok(())
}

fn run_approx(config: &ExperimentConfig, report: &mut ExperimentReport, allow_large: bool) -> Result<()> {
    let eigen = config.norms.iter().any(|n| *n != NormKind::Frobenius);
    let mut cap = config.subsample_cap;
    if eigen && !allow_large && cap > EIGEN_NORM_CAP {
        cap = EIGEN_NORM_CAP;
        report.notes.push(format!("operator/nuclear norms requested: n capped at {EIGEN_NORM_CAP} (allow_large lifts this)"));
    }
    let ds = load_data(config, report, cap)?;
    let spec = kernel_spec(config, ds.d())?;
    let t = Instant::now();
    let k = kernel_matrix_symmetric(&spec, &ds.x)?;
    let mut exact = Record::new(&ds.name, config.kernel, "exact");
    exact.time_ms = ms_since(t);
    report.records.push(exact);
    for (i, p) in effective_p(config, ds.d(), report).into_iter().enumerate() {
        let seed = config.stream(OPERATOR_STREAM + i as u64);
        let e = approx_error(&spec, &ds.x, &k, config.scheme, p, seed, &config.norms)?;
        let mut rec = Record::new(&ds.name, config.kernel, config.scheme.label());
        rec.p = Some(p);
        rec.seed = Some(seed);
        rec.rel_frobenius = e.rel_frobenius;
        rec.rel_operator = e.rel_operator;
        rec.rel_nuclear = e.rel_nuclear;
        rec.metric.insert("construct_ms".into(), e.timings.construct_ms);
        rec.time_ms = e.timings.featurize_ms + e.timings.gram_ms;
        report.records.push(rec);
    }
    Ok(())
}

fn run_bench(config: &ExperimentConfig, report: &mut ExperimentReport, opts: BenchOptions) -> Result<()> {
    let ds = load_data(config, report, config.subsample_cap)?;
    let spec = kernel_spec(config, ds.d())?;
    let grid = effective_p(config, ds.d(), report);
    let seed = config.stream(OPERATOR_STREAM);
    let table = bench_speedup(&spec, &ds.x, &grid, config.scheme, seed, opts)?;
    let mut exact = Record::new(&ds.name, config.kernel, "exact");
    exact.time_ms = table.exact_ms;
    report.records.push(exact);
    for row in table.rows {
        let mut rec = Record::new(&ds.name, config.kernel, config.scheme.label());
        rec.p = Some(row.p);
        rec.seed = Some(seed);
        rec.rel_frobenius = Some(row.rel_frobenius);
        rec.metric.insert("speedup".into(), row.speedup);
        rec.metric.insert("construct_ms".into(), row.construct_ms);
        rec.time_ms = row.feature_ms;
        report.records.push(rec);
    }
    report.notes.push(format!(
        "timings are medians of {} repeats on {} thread(s); construction {}",
        table.repeats,
        table.threads,
        if table.include_construction { "included" } else { "excluded" }
    ));
    Ok(())
}

fn classification_metrics(probs: &DMatrix<f64>, labels: &[usize]) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    m.insert("accuracy".into(), accuracy(probs, labels)?);
    m.insert("ece".into(), ece(probs, labels, ECE_BINS)?);
    Ok(m)
}

/// Test-set metrics of squared-loss outputs: accuracy and ECE for
/// classification, R^2 for regression.
fn score(outputs: &DMatrix<f64>, test: &DataSet, mapping: ProbabilityMapping) -> Result<BTreeMap<String, f64>> {
    match &test.target {
        Target::Labels { labels, .. } => classification_metrics(&squared_loss_probabilities(outputs, mapping), labels),
        Target::Values(y) => {
            let mut m = BTreeMap::new();
            m.insert("r2".into(), r_squared(&outputs.column(0).into_owned(), y)?);
            Ok(m)
        }
    }
}

fn targets(ds: &DataSet) -> Result<DMatrix<f64>> {
    match &ds.target {
        Target::Labels { labels, values } => one_hot(labels, values.len()),
        Target::Values(y) => Ok(DMatrix::from_column_slice(y.len(), 1, y.as_slice())),
    }
}

fn split(config: &ExperimentConfig, ds: &DataSet) -> Result<(DataSet, DataSet)> {
    if config.test_fraction == 0.0 {
        return Err(Error::param("krr/klr need a test fraction > 0"));
    }
    let (train, test) = ds.split(config.test_fraction, &mut RngStream::from_id(config.stream(SPLIT_STREAM)))?;
    if train.n() == 0 || test.n() == 0 {
        return Err(Error::Data("train/test split left an empty side".into()));
    }
    Ok((train, test))
}

fn run_krr(config: &ExperimentConfig, report: &mut ExperimentReport, exact: bool, mapping: ProbabilityMapping) -> Result<()> {
    let ds = load_data(config, report, config.subsample_cap)?;
    let (train, test) = split(config, &ds)?;
    let spec = kernel_spec(config, ds.d())?;
    let y = targets(&train)?;
    let headline = if ds.task() == Task::Classification { "accuracy" } else { "r2" };
    let mut exact_scores = BTreeMap::new();
    if exact {
        for &lambda in &config.lambda {
            let t = Instant::now();
            let model = fit_krr_exact(&spec, &train.x, &y, lambda)?;
            let out = model.predict(&test.x)?;
            let mut rec = Record::new(&ds.name, config.kernel, "exact");
            rec.lambda = Some(lambda);
            rec.loss = Some("squared".into());
            rec.metric = score(&out, &test, mapping)?;
            rec.time_ms = ms_since(t);
            exact_scores.insert(lambda.to_bits(), rec.metric[headline]);
            report.records.push(rec);
        }
    }
    for (i, p) in effective_p(config, ds.d(), report).into_iter().enumerate() {
        let seed = config.stream(OPERATOR_STREAM + i as u64);
        let t = Instant::now();
        let op = build(&spec, config.scheme, p, seed)?;
        let phi = op.featurize(&train.x)?;
        let phi_test = op.featurize(&test.x)?;
        let feature_ms = ms_since(t);
        for &lambda in &config.lambda {
            let t = Instant::now();
            let model = fit_ridge_features(&phi, &y, lambda)?;
            let out = model.predict(&phi_test)?;
            let mut rec = Record::new(&ds.name, config.kernel, config.scheme.label());
            rec.p = Some(p);
            rec.seed = Some(seed);
            rec.lambda = Some(lambda);
            rec.loss = Some("squared".into());
            rec.metric = score(&out, &test, mapping)?;
            if let Some(e) = exact_scores.get(&lambda.to_bits()) {
                rec.metric.insert(format!("{headline}_gap_vs_exact"), e - rec.metric[headline]);
            }
            rec.time_ms = feature_ms + ms_since(t);
            report.records.push(rec);
        }
    }
    Ok(())
}

fn run_klr(
    config: &ExperimentConfig,
    report: &mut ExperimentReport,
    opts: LogisticOptions,
    mapping: ProbabilityMapping,
) -> Result<()> {
    let ds = load_data(config, report, config.subsample_cap)?;
    ds.labels()?;
    let (train, test) = split(config, &ds)?;
    let (train_labels, classes) = train.labels()?;
    let spec = kernel_spec(config, ds.d())?;
    let y = one_hot(train_labels, classes)?;
    for (i, p) in effective_p(config, ds.d(), report).into_iter().enumerate() {
        let seed = config.stream(OPERATOR_STREAM + i as u64);
        let op = build(&spec, config.scheme, p, seed)?;
        let phi = op.featurize(&train.x)?;
        let phi_test = op.featurize(&test.x)?;
        for &lambda in &config.lambda {
            let t = Instant::now();
            let ls = fit_ridge_features(&phi, &y, lambda)?;
            let mut rec = Record::new(&ds.name, config.kernel, config.scheme.label());
            rec.p = Some(p);
            rec.seed = Some(seed);
            rec.lambda = Some(lambda);
            rec.loss = Some("squared".into());
            rec.metric = score(&ls.predict(&phi_test)?, &test, mapping)?;
            rec.time_ms = ms_since(t);
            report.records.push(rec);

            let t = Instant::now();
            let (model, status) = fit_logistic_features(&phi, train_labels, classes, lambda, opts)?;
            let probs = predict_proba(&model, &phi_test, mapping)?;
            let mut rec = Record::new(&ds.name, config.kernel, config.scheme.label());
            rec.p = Some(p);
            rec.seed = Some(seed);
            rec.lambda = Some(lambda);
            rec.loss = Some("logistic".into());
            rec.metric = classification_metrics(&probs, test.labels()?.0)?;
            rec.metric.insert("iterations".into(), status.iterations as f64);
            rec.metric.insert("grad_norm".into(), status.grad_norm);
            rec.metric.insert("converged".into(), if status.converged { 1.0 } else { 0.0 });
            rec.time_ms = ms_since(t);
            if let Some(w) = status.warning() {
                report.notes.push(format!("p = {p}, lambda = {lambda}: {w}"));
            }
            report.records.push(rec);
        }
    }
    Ok(())
}
