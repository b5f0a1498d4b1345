//! `rfk`: run random-feature experiments from the command line.
//!
//! Every subcommand builds an `ExperimentConfig`, runs it, and writes a JSON
//! report plus a long-format CSV next to it. Exit status is 0 on success, 2 on
//! usage errors and a per-class code (see `Error::exit_code`) otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfkernel::data::{LabelColumn, Recipe, ShapeSource, DEFAULT_SUBSAMPLE_CAP};
use rfkernel::experiment::{run_experiment, Command, DataSource, ExperimentConfig, ExperimentReport, Status, REPORT_SCHEMA};
use rfkernel::features::Scheme;
use rfkernel::harness::NormKind;
use rfkernel::kernels::KernelFamily;
use rfkernel::learners::{ProbabilityMapping, Task};
use rfkernel::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "rfk", version, about = "Random Fourier and orthogonal random features for shift-invariant kernels")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Draw from a kernel's Fourier law and check its characteristic function and norm law.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Number of draws.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Dimension.
        #[arg(long, default_value_t = 4)]
        d: usize,
        /// Number of characteristic-function probes.
        #[arg(long, default_value_t = 5)]
        probes: usize,
    },
    /// Build feature operators and record their seed records.
    Features {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Input dimension when no dataset is given.
        #[arg(long, default_value_t = 0)]
        d: usize,
    },
    /// Relative kernel-approximation error over a p grid.
    Approx {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Allow operator/nuclear norms above n = 1000.
        #[arg(long)]
        allow_large: bool,
    },
    /// Time exact kernel matrices against featurized Gram matrices.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Count operator construction in the featurized time.
        #[arg(long)]
        include_construction: bool,
    },
    /// Kernel ridge regression: exact baseline and random-feature ridge.
    Krr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Skip the exact kernel baseline.
        #[arg(long)]
        no_exact: bool,
        #[arg(long, value_enum, default_value_t = Mapping::ClipNormalize)]
        mapping: Mapping,
    },
    /// Classification: random-feature logistic regression against squared loss.
    Klr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Probability mapping for the squared-loss model.
        #[arg(long, value_enum, default_value_t = Mapping::ClipNormalize)]
        mapping: Mapping,
    },
    /// Rerun an experiment from a JSON config or from a report that embeds one.
    Run {
        config: PathBuf,
        /// Override the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// gaussian, l1-laplacian, laplacian, exp-power or matern.
    #[arg(long, default_value = "laplacian")]
    kernel: String,
    /// Exponent of the exp-power kernel, in (0, 2].
    #[arg(long)]
    alpha: Option<f64>,
    /// Matern smoothness.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Rff)]
    scheme: SchemeArg,
    /// Feature counts, comma separated. ORF rounds each up to a multiple of d.
    #[arg(long, value_delimiter = ',', default_value = "1024")]
    p: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge strengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    lambda: Vec<f64>,
    /// Error norms: frobenius, operator, nuclear (comma separated).
    #[arg(long, default_value = "frobenius")]
    norms: String,
    /// Shape matrix M = gamma I.
    #[arg(long, conflicts_with_all = ["shape_diag", "shape_matrix"])]
    shape_gamma: Option<f64>,
    /// File holding the diagonal of M.
    #[arg(long, conflicts_with = "shape_matrix")]
    shape_diag: Option<String>,
    /// File holding the full symmetric positive definite M, one row per line.
    #[arg(long)]
    shape_matrix: Option<String>,
    /// JSON report path; the CSV table is written next to it.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row and numeric columns.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<String>,
    /// Target column, by name or 0-based index.
    #[arg(long, default_value = "label")]
    label_col: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
    task: TaskArg,
    /// Generate data instead of reading a file.
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    #[arg(long, default_value_t = 1_000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Preprocessing steps joined by '+': center, standard-scale, unit-norm, log-target.
    #[arg(long, default_value = "none")]
    preprocess: String,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE_CAP)]
    subsample_cap: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Rff,
    Orf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Synthetic {
    Sphere,
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mapping {
    ClipNormalize,
    Softmax,
}

impl From<Mapping> for ProbabilityMapping {
    fn from(m: Mapping) -> Self {
        match m {
            Mapping::ClipNormalize => ProbabilityMapping::ClipNormalize,
            Mapping::Softmax => ProbabilityMapping::Softmax,
        }
    }
}

fn kernel_family(c: &Common) -> Result<KernelFamily> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Parameter(format!("--kernel {} needs --{name}", c.kernel)));
    let family = match c.kernel.as_str() {
        "gaussian" => KernelFamily::Gaussian,
        "l1-laplacian" => KernelFamily::L1Laplacian,
        "laplacian" => KernelFamily::Laplacian,
        "exp-power" => KernelFamily::ExpPower { alpha: need(c.alpha, "alpha")? },
        "matern" => KernelFamily::Matern { nu: need(c.nu, "nu")? },
        other => return Err(Error::Parameter(format!("unknown kernel '{other}'"))),
    };
    if c.alpha.is_some() && !matches!(family, KernelFamily::ExpPower { .. }) {
        return Err(Error::Parameter("--alpha only applies to --kernel exp-power".into()));
    }
    if c.nu.is_some() && !matches!(family, KernelFamily::Matern { .. }) {
        return Err(Error::Parameter("--nu only applies to --kernel matern".into()));
    }
    family.validate()?;
    Ok(family)
}

fn base_config(command: Command, c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(command, kernel_family(c)?, c.out.clone());
    cfg.scheme = match c.scheme {
        SchemeArg::Rff => Scheme::Rff,
        SchemeArg::Orf => Scheme::Orf,
    };
    cfg.p = c.p.clone();
    cfg.seed = c.seed;
    cfg.lambda = c.lambda.clone();
    cfg.norms = NormKind::parse_list(&c.norms)?;
    cfg.shape = match (&c.shape_gamma, &c.shape_diag, &c.shape_matrix) {
        (Some(gamma), _, _) => ShapeSource::Isotropic { gamma: *gamma },
        (_, Some(path), _) => ShapeSource::DiagonalFile { path: path.clone() },
        (_, _, Some(path)) => ShapeSource::MatrixFile { path: path.clone() },
        _ => ShapeSource::Identity,
    };
    Ok(cfg)
}

fn with_data(mut cfg: ExperimentConfig, d: &DataArgs) -> Result<ExperimentConfig> {
    cfg.data = match (&d.data, d.synthetic) {
        (Some(path), _) => Some(DataSource::Csv {
            path: path.clone(),
            label_col: d.label_col.parse::<LabelColumn>()?,
            task: match d.task {
                TaskArg::Classification => Task::Classification,
                TaskArg::Regression => Task::Regression,
            },
        }),
        (None, Some(Synthetic::Sphere)) => Some(DataSource::Sphere { n: d.n, d: d.dim, radius: d.radius }),
        (None, Some(Synthetic::Classification)) => Some(DataSource::Classification {
            n: d.n,
            d: d.dim,
            classes: d.classes,
            lengthscale: d.lengthscale,
            temperature: d.temperature,
        }),
        (None, Some(Synthetic::Regression)) => Some(DataSource::Regression { n: d.n, d: d.dim, noise: d.noise }),
        (None, None) => None,
    };
    cfg.preprocess = d.preprocess.parse::<Recipe>()?;
    cfg.subsample_cap = d.subsample_cap;
    cfg.test_fraction = d.test_fraction;
    Ok(cfg)
}

fn config_from(cli: Cli) -> Result<ExperimentConfig> {
    match cli.command {
        Sub::Sample { common, n, d, probes } => base_config(Command::Sample { n, d, probes }, &common),
        Sub::Features { common, data, d } => with_data(base_config(Command::Features { d }, &common)?, &data),
        Sub::Approx { common, data, allow_large } => {
            with_data(base_config(Command::Approx { allow_large }, &common)?, &data)
        }
        Sub::Bench { common, data, repeats, include_construction } => {
            with_data(base_config(Command::Bench { repeats, include_construction }, &common)?, &data)
        }
        Sub::Krr { common, data, no_exact, mapping } => {
            with_data(base_config(Command::Krr { exact: !no_exact, mapping: mapping.into() }, &common)?, &data)
        }
        Sub::Klr { common, data, max_iter, tol, mapping } => {
            with_data(base_config(Command::Klr { max_iter, tol, mapping: mapping.into() }, &common)?, &data)
        }
        Sub::Run { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            // accept either a bare config or a whole report
            let mut value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("schema").and_then(|s| s.as_str()) == Some(REPORT_SCHEMA) {
                value = value["config"].take();
            }
            let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
            if let Some(out) = out {
                cfg.out = out;
            }
            Ok(cfg)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
}

fn summarize(report: &ExperimentReport) {
    let cfg = &report.config;
    println!("{} {} -> {}", cfg.command.name(), cfg.kernel.label(), cfg.out.display());
    for note in &report.notes {
        println!("note: {note}");
    }
    for r in &report.records {
        let p = r.p.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let loss = r.loss.as_deref().unwrap_or("");
        let metrics: Vec<String> = r.metric.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!(
            "{:<8} {:<9} p={:<6} fro={:<11} op={:<11} nuc={:<11} {:>9.1} ms  {}",
            r.scheme,
            loss,
            p,
            fmt_opt(r.rel_frobenius),
            fmt_opt(r.rel_operator),
            fmt_opt(r.rel_nuclear),
            r.time_ms,
            metrics.join(" ")
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config_from(cli).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(report) => {
            debug_assert_eq!(report.status, Status::Ok);
            summarize(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
