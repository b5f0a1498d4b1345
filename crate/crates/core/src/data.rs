//! Datasets: CSV ingestion, preprocessing recipes, seeded subsampling and
//! synthetic generators.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::learners::Task;
use crate::multivariate::ShapeMatrix;
use crate::rng::RngStream;

pub const DEFAULT_SUBSAMPLE_CAP: usize = 10_000;
const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Class indices in `[0, classes)`; `values[c]` is the original label of class `c`.
    Labels { labels: Vec<usize>, values: Vec<f64> },
    Values(DVector<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Labels { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Labels { .. } => Task::Classification,
            Target::Values(_) => Task::Regression,
        }
    }

    fn select(&self, idx: &[usize]) -> Target {
        match self {
            Target::Labels { labels, values } => {
                Target::Labels { labels: idx.iter().map(|&i| labels[i]).collect(), values: values.clone() }
            }
            Target::Values(v) => Target::Values(DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))),
        }
    }
}

/// Which preprocessing steps have been applied, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub steps: Vec<Step>,
}

impl PreprocessRecord {
    pub fn centered(&self) -> bool {
        self.steps.contains(&Step::Center)
    }

    pub fn unit_norm(&self) -> bool {
        self.steps.last() == Some(&Step::UnitNorm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub name: String,
    pub x: DMatrix<f64>,
    pub target: Target,
    pub feature_names: Vec<String>,
    pub record: PreprocessRecord,
}

impl DataSet {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, target: Target) -> Result<Self> {
        if target.len() != x.nrows() {
            return Err(Error::Dimension { expected: x.nrows(), got: target.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % x.nrows(), i / x.nrows());
            return Err(Error::Data(format!("non-finite value at row {r}, column {c}")));
        }
        if let Target::Values(v) = &target {
            if let Some(i) = v.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite target at row {i}")));
            }
        }
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self { name: name.into(), x, target, feature_names, record: PreprocessRecord::default() })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn task(&self) -> Task {
        self.target.task()
    }

    pub fn select(&self, idx: &[usize]) -> DataSet {
        let x = DMatrix::from_fn(idx.len(), self.d(), |i, j| self.x[(idx[i], j)]);
        DataSet {
            name: self.name.clone(),
            x,
            target: self.target.select(idx),
            feature_names: self.feature_names.clone(),
            record: self.record.clone(),
        }
    }

    fn shuffled_indices(&self, rng: &mut RngStream) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.shuffle(rng);
        idx
    }

    /// Deterministic seeded shuffle, then the first `cap` rows. Datasets at or
    /// below the cap are returned unchanged.
    pub fn subsample(&self, cap: usize, rng: &mut RngStream) -> DataSet {
        if self.n() <= cap {
            return self.clone();
        }
        let idx = self.shuffled_indices(rng);
        self.select(&idx[..cap])
    }

    /// Seeded shuffle split into `(train, test)` with `test_fraction` of rows held out.
    pub fn split(&self, test_fraction: f64, rng: &mut RngStream) -> Result<(DataSet, DataSet)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::param(format!("test fraction must lie in [0, 1), got {test_fraction}")));
        }
        let idx = self.shuffled_indices(rng);
        let n_test = (self.n() as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.select(train), self.select(test)))
    }

    pub fn labels(&self) -> Result<(&[usize], usize)> {
        match &self.target {
            Target::Labels { labels, values } => Ok((labels, values.len())),
            Target::Values(_) => Err(Error::param("dataset has a regression target, not class labels")),
        }
    }

    pub fn values(&self) -> Result<&DVector<f64>> {
        match &self.target {
            Target::Values(v) => Ok(v),
            Target::Labels { .. } => Err(Error::param("dataset has class labels, not a regression target")),
        }
    }
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_col: LabelColumn,
    pub task: Task,
}

fn parse_cell(cell: &str, line: u64, col: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        Error::Schema(format!("line {line}, column '{col}': '{cell}' is not numeric"))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}, column '{col}': non-finite value '{cell}'")));
    }
    Ok(v)
}

/// Read a headed CSV with numeric columns. Line numbers in errors are 1-based
/// and count the header.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<DataSet> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label = match &opts.label_col {
        LabelColumn::Index(i) if *i < header.len() => *i,
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("no column named '{name}'")))?,
        LabelColumn::Index(i) => {
            return Err(Error::Schema(format!("label column {i} out of range for {} columns", header.len())))
        }
    };
    let width = header.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut line = 1u64;
    for record in reader.records() {
        line += 1;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if record.len() != width {
            return Err(Error::Data(format!("line {line}: expected {width} fields, found {}", record.len())));
        }
        for (j, cell) in record.iter().enumerate() {
            let v = parse_cell(cell, line, &header[j])?;
            if j == label {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, width - 1, &xs);
    let target = match opts.task {
        Task::Regression => Target::Values(DVector::from_vec(ys)),
        Task::Classification => labels_from_values(&ys)?,
    };
    let mut ds = DataSet::new(dataset_name(path), x, target)?;
    ds.feature_names = header.into_iter().enumerate().filter(|(j, _)| *j != label).map(|(_, h)| h).collect();
    Ok(ds)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

/// Map integer-valued labels to class indices in sorted order of value.
pub fn labels_from_values(ys: &[f64]) -> Result<Target> {
    if let Some((i, v)) = ys.iter().enumerate().find(|(_, v)| v.fract() != 0.0) {
        return Err(Error::Schema(format!("label {v} at row {i} is not an integer")));
    }
    let mut values: Vec<f64> = ys.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let labels = ys.iter().map(|v| values.binary_search_by(|u| u.total_cmp(v)).expect("present")).collect();
    Ok(Target::Labels { labels, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    /// Subtract the column means.
    Center,
    /// Subtract column means and divide by column standard deviations.
    StandardScale,
    /// Scale every row to unit Euclidean norm.
    UnitNorm,
    /// Replace a regression target by its logarithm.
    LogTarget,
}

/// A `+`-joined list of steps, applied left to right; `none` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe(pub Vec<Step>);

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Recipe::default());
        }
        s.split('+')
            .map(|part| match part.trim() {
                "center" => Ok(Step::Center),
                "standard-scale" => Ok(Step::StandardScale),
                "unit-norm" => Ok(Step::UnitNorm),
                "log-target" => Ok(Step::LogTarget),
                other => Err(Error::param(format!("unknown preprocessing step '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Recipe)
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "none");
        }
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|s| match s {
                Step::Center => "center",
                Step::StandardScale => "standard-scale",
                Step::UnitNorm => "unit-norm",
                Step::LogTarget => "log-target",
            })
            .collect();
        write!(f, "{}", names.join("+"))
    }
}

fn center_columns(x: &mut DMatrix<f64>) {
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
}

pub fn preprocess(ds: &DataSet, recipe: &Recipe) -> Result<DataSet> {
    let mut out = ds.clone();
    for step in &recipe.0 {
        match step {
            Step::Center => center_columns(&mut out.x),
            Step::StandardScale => {
                center_columns(&mut out.x);
                for mut col in out.x.column_iter_mut() {
                    let sd = (col.norm_squared() / col.len().max(1) as f64).sqrt();
                    if sd > 0.0 {
                        col /= sd;
                    }
                }
            }
            Step::UnitNorm => {
                let zero: Vec<usize> = (0..out.n()).filter(|&i| out.x.row(i).norm() == 0.0).collect();
                if !zero.is_empty() {
                    return Err(Error::Data(format!("rows with zero norm cannot be normalized: {zero:?}")));
                }
                for mut row in out.x.row_iter_mut() {
                    let nr = row.norm();
                    // already-normalized rows are left untouched so the step is idempotent
                    if (nr - 1.0).abs() > 1e-15 {
                        row /= nr;
                    }
                }
            }
            Step::LogTarget => {
                let Target::Values(y) = &mut out.target else {
                    return Err(Error::param("log-target needs a regression target"));
                };
                let bad: Vec<usize> = (0..y.len()).filter(|&i| !(y[i] > 0.0)).collect();
                if !bad.is_empty() {
                    return Err(Error::Domain(format!("log of non-positive targets at rows {bad:?}")));
                }
                y.apply(|v| *v = v.ln());
            }
        }
        out.record.steps.push(*step);
    }
    if out.record.unit_norm() {
        debug_assert!(out.x.row_iter().all(|r| (r.norm() - 1.0).abs() <= UNIT_NORM_TOL));
    }
    Ok(out)
}

/// Where the kernel shape matrix `M` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ShapeSource {
    Identity,
    Isotropic { gamma: f64 },
    /// Whitespace- or comma-separated diagonal entries.
    DiagonalFile { path: String },
    /// `d` rows of `d` whitespace- or comma-separated entries.
    MatrixFile { path: String },
}

fn read_numbers(path: &str) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| parse_cell(t, i as u64 + 1, "shape"))
                .collect()
        })
        .collect()
}

impl ShapeSource {
    pub fn load(&self, d: usize) -> Result<ShapeMatrix> {
        let m = match self {
            ShapeSource::Identity => ShapeMatrix::identity(d),
            ShapeSource::Isotropic { gamma } => ShapeMatrix::isotropic(d, *gamma)?,
            ShapeSource::DiagonalFile { path } => {
                let diag: Vec<f64> = read_numbers(path)?.into_iter().flatten().collect();
                ShapeMatrix::diagonal(&diag)?
            }
            ShapeSource::MatrixFile { path } => ShapeMatrix::from_rows(&read_numbers(path)?)?,
        };
        if m.dim() != d {
            return Err(Error::Dimension { expected: d, got: m.dim() });
        }
        Ok(m)
    }
}

fn gaussian(n: usize, d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| standard_normal(rng))
}

/// Points spread uniformly over the sphere of the given radius.
pub fn synthetic_sphere(n: usize, d: usize, radius: f64, rng: &mut RngStream) -> DMatrix<f64> {
    let mut x = gaussian(n, d, rng);
    for mut row in x.row_iter_mut() {
        let nr = row.norm();
        row *= radius / nr;
    }
    x
}

/// Random smooth functions `f_c(x) = sum_k a_ck cos(w_k . x + b_k)` with
/// `w_k ~ N(0, I / lengthscale^2)`.
#[derive(Debug, Clone)]
pub struct SmoothField {
    w: DMatrix<f64>,
    b: DVector<f64>,
    a: DMatrix<f64>,
}

impl SmoothField {
    pub fn new(d: usize, outputs: usize, terms: usize, lengthscale: f64, rng: &mut RngStream) -> Self {
        let w = gaussian(terms, d, rng) / lengthscale;
        let b = DVector::from_fn(terms, |_, _| std::f64::consts::TAU * rng.open01());
        let a = gaussian(terms, outputs, rng) * (2.0 / terms as f64).sqrt();
        Self { w, b, a }
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.w.transpose();
        for mut row in z.row_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v + self.b[k]).cos();
            }
        }
        z * &self.a
    }
}

/// Classification data: points on the unit sphere, labels drawn from
/// `softmax(f(x) / temperature)` for a smooth field `f` of the given
/// lengthscale, or its argmax when `temperature == 0`.
pub fn synthetic_classification(
    n: usize,
    d: usize,
    classes: usize,
    lengthscale: f64,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<DataSet> {
    if classes < 2 || d == 0 || n == 0 {
        return Err(Error::param("synthetic classification needs n, d >= 1 and at least 2 classes"));
    }
    let x = synthetic_sphere(n, d, 1.0, rng);
    let field = SmoothField::new(d, classes, 64, lengthscale, rng);
    let f = field.eval(&x);
    let labels = (0..n)
        .map(|i| {
            let row = f.row(i);
            if temperature == 0.0 {
                return (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            }
            // Gumbel-max sampling from the softmax
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..classes {
                let g = -(-rng.open01().ln()).ln();
                let s = row[c] / temperature + g;
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect();
    let values = (0..classes).map(|c| c as f64).collect();
    DataSet::new("synthetic-classification", x, Target::Labels { labels, values })
}

/// Regression data on the unit sphere: a smooth field plus Gaussian noise.
pub fn synthetic_regression(n: usize, d: usize, noise: f64, rng: &mut RngStream) -> Result<DataSet> {
    if d == 0 || n == 0 {
        return Err(Error::param("synthetic regression needs n, d >= 1"));
    }
    let x = synthetic_sphere(n, d, 1.0, rng);
    let field = SmoothField::new(d, 1, 64, 0.5, rng);
    let mut y: DVector<f64> = field.eval(&x).column(0).into_owned();
    for v in y.iter_mut() {
        *v += noise * standard_normal(rng);
    }
    DataSet::new("synthetic-regression", x, Target::Values(y))
}
