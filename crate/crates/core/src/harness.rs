//! Approximation-error measurement, characteristic-function checks and
//! exact-vs-featurized timing.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build, gram_approx, Scheme};
use crate::kernels::{kernel_eval, kernel_matrix_symmetric, KernelFamily, KernelSpec};
use crate::multivariate::MultivariateSampler;
use crate::rng::{RngStream, StreamId};

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Frobenius,
    Operator,
    Nuclear,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::Frobenius, NormKind::Operator, NormKind::Nuclear];

    pub fn label(&self) -> &'static str {
        match self {
            NormKind::Frobenius => "frobenius",
            NormKind::Operator => "operator",
            NormKind::Nuclear => "nuclear",
        }
    }

    /// Parse a comma-separated list such as `frobenius,operator`.
    pub fn parse_list(s: &str) -> Result<Vec<NormKind>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: NormKind = part.parse()?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(Error::param("empty norm list"));
        }
        Ok(out)
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frobenius" | "fro" => Ok(NormKind::Frobenius),
            "operator" | "op" | "spectral" => Ok(NormKind::Operator),
            "nuclear" | "nuc" | "trace" => Ok(NormKind::Nuclear),
            other => Err(Error::param(format!("unknown norm '{other}'"))),
        }
    }
}

fn check_symmetric(name: &str, a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
    }
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::Domain(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Norm of a symmetric matrix. Operator and nuclear norms come from its eigenvalues.
pub fn symmetric_norm(a: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::Frobenius => a.norm(),
        NormKind::Operator => a.clone().symmetric_eigenvalues().amax(),
        NormKind::Nuclear => a.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).sum(),
    }
}

/// Relative errors `||G - K|| / ||K||` for each requested norm, sharing one
/// eigendecomposition per matrix.
pub fn rel_errors(k: &DMatrix<f64>, g: &DMatrix<f64>, norms: &[NormKind]) -> Result<Vec<f64>> {
    if k.shape() != g.shape() {
        return Err(Error::Dimension { expected: k.nrows(), got: g.nrows() });
    }
    check_symmetric("K", k)?;
    check_symmetric("G", g)?;
    let diff = g - k;
    let needs_eig = norms.iter().any(|n| *n != NormKind::Frobenius);
    let (eig_k, eig_d) = if needs_eig {
        (Some(k.clone().symmetric_eigenvalues()), Some(diff.clone().symmetric_eigenvalues()))
    } else {
        (None, None)
    };
    let value = |kind: NormKind, m: &DMatrix<f64>, eig: &Option<DVector<f64>>| -> f64 {
        match kind {
            NormKind::Frobenius => m.norm(),
            NormKind::Operator => eig.as_ref().map_or(0.0, |e| e.amax()),
            NormKind::Nuclear => eig.as_ref().map_or(0.0, |e| e.iter().map(|v| v.abs()).sum()),
        }
    };
    norms
        .iter()
        .map(|&kind| {
            let den = value(kind, k, &eig_k);
            if den == 0.0 {
                return Err(Error::Numerical(format!("{} norm of K is zero", kind.label())));
            }
            Ok(value(kind, &diff, &eig_d) / den)
        })
        .collect()
}

pub fn rel_error(k: &DMatrix<f64>, g: &DMatrix<f64>, norm: NormKind) -> Result<f64> {
    Ok(rel_errors(k, g, &[norm])?[0])
}

/// For each probe `D`, `|mean_i cos(w_i . D) - kappa(D)|` over `n` draws of the sampler.
pub fn cf_check(
    sampler: &MultivariateSampler,
    target: &KernelSpec,
    probes: &[DVector<f64>],
    n: usize,
    seed: StreamId,
) -> Result<Vec<f64>> {
    let d = sampler.dim();
    if target.dim() != d {
        return Err(Error::Dimension { expected: d, got: target.dim() });
    }
    for p in probes {
        if p.len() != d {
            return Err(Error::Dimension { expected: d, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("probe must be finite".into()));
        }
    }
    let mut rng = RngStream::from_id(seed);
    let mut w = vec![0.0; d];
    let mut sums = vec![0.0; probes.len()];
    for _ in 0..n {
        sampler.sample_into(&mut rng, &mut w)?;
        for (s, p) in sums.iter_mut().zip(probes) {
            let t: f64 = w.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
            *s += t.cos();
        }
    }
    let origin = vec![0.0; d];
    probes
        .iter()
        .zip(sums)
        .map(|(p, s)| {
            let kappa = kernel_eval(target, p.as_slice(), &origin)?;
            Ok((s / n as f64 - kappa).abs())
        })
        .collect()
}

/// Wall-times of one featurized approximation, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub exact_ms: f64,
    pub construct_ms: f64,
    pub featurize_ms: f64,
    pub gram_ms: f64,
}

/// Relative errors of one `(kernel, scheme, p, seed)` approximation.
/// Norms that were not requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub n: usize,
    pub p: usize,
    pub kernel: KernelFamily,
    pub scheme: Scheme,
    pub seed: StreamId,
    pub rel_frobenius: Option<f64>,
    pub rel_operator: Option<f64>,
    pub rel_nuclear: Option<f64>,
    pub timings: Timings,
}

impl ErrorReport {
    pub fn get(&self, kind: NormKind) -> Option<f64> {
        match kind {
            NormKind::Frobenius => self.rel_frobenius,
            NormKind::Operator => self.rel_operator,
            NormKind::Nuclear => self.rel_nuclear,
        }
    }

    /// Same report with wall-times zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        Self { timings: Timings::default(), ..self.clone() }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Approximate `k_exact` (the exact kernel matrix of `x`) with one sampled operator.
pub fn approx_error(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    k_exact: &DMatrix<f64>,
    scheme: Scheme,
    p: usize,
    seed: StreamId,
    norms: &[NormKind],
) -> Result<ErrorReport> {
    let t = Instant::now();
    let op = build(spec, scheme, p, seed)?;
    let construct_ms = ms_since(t);
    let t = Instant::now();
    let phi = op.featurize(x)?;
    let featurize_ms = ms_since(t);
    let t = Instant::now();
    let g = gram_approx(&phi);
    let gram_ms = ms_since(t);
    let errs = rel_errors(k_exact, &g, norms)?;
    let pick = |kind| norms.iter().position(|n| *n == kind).map(|i| errs[i]);
    Ok(ErrorReport {
        n: x.nrows(),
        p,
        kernel: spec.family,
        scheme,
        seed,
        rel_frobenius: pick(NormKind::Frobenius),
        rel_operator: pick(NormKind::Operator),
        rel_nuclear: pick(NormKind::Nuclear),
        timings: Timings { exact_ms: 0.0, construct_ms, featurize_ms, gram_ms },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub repeats: usize,
    /// Count operator construction in the featurized time.
    pub include_construction: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repeats: 3, include_construction: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub p: usize,
    /// Median construction time, reported separately.
    pub construct_ms: f64,
    /// Median featurize + Gram time (plus construction if requested).
    pub feature_ms: f64,
    pub speedup: f64,
    pub rel_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub n: usize,
    pub d: usize,
    pub kernel: KernelFamily,
    pub scheme: Scheme,
    pub seed: StreamId,
    pub repeats: usize,
    pub threads: usize,
    pub include_construction: bool,
    pub exact_ms: f64,
    pub rows: Vec<SpeedupRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Time exact `K(X, X)` against featurize + Gram for each `p`.
pub fn bench_speedup(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    p_grid: &[usize],
    scheme: Scheme,
    seed: StreamId,
    opts: BenchOptions,
) -> Result<SpeedupTable> {
    if x.nrows() == 0 || p_grid.is_empty() || p_grid.contains(&0) {
        return Err(Error::param("bench needs n > 0 and a non-empty grid of positive p"));
    }
    let repeats = opts.repeats.max(1);
    let mut exact_times = Vec::with_capacity(repeats);
    let mut k: Option<DMatrix<f64>> = None;
    for _ in 0..repeats {
        // drop the previous matrix first so at most one exact copy is alive
        drop(k.take());
        let t = Instant::now();
        k = Some(kernel_matrix_symmetric(spec, x)?);
        exact_times.push(ms_since(t));
    }
    let k = k.expect("repeats >= 1");
    let exact_ms = median(exact_times);

    let mut rows = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let mut construct = Vec::with_capacity(repeats);
        let mut feature = Vec::with_capacity(repeats);
        let mut rel = None;
        for _ in 0..repeats {
            let t = Instant::now();
            let op = build(spec, scheme, p, seed)?;
            let c = ms_since(t);
            let t = Instant::now();
            let g = gram_approx(&op.featurize(x)?);
            let f = ms_since(t);
            construct.push(c);
            feature.push(if opts.include_construction { f + c } else { f });
            if rel.is_none() {
                rel = Some(rel_error(&k, &g, NormKind::Frobenius)?);
            }
        }
        let feature_ms = median(feature);
        rows.push(SpeedupRow {
            p,
            construct_ms: median(construct),
            feature_ms,
            speedup: exact_ms / feature_ms,
            rel_frobenius: rel.expect("repeats >= 1"),
        });
    }
    Ok(SpeedupTable {
        n: x.nrows(),
        d: x.ncols(),
        kernel: spec.family,
        scheme,
        seed,
        repeats,
        threads: rayon::current_num_threads(),
        include_construction: opts.include_construction,
        exact_ms,
        rows,
    })
}
