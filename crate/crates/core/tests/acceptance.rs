//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails or overruns its time limit.
//!
//! `RFK_ACCEPT=3,5` runs a subset. `RFK_LETTER_CSV` points criterion 6 at a
//! local copy of the letter dataset (numeric label column, index given by
//! `RFK_LETTER_LABEL`, default 0); without it the synthetic parity check runs.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;

use rfkernel::data::{
    load_csv, preprocess, synthetic_classification, synthetic_sphere, CsvOptions, DataSet, LabelColumn, Recipe,
};
use rfkernel::distributions::{
    gbp_cdf, stable_charfn, BetaPrime, Chi, Gbp, GbpParams, Stable, StableParams,
};
use rfkernel::experiment::{Command, DataSource, ExperimentConfig};
use rfkernel::features::{build, fourier_law, gram_approx, FeatureOperator, RadialLaw, Scheme};
use rfkernel::harness::{approx_error, bench_speedup, rel_error, symmetric_norm, BenchOptions, NormKind};
use rfkernel::kernels::{
    kernel_eval, kernel_matrix_symmetric, matern_bessel, matern_closed_form, KernelFamily, KernelSpec,
};
use rfkernel::learners::{
    accuracy, ece, fit_krr_exact, fit_logistic_features, fit_ridge_features, logistic_objective,
    normal_equation_residual, one_hot, predict_proba, LogisticOptions, ProbabilityMapping, Task, ECE_BINS,
};
use rfkernel::multivariate::{sample_haar_unitary, HaarBlockMatrix, Law, MultivariateSampler, ShapeMatrix};
use rfkernel::stats::{ks_one_sample, ks_two_sample};
use rfkernel::{Result, RngStream, StreamId};

const KS_LEVEL: f64 = 0.01;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type PropCheck = fn() -> Result<bool>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit_s: f64,
    run: fn() -> Result<Verdict>,
}

fn sid(seed: u64, stream_id: u64) -> StreamId {
    StreamId { seed, stream_id }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Least-squares slope of `ys` against `xs`.
fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
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

fn normal_vec(d: usize, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rfkernel::distributions::standard_normal(rng))
}

// 1. Matern with nu = 1/2 is the Laplacian kernel.
fn matern_reduction() -> Result<Verdict> {
    let mut rng = RngStream::new(101, 0);
    let (mut worst_eval, mut worst_bessel) = (0.0f64, 0.0f64);
    for (full, d) in [(2, 2), (16, 16), (784, 32)] {
        let coords: Vec<usize> = if full > d {
            sample_indices(&mut rng, full, d).into_vec()
        } else {
            (0..d).collect()
        };
        let lap = KernelSpec::isotropic(KernelFamily::Laplacian, d)?;
        let mat = KernelSpec::isotropic(KernelFamily::Matern { nu: 0.5 }, d)?;
        for _ in 0..1000 {
            let a: Vec<f64> = (0..full).map(|_| rng.open01()).collect();
            let b: Vec<f64> = (0..full).map(|_| rng.open01()).collect();
            let x: Vec<f64> = coords.iter().map(|&i| a[i]).collect();
            let z: Vec<f64> = coords.iter().map(|&i| b[i]).collect();
            let k = kernel_eval(&lap, &x, &z)?;
            worst_eval = worst_eval.max(rel_diff(kernel_eval(&mat, &x, &z)?, k));
            let r: f64 = x.iter().zip(&z).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            worst_bessel = worst_bessel.max(rel_diff(matern_bessel(0.5, r), k));
        }
    }
    Ok(Verdict::new(
        worst_eval <= 1e-10 && worst_bessel <= 1e-10,
        format!("max rel diff kernel_eval {worst_eval:.2e}, bessel path {worst_bessel:.2e} (tol 1e-10)"),
    ))
}

// 2. General Bessel path against the half-integer closed forms.
fn closed_forms() -> Result<Verdict> {
    let (lo, hi) = (1e-6f64, 20.0f64);
    let half = 5_000;
    let mut grid: Vec<f64> = (0..half)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (half - 1) as f64).exp())
        .collect();
    grid.extend((0..half).map(|i| lo + (hi - lo) * i as f64 / (half - 1) as f64));
    let mut parts = Vec::new();
    let mut pass = true;
    for nu in [1.5, 2.5] {
        let worst = grid
            .iter()
            .map(|&r| rel_diff(matern_bessel(nu, r), matern_closed_form(nu, r).expect("half-integer order")))
            .fold(0.0f64, f64::max);
        pass &= worst <= 1e-8;
        parts.push(format!("nu={nu}: {worst:.2e}"));
    }
    Ok(Verdict::new(pass, format!("{} grid points, max rel diff {} (tol 1e-8)", grid.len(), parts.join(", "))))
}

// 3. Empirical characteristic function of each RFF row law against the kernel.
fn fourier_pairs() -> Result<Verdict> {
    let shape = ShapeMatrix::diagonal(&[0.5, 1.0, 2.0, 1.5])?;
    let families = [
        KernelFamily::Laplacian,
        KernelFamily::ExpPower { alpha: 0.7 },
        KernelFamily::ExpPower { alpha: 1.3 },
        KernelFamily::Matern { nu: 0.5 },
        KernelFamily::Matern { nu: 1.5 },
        KernelFamily::Matern { nu: 4.0 },
        KernelFamily::Gaussian,
    ];
    let mut rng = RngStream::new(303, 4);
    let mut probes = Vec::new();
    for r in [0.25, 0.5, 1.0, 1.5, 2.5] {
        let u = normal_vec(4, &mut rng);
        let m = shape.norm(u.as_slice())?;
        probes.push(u * (r / m));
    }
    let mut worst_all = 0.0f64;
    let mut parts = Vec::new();
    for (i, family) in families.iter().enumerate() {
        let spec = KernelSpec::new(*family, shape.clone())?;
        let sampler = MultivariateSampler::new(fourier_law(*family), shape.clone())?;
        let devs = rfkernel::harness::cf_check(&sampler, &spec, &probes, 1_000_000, sid(303, 16 + i as u64))?;
        let worst = devs.iter().cloned().fold(0.0f64, f64::max);
        worst_all = worst_all.max(worst);
        parts.push(format!("{} {worst:.4}", family.label()));
    }
    println!("    max |ecf - kappa| per family: {}", parts.join(", "));
    Ok(Verdict::new(worst_all < 0.005, format!("worst deviation {worst_all:.4} over 7 families x 5 probes (tol 0.005)")))
}

// 4. Norms of Cauchy and t rows follow the GBP laws used by ORF.
fn norm_laws() -> Result<Verdict> {
    let n = 100_000;
    let mut min_p = 1.0f64;
    let mut pass = true;
    let mut lines = Vec::new();
    for d in [4usize, 16, 64] {
        let shape = ShapeMatrix::identity(d);
        for (family, params) in [
            (KernelFamily::Laplacian, GbpParams::norm_of_cauchy(d, 1.0)),
            (KernelFamily::Matern { nu: 1.5 }, GbpParams::norm_of_t(d, 1.5, 1.0)),
        ] {
            let sampler = MultivariateSampler::new(fourier_law(family), shape.clone())?;
            let mut rng = RngStream::new(404, d as u64);
            let mut w = vec![0.0; d];
            let mut norms = Vec::with_capacity(n);
            for _ in 0..n {
                sampler.sample_into(&mut rng, &mut w)?;
                norms.push(w.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            let analytic = ks_one_sample(&norms, |x| gbp_cdf(params, x))?;
            let radial = RadialLaw::for_kernel(family, d)?;
            let mut rng = RngStream::new(404, 100 + d as u64);
            let direct = (0..n).map(|_| radial.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
            let two = ks_two_sample(&norms, &direct)?;
            pass &= analytic.passes(KS_LEVEL) && two.passes(KS_LEVEL);
            min_p = min_p.min(analytic.p_value).min(two.p_value);
            lines.push(format!(
                "d={d} {}: analytic p={:.3}, two-sample p={:.3}",
                family.label(),
                analytic.p_value,
                two.p_value
            ));
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    Ok(Verdict::new(pass, format!("12 KS tests on 1e5 draws, min p-value {min_p:.3} (level {KS_LEVEL})")))
}

fn convergence_pairs() -> Vec<(KernelFamily, Scheme)> {
    let families = [
        KernelFamily::Gaussian,
        KernelFamily::L1Laplacian,
        KernelFamily::Laplacian,
        KernelFamily::ExpPower { alpha: 0.7 },
        KernelFamily::ExpPower { alpha: 1.3 },
        KernelFamily::Matern { nu: 1.5 },
        KernelFamily::Matern { nu: 4.0 },
    ];
    let mut pairs = Vec::new();
    for f in families {
        pairs.push((f, Scheme::Rff));
        if f != KernelFamily::L1Laplacian {
            pairs.push((f, Scheme::Orf));
        }
    }
    pairs
}

// 5. Gram error decays like p^(-1/2).
fn convergence_rate() -> Result<Verdict> {
    const RADIUS: f64 = 0.25;
    let (n, d) = (1000, 16);
    let x = synthetic_sphere(n, d, RADIUS, &mut RngStream::new(505, 0));
    let ps: Vec<usize> = (7..=14).map(|k| 1usize << k).collect();
    let log_p: Vec<f64> = ps.iter().map(|&p| (p as f64).ln()).collect();
    let mut pass = true;
    let mut worst_last = 0.0f64;
    let (mut min_slope, mut max_slope) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut current: Option<(KernelFamily, DMatrix<f64>)> = None;
    for (family, scheme) in convergence_pairs() {
        if current.as_ref().map(|c| c.0) != Some(family) {
            let spec = KernelSpec::isotropic(family, d)?;
            current = Some((family, kernel_matrix_symmetric(&spec, &x)?));
        }
        let k = &current.as_ref().expect("set above").1;
        let spec = KernelSpec::isotropic(family, d)?;
        let mut errs = Vec::with_capacity(ps.len());
        for (i, &p) in ps.iter().enumerate() {
            let r = approx_error(&spec, &x, k, scheme, p, sid(505, 16 + i as u64), &[NormKind::Frobenius])?;
            errs.push(r.rel_frobenius.expect("requested"));
        }
        let slope = ols_slope(&log_p, &errs.iter().map(|e| e.ln()).collect::<Vec<_>>());
        let last = *errs.last().expect("non-empty grid");
        let ok = (-0.7..=-0.3).contains(&slope) && last < 0.05;
        pass &= ok;
        worst_last = worst_last.max(last);
        min_slope = min_slope.min(slope);
        max_slope = max_slope.max(slope);
        println!(
            "    {:<15} {}: slope {slope:+.3}, err(2^7) {:.4}, err(2^14) {last:.4}{}",
            family.label(),
            scheme.label(),
            errs[0],
            if ok { "" } else { "  <- out of range" }
        );
    }
    Ok(Verdict::new(
        pass,
        format!(
            "13 kernel/scheme pairs, slopes in [{min_slope:.3}, {max_slope:.3}] (need [-0.7, -0.3]), \
             max err at 2^14 {worst_last:.4} (need < 0.05), sphere radius {RADIUS}"
        ),
    ))
}

fn parity_on(train: &DataSet, test: &DataSet, family: KernelFamily, lambda: f64, p: usize, tol_points: f64) -> Result<Verdict> {
    let (labels, classes) = train.labels()?;
    let (test_labels, _) = test.labels()?;
    let y = one_hot(labels, classes)?;
    let spec = KernelSpec::isotropic(family, train.d())?;
    let exact = fit_krr_exact(&spec, &train.x, &y, lambda)?;
    let acc_exact = 100.0 * accuracy(&exact.predict(&test.x)?, test_labels)?;
    let mut parts = vec![format!("KRR {acc_exact:.2}%")];
    let mut worst_gap = 0.0f64;
    for (i, scheme) in [Scheme::Rff, Scheme::Orf].into_iter().enumerate() {
        let op = build(&spec, scheme, p, sid(606, 16 + i as u64))?;
        let model = fit_ridge_features(&op.featurize(&train.x)?, &y, lambda)?;
        let acc = 100.0 * accuracy(&model.predict(&op.featurize(&test.x)?)?, test_labels)?;
        worst_gap = worst_gap.max((acc - acc_exact).abs());
        parts.push(format!("{} {acc:.2}%", scheme.label()));
    }
    Ok(Verdict::new(
        worst_gap <= tol_points,
        format!(
            "n_train {}, n_test {}, p {p}, lambda {lambda}: {}; max gap {worst_gap:.2} points (tol {tol_points})",
            train.n(),
            test.n(),
            parts.join(", ")
        ),
    ))
}

// 6. Random-feature ridge matches exact kernel ridge accuracy.
fn regression_parity() -> Result<Verdict> {
    if let Ok(path) = std::env::var("RFK_LETTER_CSV") {
        let label: usize = std::env::var("RFK_LETTER_LABEL").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
        let opts = CsvOptions { label_col: LabelColumn::Index(label), task: Task::Classification };
        let ds = load_csv(std::path::Path::new(&path), &opts)?;
        let ds = preprocess(&ds, &"center+unit-norm".parse::<Recipe>()?)?;
        let (train, test) = ds.split(0.2, &mut RngStream::new(606, 2))?;
        let v = parity_on(&train, &test, KernelFamily::Laplacian, 1e-3, 8192, 0.6)?;
        return Ok(Verdict::new(v.pass, format!("letter: {}", v.detail)));
    }
    let ds = synthetic_classification(4000, 8, 3, 1.0, 0.0, &mut RngStream::new(606, 0))?;
    let (train, test) = ds.split(0.5, &mut RngStream::new(606, 2))?;
    let v = parity_on(&train, &test, KernelFamily::Laplacian, 1.0, 8192, 1.5)?;
    Ok(Verdict::new(v.pass, format!("synthetic 3-class, d=8 (letter data not supplied): {}", v.detail)))
}

// 7. Logistic random-feature models are better calibrated than squared loss.
fn calibration() -> Result<Verdict> {
    let ds = synthetic_classification(12_000, 16, 10, 2.0, 0.0, &mut RngStream::new(707, 0))?;
    let (train, test) = ds.split(1.0 / 6.0, &mut RngStream::new(707, 2))?;
    let (labels, classes) = train.labels()?;
    let (test_labels, _) = test.labels()?;
    let lambda = 1e-4;
    let spec = KernelSpec::isotropic(KernelFamily::Laplacian, 16)?;
    let op = build(&spec, Scheme::Orf, 512, sid(707, 16))?;
    let phi = op.featurize(&train.x)?;
    let phi_test = op.featurize(&test.x)?;

    let ls = fit_ridge_features(&phi, &one_hot(labels, classes)?, lambda)?;
    let mut ls_ece = Vec::new();
    for mapping in [ProbabilityMapping::Softmax, ProbabilityMapping::ClipNormalize] {
        let probs = predict_proba(&ls, &phi_test, mapping)?;
        let e = ece(&probs, test_labels, ECE_BINS)?;
        println!(
            "    squared loss ({mapping:?}): accuracy {:.4}, ECE {e:.4}",
            accuracy(&probs, test_labels)?
        );
        ls_ece.push(e);
    }
    let (lg, status) = fit_logistic_features(&phi, labels, classes, lambda, LogisticOptions::default())?;
    let probs = predict_proba(&lg, &phi_test, ProbabilityMapping::default())?;
    let lg_ece = ece(&probs, test_labels, ECE_BINS)?;
    println!(
        "    logistic: accuracy {:.4}, ECE {lg_ece:.4}, {} iterations, converged {}",
        accuracy(&probs, test_labels)?,
        status.iterations,
        status.converged
    );
    let pass = lg_ece < 0.1 && lg_ece < ls_ece[0] / 3.0;
    Ok(Verdict::new(
        pass,
        format!(
            "n={} 10-class synthetic, ORF p=512: logistic ECE {lg_ece:.4} vs squared-loss ECE {:.4} (softmax) / {:.4} (clip-normalize); need < 0.1 and < squared/3 under softmax",
            ds.n(),
            ls_ece[0],
            ls_ece[1]
        ),
    ))
}

// 8. Featurized Gram beats the exact Matern kernel matrix at useful accuracy.
fn speedup() -> Result<Verdict> {
    let (n, d) = (10_000, 12);
    let x = synthetic_sphere(n, d, 1.0, &mut RngStream::new(808, 0));
    let spec = KernelSpec::isotropic(KernelFamily::Matern { nu: 4.0 }, d)?;
    let grid = [48, 96, 192, 384, 768];
    let opts = BenchOptions { repeats: 1, include_construction: false };
    let table = bench_speedup(&spec, &x, &grid, Scheme::Orf, sid(808, 16), opts)?;
    println!("    exact kernel matrix: {:.0} ms", table.exact_ms);
    for r in &table.rows {
        println!(
            "    p={:<4} featurize+gram {:>8.0} ms  speedup {:>6.2}x  rel_frobenius {:.4}",
            r.p, r.feature_ms, r.speedup, r.rel_frobenius
        );
    }
    let useful = table.rows.iter().any(|r| r.speedup > 1.0 && r.rel_frobenius < 0.1);
    // within noise: allow 10% upticks in error and 20% dips in time between neighbours
    let err_monotone = table.rows.windows(2).all(|w| w[1].rel_frobenius <= 1.1 * w[0].rel_frobenius);
    let time_monotone = table.rows.windows(2).all(|w| w[1].feature_ms >= 0.8 * w[0].feature_ms);
    Ok(Verdict::new(
        useful && err_monotone && time_monotone,
        format!(
            "n={n}, d={d}, matern-4 ORF: faster at rel_frobenius < 0.1: {useful}; error decreasing in p: {err_monotone}; cost increasing in p: {time_monotone}"
        ),
    ))
}

// 9. Invariants and properties from every module.
fn property_suite() -> Result<Verdict> {
    let checks: Vec<(&str, PropCheck)> = vec![
        ("rng streams reproducible and distinct", prop_rng),
        ("chi^2 via squared chi draws (KS)", prop_chi),
        ("beta-prime draws vs density (KS)", prop_betaprime),
        ("CMS stable draws vs characteristic function", prop_cms),
        ("GBP = q * BetaPrime^(1/p) on a shared stream", prop_gbp_shared),
        ("shape matrix sqrt and Cholesky", prop_shape),
        ("Haar blocks orthogonal", prop_haar_orthogonal),
        ("Haar law invariant under rotation", prop_haar_invariance),
        ("multivariate ecf within 5/sqrt(n)", prop_ecf),
        ("Cauchy norm with M = sigma^2 I is GBP (KS)", prop_cauchy_norm_scaled),
        ("kernel shift invariance", prop_shift),
        ("kernel anisotropy reduction", prop_anisotropy),
        ("kernel bounds", prop_bounds),
        ("feature rows have unit norm", prop_unit_rows),
        ("operator reconstruction is bitwise", prop_reconstruction),
        ("Laplacian RFF rows are coupled", prop_coupling),
        ("pairwise convergence slope, 50 pairs", prop_pair_slopes),
        ("RFF and ORF agree at p = 2^14", prop_rff_orf_agree),
        ("error-matrix norm inequalities", prop_norm_inequalities),
        ("error reports deterministic", prop_report_determinism),
        ("ridge normal equations (primal and dual)", prop_normal_equations),
        ("logistic gradient vs finite differences", prop_fd_gradient),
        ("logistic objective non-increasing", prop_logistic_monotone),
        ("unit-norm preprocessing", prop_unit_norm_rows),
        ("non-finite CSV input rejected", prop_rejects_nan),
        ("ORF p rounded up with a note", prop_orf_rounding),
    ];
    let mut failed = Vec::new();
    for (name, check) in &checks {
        let t = Instant::now();
        let ok = match check() {
            Ok(ok) => ok,
            Err(e) => {
                println!("    error in {name}: {e}");
                false
            }
        };
        println!("    [{}] {name} ({:.2} s)", if ok { "ok" } else { "bad" }, t.elapsed().as_secs_f64());
        if !ok {
            failed.push(*name);
        }
    }
    let detail = if failed.is_empty() {
        format!("{} properties hold", checks.len())
    } else {
        format!("{} of {} properties violated: {}", failed.len(), checks.len(), failed.join("; "))
    };
    Ok(Verdict::new(failed.is_empty(), detail))
}

fn prop_rng() -> Result<bool> {
    let draw = |seed, stream| {
        let mut r = RngStream::new(seed, stream);
        (0..64).map(|_| r.open01().to_bits()).collect::<Vec<_>>()
    };
    Ok(draw(9, 1) == draw(9, 1) && draw(9, 1) != draw(9, 2) && draw(9, 1) != draw(10, 1))
}

fn prop_chi() -> Result<bool> {
    let chi = Chi::new(3.0)?;
    let mut rng = RngStream::new(901, 0);
    let sq: Vec<f64> = (0..100_000).map(|_| chi.sample(&mut rng).powi(2)).collect();
    let chi2 = statrs::distribution::ChiSquared::new(3.0).expect("valid dof");
    let ks = ks_one_sample(&sq, |x| statrs::distribution::ContinuousCDF::cdf(&chi2, x))?;
    Ok(ks.passes(KS_LEVEL))
}

fn prop_betaprime() -> Result<bool> {
    let bp = BetaPrime::new(2.5, 1.5)?;
    let mut rng = RngStream::new(902, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| bp.sample(&mut rng)).collect();
    // CDF of BetaPrime(a, b) is I_{x/(1+x)}(a, b)
    let ks = ks_one_sample(&xs, |x| statrs::function::beta::beta_reg(2.5, 1.5, x / (1.0 + x)))?;
    Ok(ks.passes(KS_LEVEL))
}

fn prop_cms() -> Result<bool> {
    let n = 1_000_000;
    let tol = 3.0 / (n as f64).sqrt();
    for (alpha, beta) in [(0.7, 0.0), (1.0, 0.5), (1.5, -0.3)] {
        let params = StableParams::new(alpha, beta, 1.0)?;
        let stable = Stable::new(params)?;
        let mut rng = RngStream::new(903, (alpha * 10.0) as u64);
        let draws = (0..n).map(|_| stable.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
        for k in 0..10 {
            let t = -5.0 + 10.0 * k as f64 / 9.0;
            let (mut re, mut im) = (0.0, 0.0);
            for x in &draws {
                let (s, c) = (t * x).sin_cos();
                re += c;
                im += s;
            }
            let target = stable_charfn(params, t);
            if (re / n as f64 - target.re).abs() > tol || (im / n as f64 - target.im).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_gbp_shared() -> Result<bool> {
    let params = GbpParams { alpha: 2.0, beta: 0.5, p: 2.0, q: 1.7 };
    let gbp = Gbp::new(params)?;
    let bp = BetaPrime::new(2.0, 0.5)?;
    let mut a = RngStream::new(904, 0);
    let mut b = RngStream::new(904, 0);
    Ok((0..1000).all(|_| gbp.sample(&mut a) == params.q * bp.sample(&mut b).powf(1.0 / params.p)))
}

fn random_spd(d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rfkernel::distributions::standard_normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn prop_shape() -> Result<bool> {
    let mut rng = RngStream::new(905, 0);
    for d in [2, 5, 12] {
        let m = random_spd(d, &mut rng);
        let s = ShapeMatrix::new(m.clone())?;
        let sq = s.sqrt() * s.sqrt();
        let ch = s.cholesky() * s.cholesky().transpose();
        if (sq - &m).norm() / m.norm() > 1e-8 || (ch - &m).norm() / m.norm() > 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn prop_haar_orthogonal() -> Result<bool> {
    let mut rng = RngStream::new(906, 0);
    for d in [3, 16, 40] {
        let q = HaarBlockMatrix::sample(4 * d, d, &mut rng)?;
        for b in 0..q.n_blocks() {
            let blk = q.block(b);
            if (blk.transpose() * &blk - DMatrix::identity(d, d)).amax() > 1e-10 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_haar_invariance() -> Result<bool> {
    let d = 4;
    let mut rng = RngStream::new(907, 0);
    let r = sample_haar_unitary(d, &mut rng)?;
    let (mut plain, mut rotated) = (Vec::new(), Vec::new());
    for _ in 0..5000 {
        plain.push(sample_haar_unitary(d, &mut rng)?.trace());
        rotated.push((&r * sample_haar_unitary(d, &mut rng)?).trace());
    }
    Ok(ks_two_sample(&plain, &rotated)?.passes(KS_LEVEL))
}

fn prop_ecf() -> Result<bool> {
    let d = 3;
    let shape = ShapeMatrix::diagonal(&[1.0, 0.5, 2.0])?;
    let n = 1_000_000;
    let tol = 5.0 / (n as f64).sqrt();
    let u = DVector::from_vec(vec![0.4, -0.7, 0.3]);
    let norm = shape.norm(u.as_slice())?;
    let l1: f64 = u.iter().map(|v| v.abs()).sum();
    let laws = [
        (Law::Gaussian { scale: 1.0 }, (-0.5 * norm * norm).exp()),
        (Law::Cauchy, (-norm).exp()),
        (Law::StudentT { nu: 2.0 }, rfkernel::kernels::matern(2.0, norm)),
        (Law::EcStable { alpha: 1.2 }, (-norm.powf(1.2)).exp()),
        (Law::IidCauchy, (-l1).exp()),
    ];
    let mut rng = RngStream::new(908, 0);
    let mut w = vec![0.0; d];
    for (law, target) in laws {
        let sampler = MultivariateSampler::new(law, shape.clone())?;
        let mut s = 0.0;
        for _ in 0..n {
            sampler.sample_into(&mut rng, &mut w)?;
            s += w.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>().cos();
        }
        if (s / n as f64 - target).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

fn prop_cauchy_norm_scaled() -> Result<bool> {
    let (d, sigma) = (6, 2.0);
    let shape = ShapeMatrix::isotropic(d, sigma * sigma)?;
    let mut rng = RngStream::new(909, 0);
    let norms: Vec<f64> = (0..100_000)
        .map(|_| rfkernel::multivariate::sample_mv_cauchy(&shape, &mut rng).norm())
        .collect();
    Ok(ks_one_sample(&norms, |x| gbp_cdf(GbpParams::norm_of_cauchy(d, sigma), x))?.passes(KS_LEVEL))
}

fn all_families() -> Vec<KernelFamily> {
    vec![
        KernelFamily::Gaussian,
        KernelFamily::L1Laplacian,
        KernelFamily::Laplacian,
        KernelFamily::ExpPower { alpha: 0.5 },
        KernelFamily::ExpPower { alpha: 2.0 },
        KernelFamily::Matern { nu: 0.5 },
        KernelFamily::Matern { nu: 2.7 },
    ]
}

fn prop_shift() -> Result<bool> {
    let d = 5;
    let mut rng = RngStream::new(910, 0);
    let shape = ShapeMatrix::new(random_spd(d, &mut rng))?;
    for family in all_families() {
        let spec = KernelSpec::new(family, shape.clone())?;
        for _ in 0..100 {
            let (x, z, c) = (normal_vec(d, &mut rng), normal_vec(d, &mut rng), normal_vec(d, &mut rng));
            let a = kernel_eval(&spec, x.as_slice(), z.as_slice())?;
            let b = kernel_eval(&spec, (&x + &c).as_slice(), (&z + &c).as_slice())?;
            if (a - b).abs() > 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_anisotropy() -> Result<bool> {
    let d = 5;
    let mut rng = RngStream::new(911, 0);
    let shape = ShapeMatrix::new(random_spd(d, &mut rng))?;
    let root = shape.sqrt().clone();
    for family in all_families().into_iter().filter(|f| f.uses_shape()) {
        let aniso = KernelSpec::new(family, shape.clone())?;
        let iso = KernelSpec::isotropic(family, d)?;
        for _ in 0..100 {
            let (x, z) = (normal_vec(d, &mut rng) * 0.3, normal_vec(d, &mut rng) * 0.3);
            let a = kernel_eval(&aniso, x.as_slice(), z.as_slice())?;
            let b = kernel_eval(&iso, (&root * &x).as_slice(), (&root * &z).as_slice())?;
            if rel_diff(a, b) > 1e-10 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_bounds() -> Result<bool> {
    let d = 4;
    let mut rng = RngStream::new(912, 0);
    for family in all_families() {
        let spec = KernelSpec::isotropic(family, d)?;
        for _ in 0..200 {
            let (x, z) = (normal_vec(d, &mut rng), normal_vec(d, &mut rng));
            let k = kernel_eval(&spec, x.as_slice(), z.as_slice())?;
            if !(k > 0.0 && k < 1.0) || kernel_eval(&spec, x.as_slice(), x.as_slice())? != 1.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_unit_rows() -> Result<bool> {
    let x = synthetic_sphere(200, 8, 3.0, &mut RngStream::new(913, 0));
    for (i, family) in all_families().into_iter().enumerate() {
        let spec = KernelSpec::isotropic(family, 8)?;
        let op = build(&spec, Scheme::Rff, 100, sid(913, 16 + i as u64))?;
        let phi = op.featurize(&x)?;
        if phi.phi.row_iter().any(|r| (r.norm_squared() - 1.0).abs() > 1e-12) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn prop_reconstruction() -> Result<bool> {
    for (i, family) in all_families().into_iter().enumerate() {
        for scheme in [Scheme::Rff, Scheme::Orf] {
            if family == KernelFamily::L1Laplacian && scheme == Scheme::Orf {
                continue;
            }
            let spec = KernelSpec::isotropic(family, 6)?;
            let op = build(&spec, scheme, 36, sid(914, 16 + i as u64))?;
            let json = serde_json::to_string(&op.to_record()).expect("record serializes");
            let back = FeatureOperator::from_record(&serde_json::from_str(&json).expect("record parses"))?;
            let same = op.projection().iter().zip(back.projection().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || back.weights() != op.weights() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_coupling() -> Result<bool> {
    let spec = KernelSpec::isotropic(KernelFamily::Laplacian, 2)?;
    let op = build(&spec, Scheme::Rff, 20_000, sid(915, 16))?;
    let w = op.projection();
    // rank correlation is robust to the heavy tails
    let rank = |c: usize| {
        let mut idx: Vec<usize> = (0..w.nrows()).collect();
        idx.sort_by(|&a, &b| w[(a, c)].abs().total_cmp(&w[(b, c)].abs()));
        let mut r = vec![0.0; w.nrows()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (r1, r2) = (rank(0), rank(1));
    let m = (w.nrows() - 1) as f64 / 2.0;
    let cov: f64 = r1.iter().zip(&r2).map(|(a, b)| (a - m) * (b - m)).sum();
    let var: f64 = r1.iter().map(|a| (a - m) * (a - m)).sum();
    Ok(cov / var > 0.1)
}

fn prop_pair_slopes() -> Result<bool> {
    let d = 8;
    let pts = synthetic_sphere(100, d, 0.5, &mut RngStream::new(916, 0));
    let ps: Vec<usize> = [8, 10, 12, 14, 16].iter().map(|k| 1usize << k).collect();
    let log_p: Vec<f64> = ps.iter().map(|&p| (p as f64).ln()).collect();
    let families = [
        KernelFamily::Gaussian,
        KernelFamily::L1Laplacian,
        KernelFamily::Laplacian,
        KernelFamily::ExpPower { alpha: 1.0 },
        KernelFamily::Matern { nu: 1.5 },
    ];
    for (fi, family) in families.into_iter().enumerate() {
        let spec = KernelSpec::isotropic(family, d)?;
        let exact: Vec<f64> = (0..50)
            .map(|j| {
                let (a, b) = (pts.row(2 * j).transpose(), pts.row(2 * j + 1).transpose());
                kernel_eval(&spec, a.as_slice(), b.as_slice())
            })
            .collect::<Result<_>>()?;
        for scheme in [Scheme::Rff, Scheme::Orf] {
            if family == KernelFamily::L1Laplacian && scheme == Scheme::Orf {
                continue;
            }
            let mut errs = vec![Vec::new(); 50];
            for (pi, &p) in ps.iter().enumerate() {
                let op = build(&spec, scheme, p, sid(916, 16 + (fi * 10 + pi) as u64))?;
                let phi = op.featurize(&pts)?.phi;
                for (j, e) in errs.iter_mut().enumerate() {
                    let g = phi.row(2 * j).dot(&phi.row(2 * j + 1));
                    e.push((g - exact[j]).abs().max(1e-300).ln());
                }
            }
            let slope = median(errs.iter().map(|e| ols_slope(&log_p, e)).collect());
            if !(-0.7..=-0.3).contains(&slope) {
                println!("    median pair slope {slope:.3} for {} {}", family.label(), scheme.label());
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_rff_orf_agree() -> Result<bool> {
    let d = 8;
    let p = 1 << 14;
    let pts = synthetic_sphere(40, d, 0.5, &mut RngStream::new(917, 0));
    let spec = KernelSpec::isotropic(KernelFamily::Laplacian, d)?;
    let rff = gram_approx(&build(&spec, Scheme::Rff, p, sid(917, 16))?.featurize(&pts)?);
    let orf = gram_approx(&build(&spec, Scheme::Orf, p, sid(917, 17))?.featurize(&pts)?);
    let k = kernel_matrix_symmetric(&spec, &pts)?;
    // each estimate is a mean of p bounded terms with variance at most 1
    let band = 4.0 / (p as f64).sqrt();
    Ok((0..k.len()).all(|i| (rff[i] - k[i]).abs() < band && (orf[i] - k[i]).abs() < band && (rff[i] - orf[i]).abs() < 2.0 * band))
}

fn prop_norm_inequalities() -> Result<bool> {
    let x = synthetic_sphere(150, 6, 1.0, &mut RngStream::new(918, 0));
    for (i, family) in [KernelFamily::Laplacian, KernelFamily::Matern { nu: 2.5 }].into_iter().enumerate() {
        let spec = KernelSpec::isotropic(family, 6)?;
        let k = kernel_matrix_symmetric(&spec, &x)?;
        for p in [6, 60, 600] {
            let g = gram_approx(&build(&spec, Scheme::Orf, p, sid(918, 16 + i as u64))?.featurize(&x)?);
            let e = &g - &k;
            let (op, fro, nuc) = (
                symmetric_norm(&e, NormKind::Operator),
                symmetric_norm(&e, NormKind::Frobenius),
                symmetric_norm(&e, NormKind::Nuclear),
            );
            let rel = rel_error(&k, &g, NormKind::Operator)?;
            if !(op <= fro * (1.0 + 1e-12) && fro <= nuc * (1.0 + 1e-12) && rel >= 0.0 && rel.is_finite()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_report_determinism() -> Result<bool> {
    let x = synthetic_sphere(120, 5, 0.7, &mut RngStream::new(919, 0));
    let spec = KernelSpec::isotropic(KernelFamily::ExpPower { alpha: 0.8 }, 5)?;
    let k = kernel_matrix_symmetric(&spec, &x)?;
    let run = |seed| approx_error(&spec, &x, &k, Scheme::Orf, 50, seed, &NormKind::ALL);
    let (a, b, c) = (run(sid(919, 16))?, run(sid(919, 16))?, run(sid(919, 17))?);
    Ok(a.without_timings() == b.without_timings() && a.without_timings() != c.without_timings())
}

fn prop_normal_equations() -> Result<bool> {
    let x = synthetic_sphere(300, 4, 1.0, &mut RngStream::new(920, 0));
    let y = DMatrix::from_fn(300, 2, |i, j| (x[(i, 0)] * (j + 1) as f64).sin());
    let spec = KernelSpec::isotropic(KernelFamily::Laplacian, 4)?;
    for p in [40, 400] {
        let phi = build(&spec, Scheme::Rff, p, sid(920, 16))?.featurize(&x)?;
        for lambda in [1e-3, 1.0] {
            let m = fit_ridge_features(&phi, &y, lambda)?;
            let scale = phi.phi.tr_mul(&y).norm().max(1.0);
            if normal_equation_residual(&phi.phi, &y, lambda, &m.theta) / scale > 1e-8 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn prop_fd_gradient() -> Result<bool> {
    let mut rng = RngStream::new(921, 0);
    let phi = DMatrix::from_fn(40, 6, |_, _| rfkernel::distributions::standard_normal(&mut rng) * 0.4);
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let theta = DMatrix::from_fn(6, 3, |_, _| rfkernel::distributions::standard_normal(&mut rng) * 0.3);
    let lambda = 0.05;
    let (_, grad) = logistic_objective(&phi, &labels, lambda, &theta);
    let h = 1e-6;
    for i in 0..theta.len() {
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up[i] += h;
        down[i] -= h;
        let fd = (logistic_objective(&phi, &labels, lambda, &up).0 - logistic_objective(&phi, &labels, lambda, &down).0) / (2.0 * h);
        if (fd - grad[i]).abs() > 1e-6 * grad[i].abs().max(1e-2) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn prop_logistic_monotone() -> Result<bool> {
    let ds = synthetic_classification(400, 5, 3, 1.0, 0.2, &mut RngStream::new(922, 0))?;
    let (labels, classes) = ds.labels()?;
    let spec = KernelSpec::isotropic(KernelFamily::Laplacian, 5)?;
    let phi = build(&spec, Scheme::Rff, 64, sid(922, 16))?.featurize(&ds.x)?;
    let opts = LogisticOptions { max_iter: 300, record_history: true, ..Default::default() };
    let (_, status) = fit_logistic_features(&phi, labels, classes, 1e-3, opts)?;
    Ok(status.history.len() > 1 && status.history.windows(2).all(|w| w[1] <= w[0]))
}

fn prop_unit_norm_rows() -> Result<bool> {
    let mut rng = RngStream::new(923, 0);
    let x = DMatrix::from_fn(50, 7, |_, _| rfkernel::distributions::standard_normal(&mut rng) * 5.0 + 2.0);
    let ds = DataSet::new("p", x, rfkernel::data::Target::Values(DVector::zeros(50)))?;
    let out = preprocess(&ds, &"center+unit-norm".parse::<Recipe>()?)?;
    Ok(out.x.row_iter().all(|r| (r.norm() - 1.0).abs() < 1e-9))
}

fn prop_rejects_nan() -> Result<bool> {
    let dir = tempfile::tempdir().map_err(rfkernel::Error::from)?;
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b,y\n1,2,0\nNaN,1,1\n").map_err(rfkernel::Error::from)?;
    let opts = CsvOptions { label_col: LabelColumn::Name("y".into()), task: Task::Classification };
    Ok(load_csv(&path, &opts).is_err())
}

fn prop_orf_rounding() -> Result<bool> {
    let dir = tempfile::tempdir().map_err(rfkernel::Error::from)?;
    let mut c = ExperimentConfig::new(Command::Approx { allow_large: false }, KernelFamily::Laplacian, dir.path().join("r.json"));
    c.data = Some(DataSource::Sphere { n: 50, d: 6, radius: 0.5 });
    c.scheme = Scheme::Orf;
    c.p = vec![10];
    c.norms = vec![NormKind::Frobenius];
    let report = rfkernel::experiment::run_experiment(&c)?;
    let ps: Vec<usize> = report.records.iter().filter_map(|r| r.p).collect();
    Ok(!ps.is_empty() && ps.iter().all(|&p| p == 12) && report.notes.iter().any(|n| n.contains("rounded up")))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "Matern nu=1/2 reduces to Laplacian", limit_s: 1.0, run: matern_reduction },
        Criterion { id: 2, name: "Bessel path vs closed forms", limit_s: 5.0, run: closed_forms },
        Criterion { id: 3, name: "Fourier pairs via empirical characteristic function", limit_s: 120.0, run: fourier_pairs },
        Criterion { id: 4, name: "GBP norm laws (KS)", limit_s: 30.0, run: norm_laws },
        Criterion { id: 5, name: "Gram error convergence rate", limit_s: 300.0, run: convergence_rate },
        Criterion { id: 6, name: "Regression parity with exact KRR", limit_s: 600.0, run: regression_parity },
        Criterion { id: 7, name: "Calibration direction", limit_s: 600.0, run: calibration },
        Criterion { id: 8, name: "Speedup trade-off", limit_s: 300.0, run: speedup },
        Criterion { id: 9, name: "Property suite", limit_s: 300.0, run: property_suite },
    ];
    let only: Option<Vec<u32>> = std::env::var("RFK_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let threads = rayon::current_num_threads();
    println!("acceptance suite ({threads} thread{})", if threads == 1 { "" } else { "s" });
    let (mut passed, mut failed) = (0, 0);
    for c in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        println!("  criterion {} running: {}", c.id, c.name);
        let t = Instant::now();
        let verdict = (c.run)().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let secs = t.elapsed().as_secs_f64();
        let in_time = secs < c.limit_s;
        let ok = verdict.pass && in_time;
        println!(
            "criterion {} {}: {} | {} | {secs:.1} s (limit {} s{})",
            c.id,
            if ok { "PASS" } else { "FAIL" },
            c.name,
            verdict.detail,
            c.limit_s,
            if in_time { "" } else { ", exceeded" }
        );
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
