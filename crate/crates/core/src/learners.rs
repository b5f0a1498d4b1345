//! Ridge and logistic regression on random features, exact kernel ridge
//! regression, and evaluation metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{gram_rows, FeatureMatrix, FeatureOperator, OperatorRecord};
use crate::kernels::{kernel_matrix, kernel_matrix_symmetric, KernelFamily, KernelSpec};
use crate::multivariate::ShapeMatrix;

/// One-hot encoding of `labels` in `[0, classes)`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} at row {i} is outside [0, {classes})")));
        }
        y[(i, l)] = 1.0;
    }
    Ok(y)
}

/// Solve `(A + shift I) X = B` for symmetric `A` by Cholesky.
fn spd_solve(mut a: DMatrix<f64>, shift: f64, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    for i in 0..a.nrows() {
        a[(i, i)] += shift;
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{what} is singular or indefinite; use lambda > 0"))
    })?;
    Ok(chol.solve(b))
}

fn all_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} has non-finite entries")))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrrOptions {
    /// Largest `n` solved by a dense factorization; above it conjugate gradients.
    pub direct_limit: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for KrrOptions {
    fn default() -> Self {
        Self { direct_limit: 20_000, cg_tol: 1e-10, cg_max_iter: 10_000 }
    }
}

/// `f(x) = sum_i alpha_i K(x, x_i)`, one column of `alphas` per output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactKernelModel {
    pub spec: KernelSpec,
    pub x_train: DMatrix<f64>,
    pub alphas: DMatrix<f64>,
    pub lambda: f64,
}

impl ExactKernelModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(kernel_matrix(&self.spec, x, &self.x_train)? * &self.alphas)
    }
}

pub fn fit_krr_exact(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<ExactKernelModel> {
    fit_krr_exact_with(spec, x, y, lambda, KrrOptions::default())
}

pub fn fit_krr_exact_with(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    opts: KrrOptions,
) -> Result<ExactKernelModel> {
    check_lambda(lambda)?;
    if y.nrows() != x.nrows() {
        return Err(Error::Dimension { expected: x.nrows(), got: y.nrows() });
    }
    let alphas = if x.nrows() <= opts.direct_limit {
        let k = kernel_matrix_symmetric(spec, x)?;
        spd_solve(k, lambda, y, "K + lambda I")?
    } else {
        krr_cg(spec, x, y, lambda, opts)?
    };
    all_finite(&alphas, "kernel ridge coefficients")?;
    Ok(ExactKernelModel { spec: spec.clone(), x_train: x.clone(), alphas, lambda })
}

const CG_PANEL: usize = 1024;

/// `(K + lambda I) v` without storing `K`: kernel rows are recomputed in panels.
fn kernel_apply(spec: &KernelSpec, x: &DMatrix<f64>, lambda: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    let mut out = v * lambda;
    let mut start = 0;
    while start < n {
        let rows = CG_PANEL.min(n - start);
        let panel = x.rows(start, rows).clone_owned();
        let kp = kernel_matrix(spec, &panel, x)?;
        let part = kp * v;
        let mut slot = out.rows_mut(start, rows);
        slot += &part;
        start += rows;
    }
    Ok(out)
}

fn krr_cg(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, opts: KrrOptions) -> Result<DMatrix<f64>> {
    if lambda == 0.0 {
        return Err(Error::param("the iterative solver needs lambda > 0"));
    }
    let mut alphas = DMatrix::zeros(x.nrows(), y.ncols());
    for c in 0..y.ncols() {
        let b: DVector<f64> = y.column(c).into_owned();
        let b_norm = b.norm();
        let mut a = DVector::zeros(b.len());
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let mut converged = b_norm == 0.0;
        for _ in 0..opts.cg_max_iter {
            if converged {
                break;
            }
            let ap = kernel_apply(spec, x, lambda, &p)?;
            let step = rr / p.dot(&ap);
            a.axpy(step, &p, 1.0);
            r.axpy(-step, &ap, 1.0);
            let rr_next = r.dot(&r);
            if rr_next.sqrt() <= opts.cg_tol * b_norm {
                converged = true;
            }
            p = &r + &p * (rr_next / rr);
            rr = rr_next;
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "conjugate gradients did not reach tolerance {} in {} iterations",
                opts.cg_tol, opts.cg_max_iter
            )));
        }
        alphas.set_column(c, &a);
    }
    Ok(alphas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Logistic,
}

/// Feature-space model `f(x) = <psi_p(W x), theta>`, one column of `theta` per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub theta: DMatrix<f64>,
    pub lambda: f64,
    pub loss: Loss,
    pub operator: Option<OperatorRecord>,
}

impl LinearModel {
    pub fn predict(&self, phi: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if phi.width() != self.theta.nrows() {
            return Err(Error::Dimension { expected: self.theta.nrows(), got: phi.width() });
        }
        Ok(&phi.phi * &self.theta)
    }

    /// Featurize `x` with the stored operator record, then predict.
    pub fn predict_inputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rec = self.operator.as_ref().ok_or_else(|| Error::param("model has no operator record"))?;
        let op = FeatureOperator::from_record(rec)?;
        self.predict(&op.featurize(x)?)
    }
}

/// `||Phi^T (Phi theta - Y) + lambda theta||_F`, the first-order optimality residual.
pub fn normal_equation_residual(phi: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, theta: &DMatrix<f64>) -> f64 {
    let r = phi * theta - y;
    (phi.tr_mul(&r) + theta * lambda).norm()
}

/// Ridge regression in feature space. Solves the `2p x 2p` normal equations
/// when `2p <= n`, and the equivalent `n x n` dual system otherwise.
pub fn fit_ridge_features(phi: &FeatureMatrix, y: &DMatrix<f64>, lambda: f64) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let (n, k) = phi.phi.shape();
    if y.nrows() != n {
        return Err(Error::Dimension { expected: n, got: y.nrows() });
    }
    let theta = if k <= n {
        let phit = phi.phi.transpose();
        let a = gram_rows(&phit);
        let rhs = &phit * y;
        spd_solve(a, lambda, &rhs, "Phi^T Phi + lambda I")?
    } else {
        let g = gram_rows(&phi.phi);
        let beta = spd_solve(g, lambda, y, "Phi Phi^T + lambda I")?;
        phi.phi.tr_mul(&beta)
    };
    all_finite(&theta, "ridge weights")?;
    Ok(LinearModel { theta, lambda, loss: Loss::Squared, operator: phi.source.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub record_history: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 5_000, armijo: 1e-4, record_history: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatus {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    /// Objective after each accepted step, when requested.
    pub history: Vec<f64>,
}

impl FitStatus {
    pub fn warning(&self) -> Option<String> {
        (!self.converged).then(|| {
            format!(
                "logistic regression stopped after {} iterations with gradient norm {:.3e}",
                self.iterations, self.grad_norm
            )
        })
    }
}

/// Row-wise softmax.
pub fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross-entropy part of the objective at logits `z`, and the residual
/// `softmax(z) - onehot(labels)`.
fn cross_entropy(z: &DMatrix<f64>, labels: &[usize], want_resid: bool) -> (f64, Option<DMatrix<f64>>) {
    let mut loss = 0.0;
    let mut resid = want_resid.then(|| DMatrix::zeros(z.nrows(), z.ncols()));
    for (i, &l) in labels.iter().enumerate() {
        let row = z.row(i);
        let m = row.max();
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[(i, l)];
        if let Some(r) = resid.as_mut() {
            for c in 0..z.ncols() {
                r[(i, c)] = (z[(i, c)] - lse).exp();
            }
            r[(i, l)] -= 1.0;
        }
    }
    (loss / z.nrows() as f64, resid)
}

/// Mean softmax cross-entropy plus `(lambda / 2) ||theta||^2`, and its gradient.
pub fn logistic_objective(
    phi: &DMatrix<f64>,
    labels: &[usize],
    lambda: f64,
    theta: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let z = phi * theta;
    let (loss, resid) = cross_entropy(&z, labels, true);
    let grad = phi.transpose() * resid.expect("requested") / phi.nrows() as f64 + theta * lambda;
    (loss + 0.5 * lambda * theta.norm_squared(), grad)
}

/// Softmax logistic regression by full-batch gradient descent with
/// backtracking line search.
pub fn fit_logistic_features(
    phi: &FeatureMatrix,
    labels: &[usize],
    classes: usize,
    lambda: f64,
    opts: LogisticOptions,
) -> Result<(LinearModel, FitStatus)> {
    check_lambda(lambda)?;
    if labels.len() != phi.n() {
        return Err(Error::Dimension { expected: phi.n(), got: labels.len() });
    }
    if classes < 2 {
        return Err(Error::param("logistic regression needs at least 2 classes"));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= classes) {
        return Err(Error::Data(format!("label {l} at row {i} is outside [0, {classes})")));
    }
    let x = &phi.phi;
    let xt = x.transpose();
    let inv_n = 1.0 / x.nrows() as f64;
    let objective = |theta: &DMatrix<f64>, z: &DMatrix<f64>| {
        cross_entropy(z, labels, false).0 + 0.5 * lambda * theta.norm_squared()
    };
    let gradient = |theta: &DMatrix<f64>, z: &DMatrix<f64>| {
        let resid = cross_entropy(z, labels, true).1.expect("requested");
        &xt * resid * inv_n + theta * lambda
    };

    let mut theta = DMatrix::zeros(phi.width(), classes);
    let mut z = DMatrix::zeros(x.nrows(), classes);
    let mut f = objective(&theta, &z);
    let mut g = gradient(&theta, &z);
    let mut grad_norm = g.norm();
    let mut step = 1.0;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(f);
    }
    let mut iterations = 0;
    while grad_norm >= opts.tol && iterations < opts.max_iter {
        let g2 = grad_norm * grad_norm;
        let mut accepted = None;
        let mut first_try = true;
        for _ in 0..60 {
            let trial = &theta - &g * step;
            let zt = x * &trial;
            let ft = objective(&trial, &zt);
            if ft <= f - opts.armijo * step * g2 {
                accepted = Some((trial, zt, ft));
                break;
            }
            step *= 0.5;
            first_try = false;
        }
        let Some((t, zt, ft)) = accepted else { break };
        (theta, z, f) = (t, zt, ft);
        g = gradient(&theta, &z);
        grad_norm = g.norm();
        iterations += 1;
        if opts.record_history {
            history.push(f);
        }
        if first_try {
            step *= 2.0;
        }
    }
    all_finite(&theta, "logistic weights")?;
    let status = FitStatus { converged: grad_norm < opts.tol, iterations, grad_norm, objective: f, history };
    Ok((LinearModel { theta, lambda, loss: Loss::Logistic, operator: phi.source.clone() }, status))
}

/// How squared-loss outputs become class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityMapping {
    /// Clip to `[0, 1]` and renormalize each row (uniform if the row clips to 0).
    #[default]
    ClipNormalize,
    /// Softmax of the raw outputs.
    Softmax,
}

impl std::str::FromStr for ProbabilityMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip-normalize" | "clip" => Ok(ProbabilityMapping::ClipNormalize),
            "softmax" => Ok(ProbabilityMapping::Softmax),
            other => Err(Error::param(format!("unknown probability mapping '{other}'"))),
        }
    }
}

pub fn squared_loss_probabilities(outputs: &DMatrix<f64>, mapping: ProbabilityMapping) -> DMatrix<f64> {
    match mapping {
        ProbabilityMapping::Softmax => softmax_rows(outputs),
        ProbabilityMapping::ClipNormalize => {
            let c = outputs.ncols() as f64;
            let mut p = outputs.map(|v| v.clamp(0.0, 1.0));
            for mut row in p.row_iter_mut() {
                let s = row.sum();
                if s > 0.0 {
                    row /= s;
                } else {
                    row.fill(1.0 / c);
                }
            }
            p
        }
    }
}

/// Class probabilities for a fitted feature model.
pub fn predict_proba(model: &LinearModel, phi: &FeatureMatrix, mapping: ProbabilityMapping) -> Result<DMatrix<f64>> {
    let out = model.predict(phi)?;
    Ok(match model.loss {
        Loss::Logistic => softmax_rows(&out),
        Loss::Squared => squared_loss_probabilities(&out, mapping),
    })
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn predicted_classes(scores: &DMatrix<f64>) -> Vec<usize> {
    scores.row_iter().map(|r| argmax(r.iter().cloned())).collect()
}

pub fn accuracy(scores: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension { expected: scores.nrows(), got: labels.len() });
    }
    let hits = predicted_classes(scores).iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub const ECE_BINS: usize = 15;

/// Expected calibration error over equal-width bins of the max-class probability.
pub fn ece(probs: &DMatrix<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    if probs.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension { expected: probs.nrows(), got: labels.len() });
    }
    if bins == 0 {
        return Err(Error::param("ECE needs at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hit = vec![0.0; bins];
    for (i, &l) in labels.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row.iter().cloned());
        let c = row[pred];
        // bins are (k/B, (k+1)/B]; confidence 0 joins the first bin
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += c;
        if pred == l {
            hit[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (hit[b] - conf[b]).abs() / n)
        .sum())
}

pub fn r_squared(pred: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(Error::Dimension { expected: y.len(), got: pred.len() });
    }
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::Numerical("R^2 is undefined for a constant target".into()));
    }
    let sse: f64 = pred.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub r2: Option<f64>,
}

pub fn evaluate_classification(probs: &DMatrix<f64>, labels: &[usize], bins: usize) -> Result<Metrics> {
    Ok(Metrics { accuracy: Some(accuracy(probs, labels)?), ece: Some(ece(probs, labels, bins)?), r2: None })
}

pub fn evaluate_regression(pred: &DVector<f64>, y: &DVector<f64>) -> Result<Metrics> {
    Ok(Metrics { r2: Some(r_squared(pred, y)?), ..Metrics::default() })
}

const MODEL_MAGIC: &[u8; 4] = b"RFKM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelHeader {
    Linear { loss: Loss, lambda: f64, operator: Option<OperatorRecord>, rows: usize, cols: usize },
    Exact { kernel: KernelFamily, shape: Vec<Vec<f64>>, lambda: f64, n: usize, d: usize, outputs: usize },
}

fn put_f64s(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Schema("truncated model file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
        let raw = self.take(len.ok_or_else(|| Error::Schema("matrix size overflow".into()))?)?;
        let vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        Ok(DMatrix::from_iterator(rows, cols, vals))
    }
}

fn frame(header: &ModelHeader, payload: &[&DMatrix<f64>]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for m in payload {
        put_f64s(&mut buf, m);
    }
    Ok(buf)
}

fn unframe(bytes: &[u8]) -> Result<(ModelHeader, Reader<'_>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Schema("not a model file".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Schema(format!("unsupported model version {version}")));
    }
    let len = r.u32()? as usize;
    let header = serde_json::from_slice(r.take(len)?)?;
    Ok((header, r))
}

fn finish(r: Reader<'_>) -> Result<()> {
    if r.pos != r.bytes.len() {
        return Err(Error::Schema("trailing bytes in model file".into()));
    }
    Ok(())
}

impl LinearModel {
    /// Versioned binary form: magic, version, JSON header (operator seed
    /// record, loss, lambda, shape), then `theta` as little-endian f64.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader::Linear {
            loss: self.loss,
            lambda: self.lambda,
            operator: self.operator.clone(),
            rows: self.theta.nrows(),
            cols: self.theta.ncols(),
        };
        frame(&header, &[&self.theta])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut r) = unframe(bytes)?;
        let ModelHeader::Linear { loss, lambda, operator, rows, cols } = header else {
            return Err(Error::Schema("model file holds an exact kernel model".into()));
        };
        let theta = r.matrix(rows, cols)?;
        finish(r)?;
        Ok(Self { theta, lambda, loss, operator })
    }
}

impl ExactKernelModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader::Exact {
            kernel: self.spec.family,
            shape: self.spec.shape.to_rows(),
            lambda: self.lambda,
            n: self.x_train.nrows(),
            d: self.x_train.ncols(),
            outputs: self.alphas.ncols(),
        };
        frame(&header, &[&self.x_train, &self.alphas])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut r) = unframe(bytes)?;
        let ModelHeader::Exact { kernel, shape, lambda, n, d, outputs } = header else {
            return Err(Error::Schema("model file holds a feature-space model".into()));
        };
        let spec = KernelSpec::new(kernel, ShapeMatrix::from_rows(&shape)?)?;
        let x_train = r.matrix(n, d)?;
        let alphas = r.matrix(n, outputs)?;
        finish(r)?;
        Ok(Self { spec, x_train, alphas, lambda })
    }
}
