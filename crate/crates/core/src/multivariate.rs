//! Shape matrices, Haar-random orthogonal blocks and the multivariate
//! heavy-tailed samplers whose laws are the Fourier transforms of the kernels.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::distributions::{standard_normal, Stable, StableParams};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetric positive definite matrix `M` with its symmetric square root and
/// lower Cholesky factor. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    m: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    chol: DMatrix<f64>,
    identity: bool,
}

impl ShapeMatrix {
    pub fn identity(d: usize) -> Self {
        let i = DMatrix::identity(d, d);
        Self { m: i.clone(), sqrt: i.clone(), chol: i, identity: true }
    }

    /// `gamma * I_d`.
    pub fn isotropic(d: usize, gamma: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(d, d, gamma))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::param(format!("shape matrix must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("shape matrix has non-finite entries"));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::param(format!("shape matrix not symmetric (max asymmetry {asym:e})")));
        }
        let d = m.nrows();
        let identity = m == DMatrix::identity(d, d);
        let sqrt = sqrt_psd(&m)?;
        let chol = nalgebra::Cholesky::new(m.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
            .l();
        Ok(Self { m, sqrt, chol, identity })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Rows of the matrix, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.m.row(i).iter().cloned().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::param("shape matrix rows must all have length d"));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        if m == DMatrix::identity(d, d) {
            return Ok(Self::identity(d));
        }
        Self::new(m)
    }

    /// `L g` for the lower Cholesky factor `L`; maps standard normal vectors to `N(0, M)`.
    pub fn color(&self, g: &[f64], out: &mut [f64]) {
        let d = self.dim();
        if self.identity {
            out[..d].copy_from_slice(&g[..d]);
            return;
        }
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.chol[(i, j)] * g[j];
            }
            out[i] = s;
        }
    }

    /// `||u||_M = ||sqrt(M) u||_2`.
    pub fn norm(&self, u: &[f64]) -> Result<f64> {
        check_dim(self.dim(), u.len())?;
        if self.identity {
            return Ok(u.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let mut r = 0.0;
            for j in 0..d {
                r += self.sqrt[(i, j)] * u[j];
            }
            s += r * r;
        }
        Ok(s.sqrt())
    }
}

/// Unique symmetric positive definite square root by symmetric eigendecomposition.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::param("square root needs a square matrix"));
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("largest eigenvalue {max:e}")));
    }
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l <= EIGEN_FLOOR * max) {
        return Err(Error::NotPositiveDefinite(format!(
            "eigenvalue {bad:e} not above {EIGEN_FLOOR:e} x {max:e}"
        )));
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Haar-distributed `d x d` orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn sample_haar_unitary(d: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::param("Haar dimension must be >= 1"));
    }
    // column-major fill keeps the draw order independent of nalgebra internals
    let g = DMatrix::from_fn(d, d, |_, _| 0.0).map(|_: f64| standard_normal(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `p/d` independent Haar blocks stacked vertically into a `p x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBlockMatrix {
    q: DMatrix<f64>,
    d: usize,
}

impl HaarBlockMatrix {
    pub fn sample(p: usize, d: usize, rng: &mut RngStream) -> Result<Self> {
        if d == 0 || p == 0 || !p.is_multiple_of(d) {
            return Err(Error::param(format!("feature count {p} must be a positive multiple of d = {d}")));
        }
        let mut q = DMatrix::zeros(p, d);
        for b in 0..p / d {
            let block = sample_haar_unitary(d, rng)?;
            q.view_mut((b * d, 0), (d, d)).copy_from(&block);
        }
        Ok(Self { q, d })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn n_blocks(&self) -> usize {
        self.q.nrows() / self.d
    }

    pub fn block(&self, b: usize) -> DMatrix<f64> {
        self.q.view((b * self.d, 0), (self.d, self.d)).into_owned()
    }
}

/// Centered multivariate laws used as random feature weight distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum Law {
    /// `N(0, M)`, optionally scaled by a constant.
    Gaussian { scale: f64 },
    /// `Cauchy(0_d, M)`.
    Cauchy,
    /// Multivariate t with `2 nu` degrees of freedom and shape `M`.
    StudentT { nu: f64 },
    /// Elliptically contoured alpha-stable with characteristic function `exp(-||u||_M^alpha)`.
    EcStable { alpha: f64 },
    /// i.i.d. standard Cauchy coordinates; ignores `M`.
    IidCauchy,
}

/// A multivariate law bound to a shape matrix.
#[derive(Debug, Clone)]
pub struct MultivariateSampler {
    law: Law,
    shape: ShapeMatrix,
    mixing: Option<Stable>,
    chi_sq_half: Option<Gamma<f64>>,
}

impl MultivariateSampler {
    pub fn new(law: Law, shape: ShapeMatrix) -> Result<Self> {
        let mut mixing = None;
        let mut chi_sq_half = None;
        match law {
            Law::Gaussian { scale } if !(scale > 0.0) => {
                return Err(Error::param(format!("Gaussian scale must be > 0, got {scale}")))
            }
            Law::StudentT { nu } => {
                if !(nu > 0.0) || !nu.is_finite() {
                    return Err(Error::param(format!("t law needs nu > 0, got {nu}")));
                }
                chi_sq_half = Some(Gamma::new(nu, 1.0).map_err(|e| Error::param(e.to_string()))?);
            }
            Law::EcStable { alpha } => {
                mixing = Some(Stable::new(StableParams::exp_power_mixing(alpha)?)?);
            }
            _ => {}
        }
        Ok(Self { law, shape, mixing, chi_sq_half })
    }

    pub fn law(&self) -> Law {
        self.law
    }

    pub fn shape(&self) -> &ShapeMatrix {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn gaussian_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = self.dim();
        let mut g = [0.0f64; 64];
        if d <= 64 {
            for gi in g.iter_mut().take(d) {
                *gi = standard_normal(rng);
            }
            self.shape.color(&g[..d], out);
        } else {
            let g: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
            self.shape.color(&g, out);
        }
    }

    /// Write one draw into `out[..d]`.
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        check_dim(d, out.len())?;
        match self.law {
            Law::Gaussian { scale } => {
                self.gaussian_into(rng, out);
                if scale != 1.0 {
                    out.iter_mut().for_each(|x| *x *= scale);
                }
            }
            Law::Cauchy => {
                self.gaussian_into(rng, out);
                let v = loop {
                    let v = standard_normal(rng);
                    if v.abs() >= 1e-300 {
                        break v;
                    }
                };
                out.iter_mut().for_each(|x| *x /= v);
            }
            Law::StudentT { nu } => {
                self.gaussian_into(rng, out);
                let gamma = self.chi_sq_half.as_ref().expect("built in new");
                let v = loop {
                    let v = 2.0 * gamma.sample(rng);
                    if v > 0.0 {
                        break v;
                    }
                };
                let f = (2.0 * nu / v).sqrt();
                out.iter_mut().for_each(|x| *x *= f);
            }
            Law::EcStable { .. } => {
                let a = self.mixing.as_ref().expect("built in new").sample(rng)?;
                self.gaussian_into(rng, out);
                let f = a.sqrt();
                out.iter_mut().for_each(|x| *x *= f);
            }
            Law::IidCauchy => {
                for x in out.iter_mut() {
                    *x = (std::f64::consts::PI * (rng.open01() - 0.5)).tan();
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.dim());
        self.sample_into(rng, v.as_mut_slice())?;
        Ok(v)
    }
}

pub fn sample_mvn(shape: &ShapeMatrix, rng: &mut RngStream) -> DVector<f64> {
    MultivariateSampler::new(Law::Gaussian { scale: 1.0 }, shape.clone())
        .and_then(|s| s.sample(rng))
        .expect("Gaussian law has no failure modes")
}

pub fn sample_mv_cauchy(shape: &ShapeMatrix, rng: &mut RngStream) -> DVector<f64> {
    MultivariateSampler::new(Law::Cauchy, shape.clone())
        .and_then(|s| s.sample(rng))
        .expect("Cauchy law has no failure modes")
}

pub fn sample_mv_t(nu: f64, shape: &ShapeMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    MultivariateSampler::new(Law::StudentT { nu }, shape.clone())?.sample(rng)
}

pub fn sample_ec_stable(alpha: f64, shape: &ShapeMatrix, rng: &mut RngStream) -> Result<DVector<f64>> {
    MultivariateSampler::new(Law::EcStable { alpha }, shape.clone())?.sample(rng)
}
