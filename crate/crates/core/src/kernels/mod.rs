//! Exact kernel evaluation and dense kernel matrices.
//!
//! All kernels here are shift invariant, `K(x, z) = kappa(x - z)`, and every
//! family except the l1-Laplacian depends on `x - z` only through the
//! Mahalanobis norm `||x - z||_M` of the spec's shape matrix.

mod bessel;

pub use bessel::{bessel_k, ln_bessel_k};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, Error, Result};
use crate::multivariate::ShapeMatrix;

/// Kernel family and its scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(-||D||_M^2 / 2)`.
    Gaussian,
    /// `exp(-||D||_1)`, separable and not parameterized by `M`.
    L1Laplacian,
    /// `exp(-||D||_M)`.
    Laplacian,
    /// `exp(-||D||_M^alpha)`, `alpha` in (0, 2]. Note `alpha = 2` is
    /// `exp(-||D||_M^2)`, not the Gaussian convention above.
    ExpPower { alpha: f64 },
    /// Matern with smoothness `nu > 0`.
    Matern { nu: f64 },
}

impl KernelFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::ExpPower { alpha } if !(alpha > 0.0 && alpha <= 2.0) => {
                Err(Error::param(format!("exp-power alpha must lie in (0, 2], got {alpha}")))
            }
            KernelFamily::Matern { nu } if !(nu > 0.0) || !nu.is_finite() => {
                Err(Error::param(format!("Matern nu must be > 0, got {nu}")))
            }
            _ => Ok(()),
        }
    }

    pub fn uses_shape(&self) -> bool {
        !matches!(self, KernelFamily::L1Laplacian)
    }

    /// Short label such as `matern-1.5`.
    pub fn label(&self) -> String {
        match self {
            KernelFamily::Gaussian => "gaussian".into(),
            KernelFamily::L1Laplacian => "l1-laplacian".into(),
            KernelFamily::Laplacian => "laplacian".into(),
            KernelFamily::ExpPower { alpha } => format!("exp-power-{alpha}"),
            KernelFamily::Matern { nu } => format!("matern-{nu}"),
        }
    }

    /// Radial profile: kernel value as a function of the relevant norm of `x - z`.
    pub fn profile(&self, r: f64) -> f64 {
        match *self {
            KernelFamily::Gaussian => (-0.5 * r * r).exp(),
            KernelFamily::L1Laplacian | KernelFamily::Laplacian => (-r).exp(),
            KernelFamily::ExpPower { alpha } => {
                if alpha == 1.0 {
                    (-r).exp()
                } else {
                    (-r.powf(alpha)).exp()
                }
            }
            KernelFamily::Matern { nu } => matern(nu, r),
        }
    }
}

/// A kernel family bound to a shape matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub shape: ShapeMatrix,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, shape: ShapeMatrix) -> Result<Self> {
        family.validate()?;
        Ok(Self { family, shape })
    }

    /// Isotropic spec with `M = I_d`.
    pub fn isotropic(family: KernelFamily, d: usize) -> Result<Self> {
        Self::new(family, ShapeMatrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn distance(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), z.len())?;
        if x.iter().chain(z).any(|v| v.is_nan()) {
            return Err(Error::Domain("NaN input to kernel".into()));
        }
        let delta: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
        match self.family {
            KernelFamily::L1Laplacian => Ok(delta.iter().map(|v| v.abs()).sum()),
            _ => self.shape.norm(&delta),
        }
    }
}

pub fn mahalanobis_norm(shape: &ShapeMatrix, u: &[f64]) -> Result<f64> {
    shape.norm(u)
}

/// Closed forms for half-integer orders 1/2, 3/2 and 5/2.
pub fn matern_closed_form(nu: f64, r: f64) -> Option<f64> {
    if nu == 0.5 {
        Some((-r).exp())
    } else if nu == 1.5 {
        let s = 3f64.sqrt() * r;
        Some((1.0 + s) * (-s).exp())
    } else if nu == 2.5 {
        let s = 5f64.sqrt() * r;
        Some((1.0 + s + 5.0 / 3.0 * r * r) * (-s).exp())
    } else {
        None
    }
}

/// General-order Matern through the Bessel function:
/// `2^(1-nu) / Gamma(nu) * z^nu K_nu(z)` with `z = sqrt(2 nu) r`.
pub fn matern_bessel(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let z = (2.0 * nu).sqrt() * r;
    match ln_bessel_k(nu, z) {
        Ok(lk) => {
            let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + lk;
            ln.exp().min(1.0)
        }
        // z is positive and finite here; only an infinite r can get through
        Err(_) => 0.0,
    }
}

pub fn matern(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    matern_closed_form(nu, r).unwrap_or_else(|| matern_bessel(nu, r))
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    let r = spec.distance(x, z)?;
    Ok(spec.family.profile(r))
}

/// Rows of `x` mapped by `sqrt(M)`, stored point-contiguous (d x n, column per point).
fn transformed_points(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    if !spec.family.uses_shape() || spec.shape.is_identity() {
        x.transpose()
    } else {
        spec.shape.sqrt() * x.transpose()
    }
}

#[inline]
fn point_distance(family: KernelFamily, a: &[f64], b: &[f64]) -> f64 {
    match family {
        KernelFamily::L1Laplacian => a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum(),
        _ => a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt(),
    }
}

fn check_inputs(spec: &KernelSpec, m: &DMatrix<f64>) -> Result<()> {
    check_dim(spec.dim(), m.ncols())?;
    if m.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("NaN in kernel matrix input".into()));
    }
    Ok(())
}

/// `K[i, j] = k(x_i, z_j)` for the rows of `x` (n x d) and `z` (m x d).
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(spec, x)?;
    check_inputs(spec, z)?;
    let (n, m) = (x.nrows(), z.nrows());
    let xt = transformed_points(spec, x);
    let zt = transformed_points(spec, z);
    let family = spec.family;
    let mut k = DMatrix::zeros(n, m);
    if n == 0 {
        return Ok(k);
    }
    k.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let zj = zt.column(j);
            let zj = zj.as_slice();
            for (i, out) in col.iter_mut().enumerate() {
                *out = family.profile(point_distance(family, xt.column(i).as_slice(), zj));
            }
        });
    Ok(k)
}

/// `K(X, X)`, evaluating each unordered pair once.
pub fn kernel_matrix_symmetric(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(spec, x)?;
    let n = x.nrows();
    let xt = transformed_points(spec, x);
    let family = spec.family;
    let mut k = DMatrix::zeros(n, n);
    if n == 0 {
        return Ok(k);
    }
    k.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let xj = xt.column(j);
            let xj = xj.as_slice();
            col[j] = 1.0;
            for i in j + 1..n {
                col[i] = family.profile(point_distance(family, xt.column(i).as_slice(), xj));
            }
        });
    mirror_lower(&mut k);
    Ok(k)
}

/// Copy the strict lower triangle onto the upper one.
pub(crate) fn mirror_lower(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for j in 0..n {
        for i in 0..j {
            k[(i, j)] = k[(j, i)];
        }
    }
}
