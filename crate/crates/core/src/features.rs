//! Random Fourier features (RFF) and orthogonal random features (ORF).
//!
//! Both schemes produce a linear map `x -> W x` with `W` in `R^{p x d}`, followed
//! by the SinCos nonlinearity. RFF draws each row of `W` from the Fourier law of
//! the kernel. ORF writes `W = S Q sqrt(M)` with `Q` stacked Haar blocks and `S`
//! diagonal, drawn from the law of the norm of an RFF row (for `M = I`).
//!
//! Operators are reconstructed from their seed record, never from stored
//! weights: an [`OperatorRecord`] holds the kernel, `p`, the scheme and the
//! stream identity, and [`FeatureOperator::from_record`] re-samples bitwise
//! identical weights.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Chi, Gbp, GbpParams, Stable, StableParams};
use crate::error::{check_dim, Error, Result};
use crate::io::write_atomic;
use crate::kernels::{mirror_lower, KernelFamily, KernelSpec};
use crate::multivariate::{HaarBlockMatrix, Law, MultivariateSampler, ShapeMatrix};
use crate::rng::{RngStream, StreamId};

/// Layout tag stored with serialized operators.
pub const LAYOUT: &str = "interleaved-cos-sin";
pub const RECORD_FORMAT: &str = "rfkernel-operator";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rff,
    Orf,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Rff => "rff",
            Scheme::Orf => "orf",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rff" => Ok(Scheme::Rff),
            "orf" => Ok(Scheme::Orf),
            other => Err(Error::param(format!("unknown scheme '{other}' (expected rff or orf)"))),
        }
    }
}

/// `psi_p(u)`: interleaved `(cos u_i, sin u_i) / sqrt(p)` pairs.
pub fn psi(p: usize, u: &[f64]) -> Vec<f64> {
    let scale = 1.0 / (p as f64).sqrt();
    u.iter()
        .flat_map(|&t| {
            let (s, c) = t.sin_cos();
            [c * scale, s * scale]
        })
        .collect()
}

/// Fourier law of the kernel, i.e. the law of one RFF row.
pub fn fourier_law(family: KernelFamily) -> Law {
    match family {
        KernelFamily::Gaussian => Law::Gaussian { scale: 1.0 },
        KernelFamily::L1Laplacian => Law::IidCauchy,
        KernelFamily::Laplacian => Law::Cauchy,
        // exp(-||D||^2) is the Gaussian kernel with M doubled
        KernelFamily::ExpPower { alpha } if alpha == 2.0 => Law::Gaussian { scale: std::f64::consts::SQRT_2 },
        KernelFamily::ExpPower { alpha } => Law::EcStable { alpha },
        KernelFamily::Matern { nu } => Law::StudentT { nu },
    }
}

/// Law of the ORF diagonal: the norm of an RFF row when `M = I_d`.
#[derive(Debug, Clone)]
pub enum RadialLaw {
    Chi { chi: Chi, scale: f64 },
    ChiTimesStable { chi: Chi, mixing: Stable },
    Gbp(Gbp),
}

impl RadialLaw {
    pub fn for_kernel(family: KernelFamily, d: usize) -> Result<Self> {
        let dd = d as f64;
        Ok(match family {
            KernelFamily::Gaussian => RadialLaw::Chi { chi: Chi::new(dd)?, scale: 1.0 },
            KernelFamily::ExpPower { alpha } if alpha == 2.0 => {
                RadialLaw::Chi { chi: Chi::new(dd)?, scale: std::f64::consts::SQRT_2 }
            }
            KernelFamily::ExpPower { alpha } => RadialLaw::ChiTimesStable {
                chi: Chi::new(dd)?,
                mixing: Stable::new(StableParams::exp_power_mixing(alpha)?)?,
            },
            KernelFamily::Laplacian => RadialLaw::Gbp(Gbp::new(GbpParams::norm_of_cauchy(d, 1.0))?),
            KernelFamily::Matern { nu } => RadialLaw::Gbp(Gbp::new(GbpParams::norm_of_t(d, nu, 1.0))?),
            KernelFamily::L1Laplacian => {
                return Err(Error::param("ORF needs a rotation-invariant kernel; l1-Laplacian is not"))
            }
        })
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match self {
            RadialLaw::Chi { chi, scale } => Ok(scale * chi.sample(rng)),
            RadialLaw::ChiTimesStable { chi, mixing } => {
                let q = chi.sample(rng);
                let w = mixing.sample(rng)?;
                Ok(q * w.sqrt())
            }
            RadialLaw::Gbp(g) => Ok(g.sample(rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Rff { w: DMatrix<f64> },
    Orf { s: DVector<f64>, q: HaarBlockMatrix, sqrt_m: DMatrix<f64> },
}

/// A sampled feature map `x -> psi_p(W x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOperator {
    kernel: KernelSpec,
    p: usize,
    seed: StreamId,
    weights: Weights,
    // W for RFF, S Q sqrt(M) for ORF
    projection: DMatrix<f64>,
}

fn check_p(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::param("feature count p must be >= 1"));
    }
    Ok(())
}

pub fn build_rff(kernel: &KernelSpec, p: usize, seed: StreamId) -> Result<FeatureOperator> {
    check_p(p)?;
    kernel.family.validate()?;
    let d = kernel.dim();
    let sampler = MultivariateSampler::new(fourier_law(kernel.family), kernel.shape.clone())?;
    let mut rng = RngStream::from_id(seed);
    let mut w = DMatrix::zeros(p, d);
    let mut row = vec![0.0; d];
    for i in 0..p {
        sampler.sample_into(&mut rng, &mut row)?;
        for (j, v) in row.iter().enumerate() {
            w[(i, j)] = *v;
        }
    }
    Ok(FeatureOperator { kernel: kernel.clone(), p, seed, projection: w.clone(), weights: Weights::Rff { w } })
}

pub fn build_orf(kernel: &KernelSpec, p: usize, seed: StreamId) -> Result<FeatureOperator> {
    check_p(p)?;
    kernel.family.validate()?;
    let d = kernel.dim();
    let radial = RadialLaw::for_kernel(kernel.family, d)?;
    if !p.is_multiple_of(d) {
        return Err(Error::param(format!("ORF needs p to be a multiple of d = {d}, got {p}")));
    }
    let mut rng = RngStream::from_id(seed);
    let q = HaarBlockMatrix::sample(p, d, &mut rng)?;
    let s = DVector::from_iterator(p, (0..p).map(|_| radial.sample(&mut rng)).collect::<Result<Vec<_>>>()?);
    let sqrt_m = kernel.shape.sqrt().clone();
    let mut projection = q.matrix() * &sqrt_m;
    for (i, mut r) in projection.row_iter_mut().enumerate() {
        r *= s[i];
    }
    Ok(FeatureOperator { kernel: kernel.clone(), p, seed, projection, weights: Weights::Orf { s, q, sqrt_m } })
}

/// Smallest multiple of `d` that is at least `p`.
pub fn round_up_to_multiple(p: usize, d: usize) -> usize {
    p.div_ceil(d) * d
}

pub fn build(kernel: &KernelSpec, scheme: Scheme, p: usize, seed: StreamId) -> Result<FeatureOperator> {
    match scheme {
        Scheme::Rff => build_rff(kernel, p, seed),
        Scheme::Orf => build_orf(kernel, p, seed),
    }
}

/// Features `Phi` (n x 2p) with rows `psi_p(W x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub phi: DMatrix<f64>,
    /// Record of the operator that produced `phi`, if any.
    pub source: Option<OperatorRecord>,
}

impl FeatureMatrix {
    /// Wrap an arbitrary matrix, e.g. for solver tests.
    pub fn from_matrix(phi: DMatrix<f64>) -> Self {
        Self { phi, source: None }
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn width(&self) -> usize {
        self.phi.ncols()
    }
}

impl FeatureOperator {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn seed(&self) -> StreamId {
        self.seed
    }

    pub fn scheme(&self) -> Scheme {
        match self.weights {
            Weights::Rff { .. } => Scheme::Rff,
            Weights::Orf { .. } => Scheme::Orf,
        }
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    /// The effective `p x d` projection.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Apply the linear part to one input.
    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.projection * DVector::from_column_slice(x))
    }

    pub fn featurize(&self, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
        check_dim(self.dim(), x.ncols())?;
        let n = x.nrows();
        let u = x * self.projection.transpose();
        let scale = 1.0 / (self.p as f64).sqrt();
        let mut phi = DMatrix::zeros(n, 2 * self.p);
        if n > 0 {
            phi.as_mut_slice()
                .par_chunks_mut(2 * n)
                .enumerate()
                .for_each(|(j, cols)| {
                    let (cos_col, sin_col) = cols.split_at_mut(n);
                    for (i, t) in u.column(j).iter().enumerate() {
                        let (s, c) = t.sin_cos();
                        cos_col[i] = c * scale;
                        sin_col[i] = s * scale;
                    }
                });
        }
        Ok(FeatureMatrix { phi, source: Some(self.to_record()) })
    }

    pub fn to_record(&self) -> OperatorRecord {
        OperatorRecord {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            layout: LAYOUT.into(),
            scheme: self.scheme(),
            p: self.p,
            kernel: self.kernel.family,
            shape: self.kernel.shape.to_rows(),
            seed: self.seed,
        }
    }

    pub fn from_record(record: &OperatorRecord) -> Result<Self> {
        if record.format != RECORD_FORMAT {
            return Err(Error::Schema(format!("not an operator record: format '{}'", record.format)));
        }
        if record.version != RECORD_VERSION {
            return Err(Error::Schema(format!("unsupported operator record version {}", record.version)));
        }
        if record.layout != LAYOUT {
            return Err(Error::Schema(format!("unsupported feature layout '{}'", record.layout)));
        }
        let kernel = KernelSpec::new(record.kernel, ShapeMatrix::from_rows(&record.shape)?)?;
        build(&kernel, record.scheme, record.p, record.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_record())?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let record: OperatorRecord = serde_json::from_str(&text)?;
        Self::from_record(&record)
    }
}

pub fn featurize(op: &FeatureOperator, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
    op.featurize(x)
}

/// Versioned, weight-free description of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub format: String,
    pub version: u32,
    pub layout: String,
    pub scheme: Scheme,
    pub p: usize,
    pub kernel: KernelFamily,
    pub shape: Vec<Vec<f64>>,
    pub seed: StreamId,
}

const GRAM_PANEL: usize = 256;

/// `Phi Phi^T`, computing only the lower block triangle and mirroring it.
pub fn gram_approx(phi: &FeatureMatrix) -> DMatrix<f64> {
    gram_rows(&phi.phi)
}

/// `A A^T` for any matrix, via the same lower-triangle panels.
pub(crate) fn gram_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = m.shape();
    let mut g = DMatrix::zeros(n, n);
    if n == 0 {
        return g;
    }
    let a = m.as_ptr();
    let c = g.as_mut_ptr();
    let mut start = 0;
    while start < n {
        let rows = GRAM_PANEL.min(n - start);
        let cols = start + rows;
        // C[start.., 0..cols] = A[start.., :] * A[0..cols, :]^T, all column-major.
        // SAFETY: every pointer/stride pair addresses elements inside the n x k
        // input or the n x n output, and the two buffers do not overlap.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                cols,
                1.0,
                a.add(start),
                1,
                n as isize,
                a,
                n as isize,
                1,
                0.0,
                c.add(start),
                1,
                n as isize,
            );
        }
        start += rows;
    }
    mirror_lower(&mut g);
    g
}
