//! Scalar laws used to build random feature weights.
//!
//! Every sampler is a pure function of its parameters and an [`RngStream`].
//! Analytic CDFs and characteristic functions sit next to the samplers so the
//! test suite can check one against the other.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Complex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::rng::RngStream;

fn gamma_law(shape: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, 1.0).map_err(|e| Error::param(format!("gamma shape {shape}: {e}")))
}

/// Chi distribution with `k` degrees of freedom, drawn as the root of a
/// chi-square (twice a Gamma(k/2) variate).
#[derive(Debug, Clone, Copy)]
pub struct Chi {
    k: f64,
    half: Gamma<f64>,
}

impl Chi {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::param(format!("chi degrees of freedom must be > 0, got {k}")));
        }
        Ok(Self { k, half: gamma_law(k / 2.0)? })
    }

    pub fn dof(&self) -> f64 {
        self.k
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        (2.0 * self.half.sample(rng)).sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_lr(self.k / 2.0, x * x / 2.0)
        }
    }
}

pub fn sample_chi(k: f64, rng: &mut RngStream) -> Result<f64> {
    Ok(Chi::new(k)?.sample(rng))
}

/// Odds of a Beta(a, b) variate.
///
/// With `Z = Ga / (Ga + Gb)` for independent Gamma draws, the odds `Z / (1 - Z)`
/// equal `Ga / Gb`; the ratio is formed directly so that `Z` close to one does
/// not lose digits in `1 - Z`.
#[derive(Debug, Clone, Copy)]
pub struct BetaPrime {
    a: f64,
    b: f64,
    ga: Gamma<f64>,
    gb: Gamma<f64>,
}

impl BetaPrime {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::param(format!("beta-prime shapes must be > 0, got ({a}, {b})")));
        }
        Ok(Self { a, b, ga: gamma_law(a)?, gb: gamma_law(b)? })
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        loop {
            let x = self.ga.sample(rng);
            let y = self.gb.sample(rng);
            if y > 0.0 {
                return x / y;
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gbp_cdf(GbpParams { alpha: self.a, beta: self.b, p: 1.0, q: 1.0 }, x)
    }
}

pub fn sample_betaprime(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    Ok(BetaPrime::new(a, b)?.sample(rng))
}

/// Parameters of the generalized beta-prime law `q * u^(1/p)`, `u ~ BetaPrime(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbpParams {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub q: f64,
}

impl GbpParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.p, self.q];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::param(format!("GBP parameters must all be > 0, got {self:?}")))
        }
    }

    /// Norm law of an isotropic multivariate t with `2 nu` degrees of freedom
    /// and shape `sigma^2 I_d`.
    pub fn norm_of_t(d: usize, nu: f64, sigma: f64) -> Self {
        Self { alpha: d as f64 / 2.0, beta: nu, p: 2.0, q: sigma * (2.0 * nu).sqrt() }
    }

    /// Norm law of an isotropic multivariate Cauchy with shape `sigma^2 I_d`.
    pub fn norm_of_cauchy(d: usize, sigma: f64) -> Self {
        Self { alpha: d as f64 / 2.0, beta: 0.5, p: 2.0, q: sigma }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let z = x / self.q;
        let ln_b = statrs::function::beta::ln_beta(self.alpha, self.beta);
        let ln = self.p.ln() + (self.alpha * self.p - 1.0) * z.ln()
            - self.q.ln()
            - ln_b
            - (self.alpha + self.beta) * z.powf(self.p).ln_1p();
        ln.exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Gbp {
    params: GbpParams,
    base: BetaPrime,
}

impl Gbp {
    pub fn new(params: GbpParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, base: BetaPrime::new(params.alpha, params.beta)? })
    }

    pub fn params(&self) -> GbpParams {
        self.params
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = self.base.sample(rng);
        self.params.q * u.powf(1.0 / self.params.p)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gbp_cdf(self.params, x)
    }
}

pub fn sample_gbp(params: GbpParams, rng: &mut RngStream) -> Result<f64> {
    Ok(Gbp::new(params)?.sample(rng))
}

/// CDF of GBP(alpha, beta, p, q): the regularized incomplete beta function
/// evaluated at `y / (1 + y)` with `y = (x/q)^p`. Negative `x` maps to 0.
pub fn gbp_cdf(params: GbpParams, x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let y = (x / params.q).powf(params.p);
    if y.is_infinite() {
        return 1.0;
    }
    if y <= 1.0 {
        beta_reg(params.alpha, params.beta, y / (1.0 + y))
    } else {
        1.0 - beta_reg(params.beta, params.alpha, 1.0 / (1.0 + y))
    }
}

/// Parameters of the zero-location stable law S(alpha, beta, sigma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param(format!("stable alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(Error::param(format!("stable beta must lie in [-1, 1], got {}", self.beta)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::param(format!("stable sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// One-sided law `S(alpha/2, 1, 2 cos^(2/alpha)(pi alpha / 4))` whose square
    /// root scales a Gaussian into an elliptically contoured alpha-stable
    /// vector with characteristic function `exp(-||u||_M^alpha)`.
    pub fn exp_power_mixing(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::param(format!(
                "mixing law needs alpha in (0, 2), got {alpha}"
            )));
        }
        Self::new(alpha / 2.0, 1.0, 2.0 * (PI * alpha / 4.0).cos().powf(2.0 / alpha))
    }
}

/// Chambers-Mallows-Stuck sampler.
#[derive(Debug, Clone, Copy)]
pub struct Stable {
    params: StableParams,
    shift: f64,
    scale: f64,
}

impl Stable {
    pub fn new(params: StableParams) -> Result<Self> {
        params.validate()?;
        let (shift, scale) = if params.alpha == 1.0 {
            (0.0, 1.0)
        } else {
            let t = params.beta * (FRAC_PI_2 * params.alpha).tan();
            (t.atan() / params.alpha, (1.0 + t * t).powf(1.0 / (2.0 * params.alpha)))
        };
        Ok(Self { params, shift, scale })
    }

    pub fn params(&self) -> StableParams {
        self.params
    }

    /// Deterministic transform of `v ~ U(-pi/2, pi/2)` and `w ~ Exp(1)`.
    pub fn transform(&self, v: f64, w: f64) -> f64 {
        let StableParams { alpha, beta, sigma } = self.params;
        if alpha == 1.0 {
            // the general formula degenerates at alpha = 1 (exponent 0, B infinite)
            let a = FRAC_PI_2 + beta * v;
            if beta == 0.0 {
                return sigma * v.tan();
            }
            let x = (a * v.tan() - beta * (FRAC_PI_2 * w * v.cos() / a).ln()) / FRAC_PI_2;
            return sigma * x + beta * sigma * sigma.ln() / FRAC_PI_2;
        }
        let inner = alpha * (v + self.shift);
        let ratio = ((v - inner).cos() / w).powf((1.0 - alpha) / alpha);
        sigma * self.scale * inner.sin() / v.cos().powf(1.0 / alpha) * ratio
    }

    fn draw_once(&self, rng: &mut RngStream) -> f64 {
        let v = PI * (rng.open01() - 0.5);
        let w: f64 = Exp1.sample(rng);
        self.transform(v, w)
    }

    /// Draw one variate. Non-finite results from the extreme tails are redrawn
    /// once; a second failure is reported as an error.
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        let x = self.draw_once(rng);
        if x.is_finite() {
            return Ok(x);
        }
        let x = self.draw_once(rng);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Numerical(format!(
                "stable draw not finite twice in a row for {:?}",
                self.params
            )))
        }
    }

    pub fn charfn(&self, t: f64) -> Complex<f64> {
        stable_charfn(self.params, t)
    }
}

pub fn sample_stable_cms(params: StableParams, rng: &mut RngStream) -> Result<f64> {
    Stable::new(params)?.sample(rng)
}

/// `exp(-|sigma t|^alpha (1 - i beta sgn(t) Phi(t)))`, with
/// `Phi = tan(pi alpha / 2)` for `alpha != 1` and `-(2/pi) ln|t|` otherwise.
pub fn stable_charfn(params: StableParams, t: f64) -> Complex<f64> {
    if t == 0.0 {
        return Complex::new(1.0, 0.0);
    }
    let StableParams { alpha, beta, sigma } = params;
    let phi = if alpha == 1.0 {
        -(2.0 / PI) * t.abs().ln()
    } else {
        (FRAC_PI_2 * alpha).tan()
    };
    let mag = (sigma * t).abs().powf(alpha);
    let exponent = Complex::new(-mag, mag * beta * t.signum() * phi);
    exponent.exp()
}

pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_cdf(x: f64, sd: f64) -> f64 {
    0.5 * (1.0 + erf(x / (sd * std::f64::consts::SQRT_2)))
}

pub fn cauchy_cdf(x: f64, scale: f64) -> f64 {
    0.5 + (x / scale).atan() / PI
}
