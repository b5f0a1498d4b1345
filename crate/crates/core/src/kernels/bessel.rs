//! Modified Bessel function of the second kind, `K_nu(x)`, for real order.
//!
//! Temme's series for `x < 2` and Steed's continued fraction otherwise give
//! `K_mu` and `K_{mu+1}` with `|mu| <= 1/2`; forward recurrence (stable for `K`)
//! carries them to the requested order. Work is done on a rescaled copy so the
//! logarithm stays accurate where `K_nu` itself over- or underflows.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;
const SERIES_CUTOFF: f64 = 2.0;
const RESCALE: f64 = 1e250;

// Chebyshev expansions of gamma1(mu) and gamma2(mu) on |mu| <= 1/2
const GAM1_COEFFS: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];
const GAM2_COEFFS: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c.iter().skip(1).rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// `(gamma1, gamma2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`, where
/// `gamma1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gamma2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
pub(crate) fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebev(&GAM1_COEFFS, xx);
    let gam2 = chebev(&GAM2_COEFFS, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// Returns `(K_mu(x), K_{mu+1}(x), ln_scale)` with the true values equal to
/// the returned ones times `exp(ln_scale)`.
fn k_pair(mu: f64, x: f64) -> Result<(f64, f64, f64)> {
    let mu2 = mu * mu;
    if x < SERIES_CUTOFF {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!("Bessel K series did not converge (mu={mu}, x={x})")));
        }
        Ok((sum, sum1 * 2.0 / x, 0.0))
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let (mut q1, mut q2) = (0.0, 1.0);
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!("Bessel K continued fraction did not converge (mu={mu}, x={x})")));
        }
        h *= a1;
        // exp(-x) factor carried in the scale
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) / x;
        Ok((kmu, k1, -x))
    }
}

/// `ln K_nu(x)` for `x > 0`. Accurate even where `K_nu(x)` is not representable.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("Bessel K needs finite x > 0, got {x}")));
    }
    if !nu.is_finite() {
        return Err(Error::Domain(format!("Bessel K order must be finite, got {nu}")));
    }
    // K_{-nu} = K_nu
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut k0, mut k1, mut ln_scale) = k_pair(mu, x)?;
    let steps = nl as usize;
    for i in 1..=steps {
        let next = 2.0 * (mu + i as f64) / x * k1 + k0;
        k0 = k1;
        k1 = next;
        if k1 > RESCALE {
            k0 /= RESCALE;
            k1 /= RESCALE;
            ln_scale += RESCALE.ln();
        }
    }
    Ok(k0.ln() + ln_scale)
}

/// `K_nu(x)` for `x > 0`; returns `+inf` when the value exceeds `f64::MAX`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    ln_bessel_k(nu, x).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::bessel_k_quadrature;
    use statrs::function::gamma::gamma;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn temme_gammas_match_gamma_function() {
        for &mu in &[-0.5, -0.3, -0.1, 0.05, 0.2, 0.45, 0.5] {
            let (g1, g2, gp, gm) = temme_gammas(mu);
            let (ip, im) = (1.0 / gamma(1.0 + mu), 1.0 / gamma(1.0 - mu));
            assert!((gp - ip).abs() < 1e-14, "mu={mu}");
            assert!((gm - im).abs() < 1e-14, "mu={mu}");
            assert!((g2 - 0.5 * (im + ip)).abs() < 1e-14);
            if mu.abs() > 0.1 {
                assert!((g1 - (im - ip) / (2.0 * mu)).abs() < 1e-12);
            }
        }
        // gamma1(0) = -Euler's constant
        let (g1, ..) = temme_gammas(0.0);
        assert!((g1 + 0.577_215_664_901_532_9).abs() < 1e-14);
    }

    #[test]
    fn half_order_closed_form() {
        let closed = |x: f64| (PI / (2.0 * x)).sqrt() * (-x).exp();
        assert!((bessel_k(0.5, 1.0).unwrap() - 0.461_068_504_447_894_4).abs() < 1e-15);
        for &x in &[1e-6, 0.01, 0.5, 1.0, 1.99, 2.0, 3.5, 10.0, 100.0, 650.0] {
            assert!(rel(bessel_k(0.5, x).unwrap(), closed(x)) < 1e-13, "x={x}");
        }
        // quadrature oracle agrees with the closed form too
        assert!(rel(bessel_k_quadrature(0.5, 1.0), closed(1.0)) < 1e-12);
    }

    #[test]
    fn agrees_with_quadrature_oracle() {
        let orders = [0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.3, 4.0, 7.25, 12.0, 25.5, 50.0];
        let xs = [1e-3, 0.1, 0.7, 1.5, 1.999, 2.0, 2.5, 5.0, 12.0, 40.0, 150.0, 690.0];
        for &nu in &orders {
            for &x in &xs {
                let oracle = bessel_k_quadrature(nu, x);
                if !oracle.is_finite() || oracle == 0.0 || oracle > 1e300 {
                    continue;
                }
                let got = bessel_k(nu, x).unwrap();
                assert!(rel(got, oracle) < 1e-10, "nu={nu} x={x} got={got:e} oracle={oracle:e}");
            }
        }
        assert!(rel(bessel_k(1.5, 2.0).unwrap(), bessel_k_quadrature(1.5, 2.0)) < 1e-10);
    }

    #[test]
    fn integer_orders_known_values() {
        // A&S table values
        assert!(rel(bessel_k(0.0, 1.0).unwrap(), 0.421_024_438_240_708_3) < 1e-13);
        assert!(rel(bessel_k(1.0, 1.0).unwrap(), 0.601_907_230_197_234_6) < 1e-13);
        assert!(rel(bessel_k(1.0, 2.0).unwrap(), 0.139_865_881_816_522_4) < 1e-13);
    }

    #[test]
    fn log_form_survives_overflow() {
        // K_50(1e-8) ~ Gamma(50)/2 (2/x)^50 is far beyond f64::MAX
        let ln = ln_bessel_k(50.0, 1e-8).unwrap();
        let expected = statrs::function::gamma::ln_gamma(50.0) - 2f64.ln() + 50.0 * (2.0 / 1e-8f64).ln();
        assert!(((ln - expected) / expected).abs() < 1e-10);
        assert_eq!(bessel_k(50.0, 1e-8).unwrap(), f64::INFINITY);
        // small argument, low order: leading behaviour Gamma(nu)/2 (2/x)^nu
        let x = 1e-7f64;
        let lead = gamma(2.5) / 2.0 * (2.0 / x).powf(2.5);
        assert!(rel(bessel_k(2.5, x).unwrap(), lead) < 1e-9);
    }

    #[test]
    fn monotone_decreasing_in_x() {
        for &nu in &[0.3, 1.5, 4.0, 11.0] {
            let mut prev = f64::INFINITY;
            for i in 1..2000 {
                let x = i as f64 * 0.05;
                let v = ln_bessel_k(nu, x).unwrap();
                assert!(v < prev, "nu={nu} x={x}");
                prev = v;
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(bessel_k(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_k(1.0, -2.0), Err(Error::Domain(_))));
        assert!(bessel_k(1.0, f64::NAN).is_err());
        assert_eq!(bessel_k(-1.3, 2.0).unwrap(), bessel_k(1.3, 2.0).unwrap());
    }
}
