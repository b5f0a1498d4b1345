//! Goodness-of-fit statistics used to validate samplers.

use crate::error::{Error, Result};

/// Outcome of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

/// Survival function of the Kolmogorov distribution, P(K > x).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // series below converges slowly; the distribution is ~1 here anyway
        let s = (2.0 * std::f64::consts::PI).sqrt() / x;
        let mut cdf = 0.0;
        for k in 1..=50 {
            let kk = (2 * k - 1) as f64;
            cdf += (-(kk * kk) * std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x)).exp();
        }
        return (1.0 - s * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::param("KS test needs at least one sample"));
    }
    let mut xs = samples.to_vec();
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("NaN in KS sample".into()));
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let sn = n.sqrt();
    let p = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult { statistic: d, p_value: p })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("KS test needs non-empty samples"));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    if xa.iter().chain(xb.iter()).any(|x| x.is_nan()) {
        return Err(Error::Domain("NaN in KS sample".into()));
    }
    xa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let p = kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d);
    Ok(KsResult { statistic: d, p_value: p })
}

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ecdf_sup_gap<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    ks_one_sample(samples, cdf).map(|r| r.statistic)
}

/// Pearson chi-square test of observed counts against equal expected counts.
/// Returns `(statistic, p_value)`.
pub fn chi_square_uniform(counts: &[u64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if counts.len() < 2 {
        return Err(Error::param("need at least two bins"));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let diff = c as f64 - expected;
            diff * diff / expected
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// Empirical quantile by linear interpolation of the sorted sample.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_known_values() {
        // P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.01
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
        assert!((kolmogorov_sf(0.2) - 1.0).abs() < 1e-6);
        // both branches agree at the switch point
        let lo = {
            let x: f64 = 0.3;
            let s = (2.0 * std::f64::consts::PI).sqrt() / x;
            let c: f64 = (1..=50)
                .map(|k| {
                    let kk = (2 * k - 1) as f64;
                    (-(kk * kk) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
                })
                .sum();
            1.0 - s * c
        };
        assert!((lo - kolmogorov_sf(0.3)).abs() < 1e-9);
    }

    #[test]
    fn uniform_grid_passes_ks() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.passes(0.01));
        let shifted: Vec<f64> = xs.iter().map(|x| x * 0.8).collect();
        assert!(!ks_one_sample(&shifted, |x| x.clamp(0.0, 1.0)).unwrap().passes(0.01));
    }

    #[test]
    fn two_sample_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert!((r.statistic - 0.2).abs() < 1e-12);
        assert!(!r.passes(0.01));
    }

    #[test]
    fn chi_square_flat_counts() {
        let (s, p) = chi_square_uniform(&[100, 100, 100, 100]).unwrap();
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = chi_square_uniform(&[400, 0, 0, 0]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }
}
