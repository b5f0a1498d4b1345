//! Independent numerical oracles for unit tests.

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // split into panels first so narrow features are not skipped
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = lo + h;
            let mid = 0.5 * (lo + hi);
            let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            simpson(&f, lo, hi, flo, fmid, fhi, whole, tol / panels as f64, 40)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`, by the trapezoid rule,
/// which converges geometrically for this analytic, rapidly decaying integrand.
pub fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    // work with exp(x) K_nu(x) to keep the integrand O(1) near t = 0
    let g = |t: f64| (-(x * (t.cosh() - 1.0)) + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
    let mut upper = 1.0;
    while g(upper) > 1e-18 * g(0.0).max(1e-300) || upper < 1.0 {
        upper += 0.5;
        if upper > 60.0 {
            break;
        }
    }
    let steps = 40_000;
    let h = upper / steps as f64;
    let mut sum = 0.5 * g(0.0) + 0.5 * g(upper);
    for i in 1..steps {
        sum += g(i as f64 * h);
    }
    sum * h * (-x).exp()
}
