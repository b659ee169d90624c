//! Small numerical helpers: deterministic summation, quadrature, log-factorials.

use crate::error::{Error, Result};

/// Pairwise summation in index order. Result depends only on the input slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (m, pairwise_sum(&dev) / (n - 1) as f64)
}

/// Standard error of the unbiased variance estimator, from the fourth central moment.
pub fn variance_stderr(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let d2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let d4: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
    let m2 = pairwise_sum(&d2) / n;
    let m4 = pairwise_sum(&d4) / n;
    ((m4 - m2 * m2) / n).max(0.0).sqrt()
}

pub fn ln_factorial(k: u64) -> f64 {
    if k < 256 {
        let mut s = 0.0;
        for i in 2..=k {
            s += (i as f64).ln();
        }
        s
    } else {
        let x = k as f64 + 1.0;
        // Stirling series for ln Gamma(x)
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
            + 1.0 / (1260.0 * x.powi(5))
    }
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Adaptive Simpson with interval bisection and Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Domain(format!("bad interval [{a}, {b}]")));
    }
    if b == a {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    // Seed with a few panels so narrow features are not skipped.
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    let mut value = 0.0;
    let mut error = 0.0;
    let mut ok = true;
    for p in 0..PANELS {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == PANELS { b } else { lo + h };
        let fa = f(lo);
        let fb = f(hi);
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        let (v, e) = simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, 48, &mut ok);
        value += v;
        error += e;
    }
    if !value.is_finite() {
        return Err(Error::Accuracy {
            requested: tol,
            achieved: f64::INFINITY,
        });
    }
    if !ok && error > tol {
        return Err(Error::Accuracy {
            requested: tol,
            achieved: error,
        });
    }
    Ok(Quadrature { value, error })
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    ok: &mut bool,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 && delta.abs() > 15.0 * tol {
            *ok = false;
        }
        return (left + right + delta / 15.0, delta.abs() / 15.0);
    }
    let (lv, le) = simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, ok);
    let (rv, re) = simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, ok);
    (lv + rv, le + re)
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner = pairwise_sum(&values[1..n - 1]);
            dt * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}
