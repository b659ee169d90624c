//! Closed forms for the linear Gaussian chain: Bessel functions, variance and
//! covariance integrals, taboo kernels, a Feynman-Kac sampler and the
//! discrete-time model.

use crate::error::{ensure_finite, Error, Result};
use crate::numeric::{adaptive_simpson, ln_binomial, ln_factorial};
use crate::rng::{self, Stream};
use serde::Serialize;

pub const BESSEL_CROSSOVER: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BesselMethod {
    Series,
    AsymptoticScaled,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BesselEval {
    pub order: u32,
    pub x: f64,
    /// e^{-x} I_nu(x)
    pub scaled: f64,
    pub method: BesselMethod,
    /// absolute error estimate on `scaled`
    pub error: f64,
}

impl BesselEval {
    pub fn value(&self) -> f64 {
        self.scaled * self.x.exp()
    }
}

fn check_order(nu: u32) -> Result<()> {
    if nu > 1 {
        return Err(Error::Domain(format!("Bessel order must be 0 or 1, got {nu}")));
    }
    Ok(())
}

/// Power series for e^{-x} I_nu(x).
pub fn bessel_scaled_series(nu: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = if nu == 0 { 1.0 } else { h };
    let mut sum = term;
    let q = h * h;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + nu as f64));
        sum += term;
        if term < 1e-17 * sum || k > 500.0 {
            break;
        }
    }
    sum * (-x).exp()
}

/// Large-x expansion of e^{-x} I_nu(x), truncated at its smallest term.
/// Returns the value and the size of the first omitted term.
pub fn bessel_scaled_asymptotic(nu: u32, x: f64) -> (f64, f64) {
    let mu = 4.0 * (nu * nu) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut omitted = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            omitted = next.abs();
            break;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-17 * sum.abs() {
            omitted = term.abs();
            break;
        }
    }
    let pre = 1.0 / (2.0 * std::f64::consts::PI * x).sqrt();
    (pre * sum, pre * omitted)
}

pub fn bessel_i_eval(nu: u32, x: f64) -> Result<BesselEval> {
    check_order(nu)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "Bessel argument must be finite and nonnegative, got {x}"
        )));
    }
    if x <= BESSEL_CROSSOVER {
        let scaled = bessel_scaled_series(nu, x);
        Ok(BesselEval {
            order: nu,
            x,
            scaled,
            method: BesselMethod::Series,
            error: 4e-16 * scaled,
        })
    } else {
        let (scaled, error) = bessel_scaled_asymptotic(nu, x);
        Ok(BesselEval {
            order: nu,
            x,
            scaled,
            method: BesselMethod::AsymptoticScaled,
            error,
        })
    }
}

/// e^{-x} I_nu(x); finite for every finite x >= 0.
pub fn bessel_i_scaled(nu: u32, x: f64) -> Result<f64> {
    Ok(bessel_i_eval(nu, x)?.scaled)
}

/// I_nu(x). Errors when the result overflows; use [`bessel_i_scaled`] there.
pub fn bessel_i(nu: u32, x: f64) -> Result<f64> {
    let e = bessel_i_eval(nu, x)?;
    let v = e.value();
    if !v.is_finite() {
        return Err(Error::Domain(format!("I_{nu}({x}) overflows; use the scaled form")));
    }
    Ok(v)
}

// unchecked scaled I_0 for integrands, x >= 0
#[inline]
fn i0s(x: f64) -> f64 {
    if x <= BESSEL_CROSSOVER {
        bessel_scaled_series(0, x)
    } else {
        bessel_scaled_asymptotic(0, x).0
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub error: f64,
}

fn check_u(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("mixture weight must lie in [0,1], got {u}")));
    }
    Ok(())
}

fn check_time(name: &str, t: f64) -> Result<()> {
    ensure_finite(name, t)?;
    if t < 0.0 {
        return Err(Error::Domain(format!("{name} must be nonnegative, got {t}")));
    }
    Ok(())
}

pub const VARIANCE_TOL: f64 = 1e-9;
pub const COVARIANCE_TOL: f64 = 1e-7;

/// Variance of the representative particle started at zero.
pub fn variance_u(t: f64, u: f64) -> Result<OracleValue> {
    check_time("t", t)?;
    check_u(u)?;
    let q = adaptive_simpson(
        |v| (-2.0 * v * (1.0 - u)).exp() * i0s(2.0 * u * v),
        0.0,
        t,
        VARIANCE_TOL * 0.01,
    )?;
    Ok(OracleValue {
        value: q.value,
        error: q.error,
    })
}

pub fn variance_u0_closed(t: f64) -> f64 {
    -0.5 * (-2.0 * t).exp_m1()
}

pub fn variance_u1_closed(t: f64) -> Result<f64> {
    check_time("t", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(t * (bessel_i_scaled(0, 2.0 * t)? + bessel_i_scaled(1, 2.0 * t)?))
}

pub fn stationary_variance(u: f64) -> Result<f64> {
    check_u(u)?;
    if u >= 1.0 {
        return Err(Error::Divergence("variance grows like sqrt(t) at u = 1".into()));
    }
    Ok(0.5 / (1.0 - u * u).sqrt())
}

/// E[X_s X_t] for the representative particle.
pub fn autocov(s: f64, t: f64, u: f64) -> Result<OracleValue> {
    check_time("s", s)?;
    check_time("t", t)?;
    check_u(u)?;
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    autocov_ordered(s, t, u, COVARIANCE_TOL * 0.01)
}

fn autocov_ordered(s: f64, t: f64, u: f64, tol: f64) -> Result<OracleValue> {
    let d = t - s;
    let q = adaptive_simpson(
        |v| {
            let z = 2.0 * u * ((d + v) * v).sqrt();
            (z - 2.0 * v - d).exp() * i0s(z)
        },
        0.0,
        s,
        tol,
    )?;
    Ok(OracleValue {
        value: q.value,
        error: q.error,
    })
}

/// E[X_s X~_t], where X~ is the neighbour of X.
pub fn crosscov(s: f64, t: f64, u: f64) -> Result<OracleValue> {
    check_time("s", s)?;
    check_time("t", t)?;
    check_u(u)?;
    if u == 0.0 || s == 0.0 {
        return Ok(OracleValue { value: 0.0, error: 0.0 });
    }
    let inner_tol = COVARIANCE_TOL * 1e-3 / s.max(1.0);
    let failed = std::cell::Cell::new(None);
    let q = adaptive_simpson(
        |v| {
            let (a, b) = if v <= t { (v, t) } else { (t, v) };
            match autocov_ordered(a, b, u, inner_tol) {
                Ok(c) => (-(s - v)).exp() * c.value,
                Err(e) => {
                    failed.set(Some(e.to_string()));
                    0.0
                }
            }
        },
        0.0,
        s,
        COVARIANCE_TOL * 0.1,
    )?;
    if let Some(msg) = failed.take() {
        return Err(Error::Domain(msg));
    }
    Ok(OracleValue {
        value: u * q.value,
        error: u * q.error + inner_tol * s,
    })
}

/// Variance of the repulsive pair at u = 1.
pub fn repulsive_variance(t: f64) -> Result<f64> {
    check_time("t", t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let x = 2.0 * t;
    let diff = bessel_i_scaled(0, x)? - bessel_i_scaled(1, x)?;
    // e^{2t} I(2t) = e^{4t} * scaled
    Ok((t.ln() + 2.0 * x + diff.ln()).exp())
}

/// u^k t^k e^{-t} / k!
pub fn taboo_kernel(k: u64, t: f64, u: f64) -> Result<f64> {
    check_time("t", t)?;
    check_u(u)?;
    if k == 0 {
        return Ok((-t).exp());
    }
    if u == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    Ok((kf * (u * t).ln() - t - ln_factorial(k)).exp())
}

fn sample_killed_chain(t: f64, u: f64, rng: &mut Stream, jumps: &mut Vec<f64>) -> f64 {
    // returns death time (INFINITY if alive at t); jump times pushed into `jumps`
    jumps.clear();
    let mut clock = 0.0;
    loop {
        clock += -rng::uniform(rng).ln_1p_neg();
        if clock >= t {
            return f64::INFINITY;
        }
        if rng::uniform(rng) < u {
            jumps.push(clock);
        } else {
            return clock;
        }
    }
}

trait Ln1pNeg {
    fn ln_1p_neg(self) -> f64;
}

impl Ln1pNeg for f64 {
    // ln(1 - x) for x in [0,1)
    fn ln_1p_neg(self) -> f64 {
        (-self).ln_1p()
    }
}

/// Time during [0,t] that two killed chains are both alive and in the same state.
fn coincidence(t: f64, a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> f64 {
    let end = t.min(a.1).min(b.1);
    let mut total = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let mut now = 0.0;
    while now < end {
        let na = a.0.get(i).copied().unwrap_or(f64::INFINITY);
        let nb = b.0.get(j).copied().unwrap_or(f64::INFINITY);
        let next = na.min(nb).min(end);
        if i == j {
            total += next - now;
        }
        if na <= next {
            i += 1;
        }
        if nb <= next {
            j += 1;
        }
        now = next;
    }
    total
}

/// One draw of X~_t through the killed-chain representation.
///
/// `chains` independent copies of the killed chain are simulated; given the
/// chains, the noise-stream integral is Gaussian with variance equal to the
/// pairwise coincidence time, averaged over distinct pairs.
pub fn feynman_kac_sample(t: f64, u: f64, chains: usize, rng: &mut Stream) -> Result<f64> {
    check_time("t", t)?;
    check_u(u)?;
    if chains < 2 {
        return Err(Error::Domain("at least two chain copies are needed".into()));
    }
    let mut buf = Vec::new();
    let paths: Vec<(Vec<f64>, f64)> = (0..chains)
        .map(|_| {
            let death = sample_killed_chain(t, u, rng, &mut buf);
            (buf.clone(), death)
        })
        .collect();
    let mut acc = 0.0;
    for a in 0..chains {
        for b in a + 1..chains {
            acc += coincidence(t, &paths[a], &paths[b]);
        }
    }
    let pairs = (chains * (chains - 1) / 2) as f64;
    Ok((acc / pairs).sqrt() * rng::normal(rng))
}

pub fn feynman_kac_samples(t: f64, u: f64, count: usize, chains: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, rng::AUX, 0, 0);
    (0..count).map(|_| feynman_kac_sample(t, u, chains, &mut rng)).collect()
}

fn check_discrete(a: f64, u: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a must lie in (0,1), got {a}")));
    }
    check_u(u)
}

fn ln_pow(base: f64, e: u64) -> f64 {
    if e == 0 {
        0.0
    } else {
        e as f64 * base.ln()
    }
}

/// E[X_n^2] for the discrete-time model with zero start and unit noise.
pub fn discrete_second_moment(n: u64, a: f64, u: f64) -> Result<f64> {
    check_discrete(a, u)?;
    let b = u * (1.0 - a);
    let mut total = 0.0;
    for k in 0..n {
        for l in 0..=k {
            if b == 0.0 && l > 0 {
                break;
            }
            let lt = 2.0 * ln_binomial(k, l) + 2.0 * ln_pow(b, l) + 2.0 * ln_pow(a, k - l);
            total += lt.exp();
        }
    }
    Ok(total)
}

/// The same moment as a sum of terminating hypergeometric series
/// sum_k a^{2k} 2F1(-k,-k;1; z), z = u^2 (1-a)^2 / a^2.
pub fn discrete_second_moment_hypergeometric(n: u64, a: f64, u: f64) -> Result<f64> {
    check_discrete(a, u)?;
    let z = (u * (1.0 - a) / a).powi(2);
    let mut total = 0.0;
    for k in 0..n {
        total += a.powi(2 * k as i32) * hyp2f1_terminating(k, z);
    }
    Ok(total)
}

/// 2F1(-k,-k;1;z) by its term ratio.
pub fn hyp2f1_terminating(k: u64, z: f64) -> f64 {
    let kf = k as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 0..k {
        let jf = j as f64;
        term *= (jf - kf) * (jf - kf) / ((jf + 1.0) * (jf + 1.0)) * z;
        sum += term;
    }
    sum
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of E[X_n^2] from the binomial-kernel representation.
pub fn simulate_discrete(n: u64, a: f64, u: f64, samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_discrete(a, u)?;
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let n = n as usize;
    let b = u * (1.0 - a);
    // coef[k][l] = C(k,l) b^l a^{k-l}
    let mut coef = vec![vec![0.0; n]; n];
    for k in 0..n {
        for l in 0..=k {
            coef[k][l] = (ln_binomial(k as u64, l as u64)).exp() * b.powi(l as i32) * a.powi((k - l) as i32);
        }
    }
    let mut rng = rng::stream(seed, rng::AUX, 1, 0);
    let mut eps = vec![0.0; n * n];
    let mut xs = Vec::with_capacity(samples);
    for _ in 0..samples {
        for e in eps.iter_mut() {
            *e = rng::normal(&mut rng);
        }
        let mut x = 0.0;
        for k in 0..n {
            for l in 0..=k {
                // eps_{n-k, l}
                x += coef[k][l] * eps[k * n + l];
            }
        }
        xs.push(x * x);
    }
    let (m, v) = crate::numeric::mean_var(&xs);
    Ok(MomentEstimate {
        value: m,
        stderr: (v / samples as f64).sqrt(),
        samples,
    })
}
