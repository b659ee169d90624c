//! Detecting u from a single observed path: Girsanov weights, a weighted
//! particle approximation of the conditional law of the hidden chain, the
//! conditional MLE, two closed-form estimators and a linear-filter oracle.

use crate::chain::grid_steps;
use crate::drift::{DriftKernel, MixtureWeight};
use crate::error::{Error, Result};
use crate::limit::{Closure, LawPath, NestedRun};
use crate::numeric::trapezoid;
use crate::paths::{initial_value, InitialLaw, PathSet};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::path::Path;

/// A single observed path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl ObservationPath {
    pub fn new(dt: f64, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Grid(format!("dt must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(Error::Grid("an observation needs at least two grid points".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: 0, step: i });
        }
        Ok(Self {
            dt,
            values,
            provenance: provenance.into(),
        })
    }

    pub fn from_paths(paths: &PathSet, row: usize, provenance: impl Into<String>) -> Result<Self> {
        if row >= paths.rows() {
            return Err(Error::Dimension(format!("row {row} out of {}", paths.rows())));
        }
        Self::new(paths.dt(), paths.row(row).to_vec(), provenance)
    }

    /// Reads `t,value` rows; the time column must be a uniform grid from 0.
    pub fn parse_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty observation file".into()))?;
        if header.replace(' ', "") != "t,value" {
            return Err(Error::Format(format!("expected header 't,value', got '{header}'")));
        }
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Format(format!("line {}: missing field", i + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 2)))
            };
            ts.push(parse(it.next())?);
            vs.push(parse(it.next())?);
        }
        if ts.len() < 2 {
            return Err(Error::Format("an observation needs at least two rows".into()));
        }
        let dt = ts[1] - ts[0];
        for (k, t) in ts.iter().enumerate() {
            if (t - k as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::Grid(format!("row {k}: time {t} is off the uniform grid")));
            }
        }
        if ts[0].abs() > 1e-12 {
            return Err(Error::Grid("observation must start at t = 0".into()));
        }
        Self::new(dt, vs, provenance)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, path.display().to_string())
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * (1.0 + t.abs()) || k < 0.0 || k as usize > self.steps() {
            return Err(Error::Grid(format!("t = {t} is not an observation time")));
        }
        Ok(k as usize)
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "t,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", k as f64 * self.dt, v)?;
        }
        Ok(())
    }
}

/// log Z_t^{-1} = Σ b ΔX - ½ Σ b² dt, left-point sums on the observation grid.
/// `drift` holds b at grid points; a trailing value at T is ignored.
pub fn girsanov_logweight(observation: &ObservationPath, drift: &[f64]) -> Result<Vec<f64>> {
    let steps = observation.steps();
    if drift.len() != steps && drift.len() != steps + 1 {
        return Err(Error::Grid(format!(
            "drift has {} values, observation has {} steps",
            drift.len(),
            steps
        )));
    }
    let dt = observation.dt;
    let x = &observation.values;
    let mut out = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 0..steps {
        let b = drift[k];
        acc += b * (x[k + 1] - x[k]) - 0.5 * b * b * dt;
        out.push(acc);
    }
    Ok(out)
}

/// Simulates level 1 of a truncated nested chain (depth `depth`, replica 0).
pub fn simulate_observation(
    kernel: &DriftKernel,
    u: MixtureWeight,
    law: &LawPath,
    closure: &Closure,
    initial: &InitialLaw,
    depth: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<ObservationPath> {
    let steps = grid_steps(dt, horizon)?;
    let run = NestedRun::prepare(kernel, u, law, closure, initial, depth, dt, steps, seed, 1)?;
    let mut out = Vec::new();
    run.replica(0, &mut |level, path| {
        if level == 1 {
            out = path.to_vec();
        }
        Ok(())
    })?;
    ObservationPath::new(
        dt,
        out,
        format!(
            "simulated u={} depth={depth} seed={seed} closure={}",
            u.get(),
            closure.name()
        ),
    )
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Hidden levels 2..=depth+1; the last one is the closure.
    pub depth: usize,
    pub particles: usize,
    pub closure: Closure,
    pub seed: u64,
    pub initial: InitialLaw,
    pub resample: bool,
    /// Resample when ESS / N drops below this.
    pub resample_threshold: f64,
    /// Degeneracy is reported the first time ESS / N drops below this.
    pub degeneracy_threshold: f64,
    /// Times at which the full weighted ensemble is kept; T is always kept.
    pub snapshots: Vec<f64>,
}

impl FilterConfig {
    pub fn new(depth: usize, particles: usize, seed: u64) -> Self {
        Self {
            depth,
            particles,
            closure: Closure::McKeanVlasov,
            seed,
            initial: InitialLaw::Point(0.0),
            resample: false,
            resample_threshold: 0.5,
            degeneracy_threshold: 0.01,
            snapshots: Vec::new(),
        }
    }
}

/// Hidden states and normalized weights at one time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    /// particle-major, `depth` values per particle
    pub states: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterEnsemble {
    pub dt: f64,
    pub depth: usize,
    pub particles: usize,
    pub u: f64,
    /// per grid time
    pub ess: Vec<f64>,
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// log ρ_t(1), including normalizers absorbed at resampling
    pub log_rho_one: Vec<f64>,
    /// π_t(b), π_t(X~ b), π_t(drift of X~); left-point, for the KS residual
    pub pi_b: Vec<f64>,
    pub pi_xb: Vec<f64>,
    pub pi_drift: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// terminal log-weights and per-particle likelihood statistics
    pub log_weights: Vec<f64>,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub degeneracy_time: Option<f64>,
    pub resample_count: usize,
}

impl FilterEnsemble {
    fn snapshot(&self, t: f64) -> Result<&Snapshot> {
        let k = (t / self.dt).round() as usize;
        self.snapshots
            .iter()
            .find(|s| s.step == k && (k as f64 * self.dt - t).abs() < 1e-9 * (1.0 + t))
            .ok_or_else(|| Error::Grid(format!("no snapshot recorded at t = {t}")))
    }

    /// π_t(φ) from the snapshot at t; φ sees the hidden levels 2..=depth+1.
    pub fn estimate(&self, t: f64, phi: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let s = self.snapshot(t)?;
        let d = self.depth;
        Ok(s.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * phi(&s.states[j * d..(j + 1) * d]))
            .sum())
    }

    /// Delta-method standard error of π_t(φ).
    pub fn estimate_stderr(&self, t: f64, phi: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let s = self.snapshot(t)?;
        let d = self.depth;
        let vals: Vec<f64> = (0..self.particles)
            .map(|j| phi(&s.states[j * d..(j + 1) * d]))
            .collect();
        let m: f64 = s.weights.iter().zip(&vals).map(|(w, v)| w * v).sum();
        Ok(s.weights
            .iter()
            .zip(&vals)
            .map(|(w, v)| w * w * (v - m) * (v - m))
            .sum::<f64>()
            .sqrt())
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        normalize(&self.log_weights).0
    }

    /// Kushner-Stratonovich residual path for φ(x~) = x~.
    pub fn ks_residual(&self, observation: &ObservationPath) -> Result<Vec<f64>> {
        let steps = self.mean.len() - 1;
        if observation.steps() != steps {
            return Err(Error::Grid("observation does not match the filter grid".into()));
        }
        let x = &observation.values;
        let dt = self.dt;
        let mut out = Vec::with_capacity(steps + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..steps {
            let gain = self.pi_xb[k] - self.mean[k] * self.pi_b[k];
            acc += self.pi_drift[k] * dt + gain * (x[k + 1] - x[k] - self.pi_b[k] * dt);
            out.push(self.mean[k + 1] - self.mean[0] - acc);
        }
        Ok(out)
    }
}

/// Normalized weights, ESS and the log of the mean unnormalized weight.
fn normalize(logw: &[f64]) -> (Vec<f64>, f64, f64) {
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    (w, ess, mx + (s / logw.len() as f64).ln())
}

/// Systematic resampling indices.
fn systematic(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let p = (i as f64 + offset) / n as f64;
        while p > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Weighted ensemble of hidden hierarchies simulated under the model with the
/// candidate u, weighted by the likelihood of the observed path.
///
/// Without resampling particle j reproduces replica j of a nested simulation
/// of depth `depth - 1` with the same seed.
pub fn particle_filter(
    observation: &ObservationPath,
    kernel: &DriftKernel,
    u: MixtureWeight,
    law: &LawPath,
    config: &FilterConfig,
) -> Result<FilterEnsemble> {
    let d = config.depth;
    let n = config.particles;
    if d == 0 {
        return Err(Error::Domain("filter depth must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Domain("need at least one particle".into()));
    }
    config.initial.validate()?;
    let dt = observation.dt;
    let steps = observation.steps();
    let run = NestedRun::prepare(
        kernel,
        u,
        law,
        &config.closure,
        &config.initial,
        d - 1,
        dt,
        steps,
        config.seed,
        d,
    )?;
    if let Closure::FrozenLaw(p) = &config.closure {
        if p.rows() == 0 || p.cols() != steps + 1 {
            return Err(Error::Grid("frozen law is not on the observation grid".into()));
        }
    }
    let mut snap_steps: Vec<usize> = config
        .snapshots
        .iter()
        .map(|&t| observation.index_of(t))
        .collect::<Result<_>>()?;
    snap_steps.push(steps);
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let uu = u.get();
    let sdt = dt.sqrt();
    let x = &observation.values;
    let mut noise: Vec<_> = (0..n)
        .flat_map(|j| (0..d).map(move |l| (j, l)))
        .map(|(j, l)| rng::stream(config.seed, rng::NOISE, j as u64, l as u64))
        .collect();
    let mut state = vec![0.0; n * d];
    let mut frozen_row = vec![0usize; n];
    for j in 0..n {
        for l in 0..d {
            state[j * d + l] = initial_value(&config.initial, config.seed, j as u64, l as u64);
        }
        if let Closure::FrozenLaw(p) = &config.closure {
            let mut s = rng::stream(config.seed, rng::RESAMPLE, j as u64, (d - 1) as u64);
            frozen_row[j] = rng::index_below(&mut s, p.rows());
            state[j * d + d - 1] = p.value(frozen_row[j], 0);
        }
    }
    let mut next = state.clone();
    let mut logw = vec![0.0; n];
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut log_norm = 0.0;
    let mut resample_rng = rng::stream(config.seed, rng::AUX, 5, 0);
    let mut out = FilterEnsemble {
        dt,
        depth: d,
        particles: n,
        u: uu,
        ess: Vec::with_capacity(steps + 1),
        mean: Vec::with_capacity(steps + 1),
        mean_stderr: Vec::with_capacity(steps + 1),
        second_moment: Vec::with_capacity(steps + 1),
        log_rho_one: Vec::with_capacity(steps + 1),
        pi_b: Vec::with_capacity(steps),
        pi_xb: Vec::with_capacity(steps),
        pi_drift: Vec::with_capacity(steps),
        snapshots: Vec::new(),
        log_weights: Vec::new(),
        numerator: Vec::new(),
        denominator: Vec::new(),
        degeneracy_time: None,
        resample_count: 0,
    };
    let mut b = vec![0.0; n];
    let mut drift2 = vec![0.0; n];
    let mut next_snap = 0;

    for k in 0..=steps {
        let (w, ess, log_mean) = normalize(&logw);
        out.ess.push(ess);
        out.log_rho_one.push(log_norm + log_mean);
        if out.degeneracy_time.is_none() && ess < config.degeneracy_threshold * n as f64 {
            out.degeneracy_time = Some(k as f64 * dt);
        }
        let m: f64 = (0..n).map(|j| w[j] * state[j * d]).sum();
        let m2: f64 = (0..n).map(|j| w[j] * state[j * d] * state[j * d]).sum();
        let se: f64 = (0..n)
            .map(|j| w[j] * w[j] * (state[j * d] - m).powi(2))
            .sum::<f64>()
            .sqrt();
        out.mean.push(m);
        out.second_moment.push(m2);
        out.mean_stderr.push(se);
        if next_snap < snap_steps.len() && snap_steps[next_snap] == k {
            out.snapshots.push(Snapshot {
                step: k,
                states: state.clone(),
                weights: w.clone(),
            });
            next_snap += 1;
        }
        if k == steps {
            break;
        }

        let xk = x[k];
        let dx = x[k + 1] - xk;
        let bbar = run.mean_field(k, xk)?;
        for j in 0..n {
            let row = &state[j * d..(j + 1) * d];
            let xt = row[0];
            b[j] = run.level_drift(k, xk, xt)?;
            // b = bbar + u c
            let c = if kernel.is_zero() {
                0.0
            } else {
                match kernel.affine_coeffs() {
                    Some((a_x, a_y, cc)) => a_x * xk + a_y * xt + cc,
                    None => kernel.eval(k as f64 * dt, xk, xt)?,
                }
            } - bbar;
            num[j] += c * dx - bbar * c * dt;
            den[j] += c * c * dt;
            logw[j] += b[j] * dx - 0.5 * b[j] * b[j] * dt;
            drift2[j] = if d == 1 {
                run.closure_drift(k, xt)?
            } else {
                run.level_drift(k, xt, row[1])?
            };
            for l in 0..d {
                let v = row[l];
                let nv = if l + 1 < d {
                    v + dt * run.level_drift(k, v, row[l + 1])? + sdt * rng::normal(&mut noise[j * d + l])
                } else {
                    match &config.closure {
                        Closure::FrozenLaw(p) => p.value(frozen_row[j], k + 1),
                        Closure::McKeanVlasov => {
                            v + dt * run.closure_drift(k, v)? + sdt * rng::normal(&mut noise[j * d + l])
                        }
                        Closure::IndependentBm => v + sdt * rng::normal(&mut noise[j * d + l]),
                    }
                };
                next[j * d + l] = nv;
            }
        }
        out.pi_b.push((0..n).map(|j| w[j] * b[j]).sum());
        out.pi_xb.push((0..n).map(|j| w[j] * state[j * d] * b[j]).sum());
        out.pi_drift.push((0..n).map(|j| w[j] * drift2[j]).sum());
        std::mem::swap(&mut state, &mut next);
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i / d,
                step: k + 1,
            });
        }

        if config.resample {
            let (w, ess, log_mean) = normalize(&logw);
            if ess < config.resample_threshold * n as f64 {
                let idx = systematic(&w, rng::uniform(&mut resample_rng));
                let old_state = state.clone();
                let (old_num, old_den, old_row) = (num.clone(), den.clone(), frozen_row.clone());
                for (j, &src) in idx.iter().enumerate() {
                    state[j * d..(j + 1) * d].copy_from_slice(&old_state[src * d..(src + 1) * d]);
                    num[j] = old_num[src];
                    den[j] = old_den[src];
                    frozen_row[j] = old_row[src];
                }
                log_norm += log_mean;
                logw.iter_mut().for_each(|l| *l = 0.0);
                out.resample_count += 1;
            }
        }
    }
    out.log_weights = logw;
    out.numerator = num;
    out.denominator = den;
    Ok(out)
}

/// Conditional mean and covariance of the hidden linear chain.
#[derive(Debug, Clone)]
pub struct KalmanBucy {
    pub dt: f64,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl KalmanBucy {
    pub fn mean_first(&self, k: usize) -> f64 {
        self.means[k][0]
    }

    pub fn variance_first(&self, k: usize) -> f64 {
        self.covariances[k][(0, 0)]
    }
}

/// Exact filter for the truncated linear chain with centred initial data.
/// Hidden state (levels 2..=depth+1) solves dY = A Y dt + dB with
/// A = -I + u·superdiagonal; the last row is -1 on the diagonal for a
/// mean-field closure and 0 for a Brownian one. The observation obeys
/// dX + X dt = u Y_1 dt + dW.
pub fn kalman_bucy_oracle(
    depth: usize,
    u: MixtureWeight,
    closure: &Closure,
    prior_variance: f64,
    observation: &ObservationPath,
) -> Result<KalmanBucy> {
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    if !(prior_variance >= 0.0) {
        return Err(Error::Domain("prior variance must be nonnegative".into()));
    }
    let u = u.get();
    let d = depth;
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d - 1 {
        a[(i, i)] = -1.0;
        a[(i, i + 1)] = u;
    }
    a[(d - 1, d - 1)] = match closure {
        Closure::McKeanVlasov => -1.0,
        Closure::IndependentBm => 0.0,
        Closure::FrozenLaw(_) => return Err(Error::Domain("the linear oracle needs a Gaussian closure".into())),
    };
    let mut h = DMatrix::<f64>::zeros(1, d);
    h[(0, 0)] = u;
    let ht = h.transpose();
    let hth = &ht * &h;
    let riccati =
        |p: &DMatrix<f64>| -> DMatrix<f64> { &a * p + p * a.transpose() + DMatrix::identity(d, d) - p * &hth * p };

    let sub = 10;
    let dt = observation.dt;
    let hstep = dt / sub as f64;
    let x = &observation.values;
    let mut m = DVector::<f64>::zeros(d);
    let mut p = DMatrix::<f64>::identity(d, d) * prior_variance;
    let mut means = Vec::with_capacity(x.len());
    let mut covs = Vec::with_capacity(x.len());
    means.push(m.clone());
    covs.push(p.clone());
    for k in 0..observation.steps() {
        let dy = x[k + 1] - x[k] + x[k] * dt;
        for _ in 0..sub {
            let gain = &p * &ht;
            let innov = dy / sub as f64 - (&h * &m)[(0, 0)] * hstep;
            m = &m + &a * &m * hstep + gain * innov;
            let k1 = riccati(&p);
            let k2 = riccati(&(&p + &k1 * (0.5 * hstep)));
            let k3 = riccati(&(&p + &k2 * (0.5 * hstep)));
            let k4 = riccati(&(&p + &k3 * hstep));
            p = &p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hstep / 6.0);
        }
        if !p.iter().all(|v| v.is_finite()) || !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence(format!("Riccati solution blew up at step {}", k + 1)));
        }
        means.push(m.clone());
        covs.push(p.clone());
    }
    Ok(KalmanBucy {
        dt,
        means,
        covariances: covs,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EstimatorStatistics {
    /// (1/T) ∫ X² dt
    pub mean_square: f64,
    pub terminal_square: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ScanPoint {
    pub candidate: f64,
    pub estimate: f64,
    pub final_ess: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EstimatorResult {
    pub method: String,
    /// clamped to [0, 1]
    pub estimate: f64,
    pub raw: f64,
    pub statistics: EstimatorStatistics,
    pub flags: Vec<String>,
    pub scan: Vec<ScanPoint>,
}

fn statistics(observation: &ObservationPath) -> Result<EstimatorStatistics> {
    let sq: Vec<f64> = observation.values.iter().map(|v| v * v).collect();
    let horizon = observation.horizon();
    Ok(EstimatorStatistics {
        mean_square: trapezoid(&sq, observation.dt) / horizon,
        terminal_square: *sq.last().unwrap(),
        horizon,
    })
}

fn clamp_unit(raw: f64, flags: &mut Vec<String>) -> f64 {
    if raw < 0.0 {
        flags.push("clamped_below".into());
        0.0
    } else if raw > 1.0 {
        flags.push("clamped_above".into());
        1.0
    } else {
        raw
    }
}

/// û_m = 1 - (T - X_T²) / (2 ∫ X² dt)
pub fn modified_estimator(observation: &ObservationPath) -> Result<EstimatorResult> {
    let s = statistics(observation)?;
    let integral = s.mean_square * s.horizon;
    if !(integral > 0.0) {
        return Err(Error::Degenerate("∫X² dt vanishes".into()));
    }
    let raw = 1.0 - (s.horizon - s.terminal_square) / (2.0 * integral);
    let mut flags = Vec::new();
    let estimate = clamp_unit(raw, &mut flags);
    Ok(EstimatorResult {
        method: "modified".into(),
        estimate,
        raw,
        statistics: s,
        flags,
        scan: Vec::new(),
    })
}

/// û_M = sqrt(1 - s^{-2}) with s = (2/T) ∫ X² dt
pub fn moments_estimator(observation: &ObservationPath) -> Result<EstimatorResult> {
    let st = statistics(observation)?;
    let s = 2.0 * st.mean_square;
    let bracket = 1.0 - 1.0 / (s * s);
    let mut flags = Vec::new();
    let (estimate, raw) = if s < 1.0 || !bracket.is_finite() {
        flags.push("clamped_below".into());
        (0.0, bracket)
    } else {
        (bracket.sqrt(), bracket.sqrt())
    };
    Ok(EstimatorResult {
        method: "moments".into(),
        estimate,
        raw,
        statistics: st,
        flags,
        scan: Vec::new(),
    })
}

/// Ratio of weighted likelihood statistics for one filter run.
pub fn cmle_ratio(filter: &FilterEnsemble) -> Result<f64> {
    let w = filter.normalized_weights();
    let den: f64 = w.iter().zip(&filter.denominator).map(|(a, b)| a * b).sum();
    if !(den > 0.0) {
        return Err(Error::Degenerate(
            "conditional expectation of ∫c² dt is not positive".into(),
        ));
    }
    let num: f64 = w.iter().zip(&filter.numerator).map(|(a, b)| a * b).sum();
    Ok(num / den)
}

pub fn default_candidates() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// Runs the filter at each candidate u and returns the estimate whose
/// candidate it reproduces most closely.
pub fn conditional_mle(
    observation: &ObservationPath,
    kernel: &DriftKernel,
    law: &LawPath,
    config: &FilterConfig,
    candidates: &[f64],
) -> Result<EstimatorResult> {
    if candidates.is_empty() {
        return Err(Error::Domain("empty candidate grid".into()));
    }
    let mut scan = Vec::with_capacity(candidates.len());
    for &c in candidates {
        // no mean field exists at u = 1
        let f = if c == 1.0 && matches!(config.closure, Closure::McKeanVlasov) {
            let bm = FilterConfig {
                closure: Closure::IndependentBm,
                ..config.clone()
            };
            particle_filter(observation, kernel, MixtureWeight::new(c)?, law, &bm)?
        } else {
            particle_filter(observation, kernel, MixtureWeight::new(c)?, law, config)?
        };
        let est = cmle_ratio(&f)?;
        scan.push(ScanPoint {
            candidate: c,
            estimate: est,
            final_ess: *f.ess.last().unwrap(),
        });
    }
    let best = scan
        .iter()
        .min_by(|a, b| {
            (a.estimate - a.candidate)
                .abs()
                .total_cmp(&(b.estimate - b.candidate).abs())
        })
        .unwrap();
    let raw = best.estimate;
    let mut flags = Vec::new();
    let estimate = clamp_unit(raw, &mut flags);
    if scan
        .iter()
        .any(|s| s.final_ess < config.degeneracy_threshold * config.particles as f64)
    {
        flags.push("weight_degeneracy".into());
    }
    Ok(EstimatorResult {
        method: "cmle".into(),
        estimate,
        raw,
        statistics: statistics(observation)?,
        flags,
        scan,
    })
}
