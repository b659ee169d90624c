//! The representative limit pair: truncated nested chains, Picard iteration of
//! the law map, and the Poisson-kernel construction of the linear case.

use crate::chain::grid_steps;
use crate::drift::{DriftKernel, MixtureWeight};
use crate::error::{Error, Result};
use crate::measures::{pathspace_distance, PathDistance};
use crate::numeric::{ln_factorial, pairwise_sum};
use crate::oracle::taboo_kernel;
use crate::paths::{initial_value, InitialLaw, PathSet};
use crate::rng;
use rayon::prelude::*;
use std::sync::Arc;

/// What sits at level D+1 of a truncated chain.
#[derive(Debug, Clone)]
pub enum Closure {
    /// The u = 0 equation, driven by the marginal law.
    McKeanVlasov,
    /// A standard Brownian motion started from the initial law.
    IndependentBm,
    /// Paths resampled from a supplied law on the simulation grid.
    FrozenLaw(Arc<PathSet>),
}

impl Closure {
    pub fn name(&self) -> &'static str {
        match self {
            Closure::McKeanVlasov => "mckean_vlasov",
            Closure::IndependentBm => "independent_bm",
            Closure::FrozenLaw(_) => "frozen_law",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mckean_vlasov" => Ok(Closure::McKeanVlasov),
            "independent_bm" => Ok(Closure::IndependentBm),
            other => Err(Error::Config(format!(
                "unknown closure '{other}' (frozen_law needs a law file)"
            ))),
        }
    }
}

/// Time-indexed law entering the mean-field term.
#[derive(Debug, Clone)]
pub enum LawPath {
    /// No law; only allowed at u = 1 without a mean-field closure.
    Absent,
    /// Mean on the simulation grid; affine kernels only.
    Mean(Arc<Vec<f64>>),
    /// Sample paths on the simulation grid.
    Ensemble(Arc<PathSet>),
}

impl LawPath {
    /// Mean of the Euler scheme for an affine kernel, m_{k+1} = m_k + dt((a_x + a_y) m_k + c).
    pub fn affine_mean(kernel: &DriftKernel, initial: &InitialLaw, dt: f64, steps: usize) -> Result<Self> {
        let (a_x, a_y, c) = kernel
            .affine_coeffs()
            .ok_or_else(|| Error::InvalidLaw("an analytic mean exists only for affine kernels".into()))?;
        let mut m = Vec::with_capacity(steps + 1);
        let mut v = initial.mean();
        m.push(v);
        for _ in 0..steps {
            v += dt * ((a_x + a_y) * v + c);
            m.push(v);
        }
        Ok(LawPath::Mean(Arc::new(m)))
    }

    pub fn ensemble(p: PathSet) -> Self {
        LawPath::Ensemble(Arc::new(p))
    }
}

/// Mean-field integrals on a fixed grid.
pub(crate) struct MeanField<'a> {
    kernel: &'a DriftKernel,
    affine: Option<(f64, f64, f64)>,
    means: Vec<f64>,
    // time-major copy of the law for general kernels
    columns: Vec<f64>,
    rows: usize,
    dt: f64,
}

impl<'a> MeanField<'a> {
    pub(crate) fn new(kernel: &'a DriftKernel, law: &LawPath, dt: f64, steps: usize) -> Result<Option<Self>> {
        let affine = kernel.affine_coeffs();
        match law {
            LawPath::Absent => Ok(None),
            LawPath::Mean(m) => {
                if affine.is_none() {
                    return Err(Error::InvalidLaw(
                        "a mean alone determines the mean field only for affine kernels".into(),
                    ));
                }
                if m.len() != steps + 1 {
                    return Err(Error::Grid(format!(
                        "mean path has {} points, grid has {}",
                        m.len(),
                        steps + 1
                    )));
                }
                Ok(Some(Self {
                    kernel,
                    affine,
                    means: m.to_vec(),
                    columns: Vec::new(),
                    rows: 0,
                    dt,
                }))
            }
            LawPath::Ensemble(p) => {
                if p.rows() == 0 {
                    return Err(Error::InvalidLaw("empty law ensemble".into()));
                }
                if p.cols() != steps + 1 || (p.dt() - dt).abs() > 1e-12 * dt {
                    return Err(Error::Grid("law ensemble is not on the simulation grid".into()));
                }
                let means: Vec<f64> = (0..p.cols())
                    .map(|k| pairwise_sum(&p.column(k)) / p.rows() as f64)
                    .collect();
                let columns = if affine.is_none() {
                    let mut c = Vec::with_capacity(p.rows() * p.cols());
                    for k in 0..p.cols() {
                        c.extend(p.column(k));
                    }
                    c
                } else {
                    Vec::new()
                };
                Ok(Some(Self {
                    kernel,
                    affine,
                    means,
                    columns,
                    rows: p.rows(),
                    dt,
                }))
            }
        }
    }

    #[inline]
    pub(crate) fn at(&self, k: usize, x: f64) -> Result<f64> {
        if let Some((a_x, a_y, c)) = self.affine {
            return Ok(a_x * x + a_y * self.means[k] + c);
        }
        let col = &self.columns[k * self.rows..(k + 1) * self.rows];
        let t = k as f64 * self.dt;
        let mut acc = 0.0;
        for &y in col {
            acc += self.kernel.eval(t, x, y)?;
        }
        Ok(acc / self.rows as f64)
    }
}

#[derive(Debug, Clone)]
pub struct NestedConfig {
    pub depth: usize,
    pub replicas: usize,
    pub closure: Closure,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Levels 1..=record_levels are kept.
    pub record_levels: usize,
    /// Keep every `record_stride`-th grid point.
    pub record_stride: usize,
    pub memory_budget: u64,
}

impl NestedConfig {
    pub fn new(depth: usize, replicas: usize, closure: Closure, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            depth,
            replicas,
            closure,
            dt,
            horizon,
            seed,
            initial: InitialLaw::Point(0.0),
            record_levels: 2,
            record_stride: 1,
            memory_budget: crate::chain::DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<usize> {
        if self.depth == 0 {
            return Err(Error::Domain("depth must be at least 1".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Domain("replicas must be at least 1".into()));
        }
        if self.record_levels == 0 || self.record_levels > self.depth + 1 {
            return Err(Error::Domain(format!(
                "record_levels must lie in 1..={}",
                self.depth + 1
            )));
        }
        self.initial.validate()?;
        let steps = grid_steps(self.dt, self.horizon)?;
        if self.record_stride == 0 || steps % self.record_stride != 0 {
            return Err(Error::Grid(format!(
                "record stride {} does not divide {steps} steps",
                self.record_stride
            )));
        }
        if let Closure::FrozenLaw(p) = &self.closure {
            if p.rows() == 0 {
                return Err(Error::InvalidLaw("frozen-law closure with an empty law".into()));
            }
            if p.cols() != steps + 1 || (p.dt() - self.dt).abs() > 1e-12 * self.dt {
                return Err(Error::Grid("frozen law is not on the simulation grid".into()));
            }
        }
        let cols = steps / self.record_stride + 1;
        let required = (self.replicas as u64)
            .saturating_mul(self.record_levels as u64)
            .saturating_mul(cols as u64)
            .saturating_mul(8);
        if required > self.memory_budget {
            return Err(Error::Capacity {
                required,
                budget: self.memory_budget,
            });
        }
        Ok(steps)
    }
}

/// Recorded levels 1..=record_levels of a nested simulation.
#[derive(Debug, Clone)]
pub struct NestedEnsemble {
    pub levels: Vec<PathSet>,
    pub closure: String,
    pub seed: u64,
    pub depth: usize,
}

impl NestedEnsemble {
    pub fn pair(&self) -> (&PathSet, &PathSet) {
        (&self.levels[0], &self.levels[1])
    }
}

pub(crate) struct NestedRun<'a> {
    pub kernel: &'a DriftKernel,
    pub u: f64,
    pub mf: Option<MeanField<'a>>,
    pub closure: &'a Closure,
    pub initial: &'a InitialLaw,
    pub depth: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    /// Levels above this are skipped when u = 0.
    pub needed_levels: usize,
}

impl<'a> NestedRun<'a> {
    pub(crate) fn prepare(
        kernel: &'a DriftKernel,
        u: MixtureWeight,
        law: &LawPath,
        closure: &'a Closure,
        initial: &'a InitialLaw,
        depth: usize,
        dt: f64,
        steps: usize,
        seed: u64,
        needed_levels: usize,
    ) -> Result<Self> {
        let u = u.get();
        let mf = MeanField::new(kernel, law, dt, steps)?;
        if u < 1.0 && mf.is_none() && !kernel.is_zero() {
            return Err(Error::InvalidLaw("a marginal law is required when u < 1".into()));
        }
        if matches!(closure, Closure::McKeanVlasov) {
            if u == 1.0 {
                return Err(Error::Domain("the mckean_vlasov closure is disabled at u = 1".into()));
            }
            if mf.is_none() && !kernel.is_zero() {
                return Err(Error::InvalidLaw(
                    "the mckean_vlasov closure needs a marginal law".into(),
                ));
            }
        }
        Ok(Self {
            kernel,
            u,
            mf,
            closure,
            initial,
            depth,
            dt,
            steps,
            seed,
            needed_levels,
        })
    }

    #[inline]
    pub(crate) fn mean_field(&self, k: usize, x: f64) -> Result<f64> {
        match &self.mf {
            Some(m) => m.at(k, x),
            None => Ok(0.0),
        }
    }

    /// u b~(x, y) + (1 - u) ∫ b~(x, z) m_k(dz) at grid index k.
    #[inline]
    pub(crate) fn level_drift(&self, k: usize, x: f64, y: f64) -> Result<f64> {
        let mut b = 0.0;
        if self.u > 0.0 {
            b += self.u
                * match self.kernel.affine_coeffs() {
                    Some((a_x, a_y, c)) => a_x * x + a_y * y + c,
                    None => self.kernel.eval(k as f64 * self.dt, x, y)?,
                };
        }
        if self.u < 1.0 {
            b += (1.0 - self.u) * self.mean_field(k, x)?;
        }
        Ok(b)
    }

    /// Drift of the closing level; zero for a Brownian closure.
    #[inline]
    pub(crate) fn closure_drift(&self, k: usize, x: f64) -> Result<f64> {
        match self.closure {
            Closure::McKeanVlasov => self.mean_field(k, x),
            _ => Ok(0.0),
        }
    }

    /// Simulates one replica from level depth+1 down to 1, handing each level to `sink`.
    pub(crate) fn replica(&self, replica: u64, sink: &mut dyn FnMut(usize, &[f64]) -> Result<()>) -> Result<()> {
        let cols = self.steps + 1;
        let sdt = self.dt.sqrt();
        let top = self.depth + 1;
        let mut next = vec![0.0; cols];
        let mut cur = vec![0.0; cols];
        let skip_above = if self.u == 0.0 { self.needed_levels } else { top };
        let closure_level = top;
        if closure_level <= skip_above {
            let idx = (closure_level - 1) as u64;
            match self.closure {
                Closure::IndependentBm => {
                    let mut s = rng::stream(self.seed, rng::NOISE, replica, idx);
                    next[0] = initial_value(self.initial, self.seed, replica, idx);
                    for k in 0..self.steps {
                        next[k + 1] = next[k] + sdt * rng::normal(&mut s);
                    }
                }
                Closure::McKeanVlasov => {
                    let mut s = rng::stream(self.seed, rng::NOISE, replica, idx);
                    next[0] = initial_value(self.initial, self.seed, replica, idx);
                    for k in 0..self.steps {
                        let b = self.closure_drift(k, next[k])?;
                        next[k + 1] = next[k] + self.dt * b + sdt * rng::normal(&mut s);
                    }
                }
                Closure::FrozenLaw(p) => {
                    let mut s = rng::stream(self.seed, rng::RESAMPLE, replica, idx);
                    let r = rng::index_below(&mut s, p.rows());
                    next.copy_from_slice(p.row(r));
                }
            }
            sink(closure_level, &next)?;
        }
        for level in (1..top).rev() {
            if level > skip_above {
                continue;
            }
            let idx = (level - 1) as u64;
            let mut s = rng::stream(self.seed, rng::NOISE, replica, idx);
            cur[0] = initial_value(self.initial, self.seed, replica, idx);
            for k in 0..self.steps {
                let x = cur[k];
                let b = self.level_drift(k, x, next[k])?;
                cur[k + 1] = x + self.dt * b + sdt * rng::normal(&mut s);
            }
            if !cur[self.steps].is_finite() {
                return Err(Error::NonFinite {
                    index: level,
                    step: self.steps,
                });
            }
            sink(level, &cur)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(())
    }
}

/// Simulates the truncated nested chain and returns the recorded levels; the
/// first two are the pair (X, X~).
pub fn solve_nested_pair(
    config: &NestedConfig,
    kernel: &DriftKernel,
    u: MixtureWeight,
    law: &LawPath,
) -> Result<NestedEnsemble> {
    let steps = config.validate()?;
    let run = NestedRun::prepare(
        kernel,
        u,
        law,
        &config.closure,
        &config.initial,
        config.depth,
        config.dt,
        steps,
        config.seed,
        config.record_levels,
    )?;
    let stride = config.record_stride;
    let cols = steps / stride + 1;
    let rec = config.record_levels;
    let per_replica: Vec<Vec<f64>> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut out = vec![0.0; rec * cols];
            run.replica(r as u64, &mut |level, path| {
                if level <= rec {
                    let dst = &mut out[(level - 1) * cols..level * cols];
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = path[c * stride];
                    }
                }
                Ok(())
            })?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let dt = config.dt * stride as f64;
    let mut levels = Vec::with_capacity(rec);
    for l in 0..rec {
        let mut data = Vec::with_capacity(config.replicas * cols);
        for r in &per_replica {
            data.extend_from_slice(&r[l * cols..(l + 1) * cols]);
        }
        levels.push(PathSet::new(config.replicas, cols, dt, data)?);
    }
    Ok(NestedEnsemble {
        levels,
        closure: config.closure.name().into(),
        seed: config.seed,
        depth: config.depth,
    })
}

/// N equally weighted paths; `generation` counts Picard steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LawEnsemble {
    pub paths: PathSet,
    pub generation: u64,
    pub closure: String,
    pub seed: u64,
}

impl LawEnsemble {
    /// Paths frozen at independent draws from the initial law; the usual starting point.
    pub fn constant_initial(initial: &InitialLaw, replicas: usize, dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        initial.validate()?;
        if replicas == 0 {
            return Err(Error::Domain("replicas must be at least 1".into()));
        }
        let steps = grid_steps(dt, horizon)?;
        let mut data = Vec::with_capacity(replicas * (steps + 1));
        for i in 0..replicas {
            let x0 = initial_value(initial, seed, 0, i as u64);
            data.extend(std::iter::repeat(x0).take(steps + 1));
        }
        Ok(Self {
            paths: PathSet::new(replicas, steps + 1, dt, data)?,
            generation: 0,
            closure: "initial".into(),
            seed,
        })
    }
}

/// One application of the law map: each replica draws X~ from `law` with
/// replacement (never its own index), and solves the equation for X with the
/// law's empirical mean field and fresh noise.
pub fn picard_map(
    law: &LawEnsemble,
    kernel: &DriftKernel,
    u: MixtureWeight,
    seed: u64,
    initial: &InitialLaw,
) -> Result<LawEnsemble> {
    let p = &law.paths;
    let n = p.rows();
    if n == 0 {
        return Err(Error::InvalidLaw("empty law".into()));
    }
    initial.validate()?;
    let steps = p.steps();
    let dt = p.dt();
    let law_path = LawPath::Ensemble(Arc::new(p.clone()));
    let mf = MeanField::new(kernel, &law_path, dt, steps)?.expect("ensemble law");
    let uu = u.get();
    let sdt = dt.sqrt();
    let affine = kernel.affine_coeffs();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut pick = rng::stream(seed, rng::RESAMPLE, 0, i as u64);
            let j = if n == 1 {
                0
            } else {
                let r = rng::index_below(&mut pick, n - 1);
                if r >= i {
                    r + 1
                } else {
                    r
                }
            };
            let tilde = p.row(j);
            let mut s = rng::stream(seed, rng::NOISE, 0, i as u64);
            let mut x = vec![0.0; steps + 1];
            x[0] = initial_value(initial, seed, 0, i as u64);
            for k in 0..steps {
                let xk = x[k];
                let mut b = 0.0;
                if uu > 0.0 {
                    b += uu
                        * match affine {
                            Some((a_x, a_y, c)) => a_x * xk + a_y * tilde[k] + c,
                            None => kernel.eval(k as f64 * dt, xk, tilde[k])?,
                        };
                }
                if uu < 1.0 {
                    b += (1.0 - uu) * mf.at(k, xk)?;
                }
                x[k + 1] = xk + dt * b + sdt * rng::normal(&mut s);
            }
            if !x[steps].is_finite() {
                return Err(Error::NonFinite { index: i, step: steps });
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(LawEnsemble {
        paths: PathSet::new(n, steps + 1, dt, data)?,
        generation: law.generation + 1,
        closure: "picard".into(),
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    pub replicas: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Reuse noise and resampling draws across iterations.
    pub common_noise: bool,
    /// Apply the ∧1 truncation in the path-space distance.
    pub truncate: bool,
}

impl PicardConfig {
    pub fn new(replicas: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-3,
            replicas,
            dt,
            horizon,
            seed,
            initial: InitialLaw::Point(0.0),
            common_noise: true,
            truncate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub law: LawEnsemble,
    /// d_k = D(Φ^{k+1} m, Φ^k m), k = 0, 1, ...
    pub trace: Vec<f64>,
    pub distances: Vec<PathDistance>,
}

pub fn picard_solve(config: &PicardConfig, kernel: &DriftKernel, u: MixtureWeight) -> Result<PicardOutcome> {
    if !(config.tolerance > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if config.max_iter == 0 {
        return Err(Error::Domain("max_iter must be at least 1".into()));
    }
    let mut law =
        LawEnsemble::constant_initial(&config.initial, config.replicas, config.dt, config.horizon, config.seed)?;
    let mut trace = Vec::new();
    let mut distances = Vec::new();
    for it in 0..config.max_iter {
        let seed = if config.common_noise {
            config.seed
        } else {
            config.seed.wrapping_add(it as u64 + 1)
        };
        let next = picard_map(&law, kernel, u, seed, &config.initial)?;
        let d = pathspace_distance(&next.paths, &law.paths, config.truncate)?;
        trace.push(d.value);
        distances.push(d);
        law = next;
        if trace[it] <= config.tolerance {
            return Ok(PicardOutcome { law, trace, distances });
        }
    }
    Err(Error::Convergence { trace })
}

/// Paths of X~_t = Σ_{k<K} ∫ p_{0,k}(t-s; u) dW_{s,k} on a grid.
#[derive(Debug, Clone)]
pub struct PoissonKernelPaths {
    pub paths: PathSet,
    /// sup over the grid of the taboo mass beyond K
    pub tail: f64,
    pub terms: usize,
}

/// max_{t ≤ T} Σ_{k ≥ K} p_{0,k}(t; u)
pub fn taboo_tail(u: f64, horizon: f64, k_terms: usize) -> f64 {
    // e^{-(1-u)t} P(Poisson(ut) ≥ K) is bounded by its value with the Poisson factor at t = T
    let lam = u * horizon;
    if lam == 0.0 {
        return if k_terms == 0 { 1.0 } else { 0.0 };
    }
    let mut tail = 0.0;
    for k in k_terms..k_terms + 400 {
        let kf = k as f64;
        tail += (kf * lam.ln() - lam - ln_factorial(k as u64)).exp();
    }
    tail.min(1.0)
}

pub fn required_terms(u: f64, horizon: f64, tol: f64) -> usize {
    let mut k = 1;
    while taboo_tail(u, horizon, k) > tol && k < 10_000 {
        k += 1;
    }
    k
}

/// Builds X~ exactly in law at grid times: the vector of the first K levels
/// is Gaussian-Markov with transition e^{dt Q} and per-step covariance
/// ∫_0^dt e^{sQ} e^{sQ'} ds, where Q has -1 on the diagonal and u above it.
pub fn poisson_kernel_construct(
    u: MixtureWeight,
    dt: f64,
    horizon: f64,
    terms: usize,
    replicas: usize,
    seed: u64,
    tail_tol: f64,
) -> Result<PoissonKernelPaths> {
    if terms == 0 {
        return Err(Error::Domain("need at least one term".into()));
    }
    let steps = grid_steps(dt, horizon)?;
    let u = u.get();
    let tail = taboo_tail(u, horizon, terms);
    if tail > tail_tol {
        return Err(Error::Truncation {
            tail,
            required_terms: required_terms(u, horizon, tail_tol),
        });
    }
    let kk = terms;
    // E(i,j) = p_{0,j-i}(dt) for j ≥ i
    let p_dt: Vec<f64> = (0..kk).map(|m| taboo_kernel(m as u64, dt, u)).collect::<Result<_>>()?;
    // covariance via composite Simpson on [0, dt]
    let panels = 64;
    let h = dt / panels as f64;
    let mut cov = nalgebra::DMatrix::<f64>::zeros(kk, kk);
    for q in 0..=panels {
        let s = q as f64 * h;
        let w = if q == 0 || q == panels {
            1.0
        } else if q % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let p: Vec<f64> = (0..kk).map(|m| taboo_kernel(m as u64, s, u)).collect::<Result<_>>()?;
        for i in 0..kk {
            for j in 0..kk {
                // Σ_l E_s(i,l) E_s(j,l)
                let mut acc = 0.0;
                for l in i.max(j)..kk {
                    acc += p[l - i] * p[l - j];
                }
                cov[(i, j)] += w * acc;
            }
        }
    }
    let chol =
        nalgebra::Cholesky::new(cov).ok_or_else(|| Error::Domain("step covariance is not positive definite".into()))?;
    let l = chol.l();
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut streams: Vec<_> = (0..kk)
                .map(|m| rng::stream(seed, rng::NOISE, r as u64, m as u64))
                .collect();
            let mut y = vec![0.0; kk];
            let mut ny = vec![0.0; kk];
            let mut xi = vec![0.0; kk];
            let mut out = Vec::with_capacity(steps + 1);
            out.push(0.0);
            for _ in 0..steps {
                for (z, s) in xi.iter_mut().zip(streams.iter_mut()) {
                    *z = rng::normal(s);
                }
                for i in 0..kk {
                    let mut acc = 0.0;
                    for j in i..kk {
                        acc += p_dt[j - i] * y[j];
                    }
                    for j in 0..=i {
                        acc += l[(i, j)] * xi[j];
                    }
                    ny[i] = acc;
                }
                std::mem::swap(&mut y, &mut ny);
                out.push(y[0]);
            }
            out
        })
        .collect();
    let paths = PathSet::new(replicas, steps + 1, dt, rows.into_iter().flatten().collect())?;
    Ok(PoissonKernelPaths { paths, tail, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(u: f64) -> MixtureWeight {
        MixtureWeight::new(u).unwrap()
    }

    #[test]
    fn zero_kernel_levels_are_brownian_and_identical_across_closures() {
        let k = DriftKernel::zero();
        let mut a = NestedConfig::new(3, 5, Closure::IndependentBm, 0.1, 1.0, 4);
        a.record_levels = 4;
        let ea = solve_nested_pair(&a, &k, w(0.6), &LawPath::Absent).unwrap();
        let mut b = a.clone();
        b.closure = Closure::McKeanVlasov;
        let eb = solve_nested_pair(&b, &k, w(0.6), &LawPath::Absent).unwrap();
        for l in 0..4 {
            assert_eq!(ea.levels[l], eb.levels[l]);
        }
        // level 1 of replica 0 is the partial sums of its own stream
        let mut s = rng::stream(4, rng::NOISE, 0, 0);
        let mut x = 0.0;
        for kk in 1..=10 {
            x += 0.1f64.sqrt() * rng::normal(&mut s);
            assert!((ea.levels[0].value(0, kk) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_law_validation() {
        let empty = PathSet::new(0, 11, 0.1, vec![]).unwrap();
        let c = NestedConfig::new(2, 3, Closure::FrozenLaw(Arc::new(empty)), 0.1, 1.0, 1);
        assert!(matches!(c.validate(), Err(Error::InvalidLaw(_))));
    }

    #[test]
    fn mckean_closure_rejected_at_u_one() {
        let c = NestedConfig::new(2, 3, Closure::McKeanVlasov, 0.1, 1.0, 1);
        let law = LawPath::affine_mean(&DriftKernel::linear_mean_revert(), &InitialLaw::Point(0.0), 0.1, 10).unwrap();
        assert!(solve_nested_pair(&c, &DriftKernel::linear_mean_revert(), w(1.0), &law).is_err());
    }

    #[test]
    fn missing_law_rejected_below_one() {
        let c = NestedConfig::new(2, 3, Closure::IndependentBm, 0.1, 1.0, 1);
        assert!(matches!(
            solve_nested_pair(&c, &DriftKernel::linear_mean_revert(), w(0.5), &LawPath::Absent),
            Err(Error::InvalidLaw(_))
        ));
    }

    #[test]
    fn skipping_levels_at_u_zero_is_exact() {
        let k = DriftKernel::linear_mean_revert();
        let law = LawPath::affine_mean(&k, &InitialLaw::Point(0.0), 0.05, 20).unwrap();
        let mut a = NestedConfig::new(6, 4, Closure::IndependentBm, 0.05, 1.0, 9);
        a.record_levels = 2;
        let ea = solve_nested_pair(&a, &k, w(0.0), &law).unwrap();
        a.record_levels = 7;
        let eb = solve_nested_pair(&a, &k, w(0.0), &law).unwrap();
        assert_eq!(ea.levels[0], eb.levels[0]);
        assert_eq!(ea.levels[1], eb.levels[1]);
    }

    #[test]
    fn picard_zero_kernel_gives_brownian_law() {
        let k = DriftKernel::zero();
        let init = InitialLaw::Point(0.0);
        let m0 = LawEnsemble::constant_initial(&init, 50, 0.1, 1.0, 3).unwrap();
        let a = picard_map(&m0, &k, w(0.5), 11, &init).unwrap();
        let b = picard_map(&a, &k, w(0.5), 11, &init).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(b.generation, 2);
    }

    #[test]
    fn picard_stops_after_one_map_with_loose_tolerance() {
        let mut c = PicardConfig::new(20, 0.1, 1.0, 5);
        c.tolerance = 10.0;
        let out = picard_solve(&c, &DriftKernel::linear_mean_revert(), w(0.5)).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.law.generation, 1);
    }

    #[test]
    fn picard_reports_trace_on_failure() {
        let mut c = PicardConfig::new(20, 0.1, 1.0, 5);
        c.max_iter = 2;
        c.tolerance = 1e-300;
        match picard_solve(&c, &DriftKernel::linear_mean_revert(), w(0.5)) {
            Err(Error::Convergence { trace }) => assert_eq!(trace.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_error_reports_required_terms() {
        match poisson_kernel_construct(w(1.0), 0.1, 5.0, 3, 2, 1, 1e-8) {
            Err(Error::Truncation { required_terms, .. }) => {
                assert!(required_terms > 3);
                assert!(taboo_tail(1.0, 5.0, required_terms) <= 1e-8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
