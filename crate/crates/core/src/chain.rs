//! Finite circular directed chain with mean-field interaction, Euler-Maruyama.

use crate::drift::{DriftKernel, MixtureWeight};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::paths::{initial_value, InitialLaw, PathSet};
use crate::rng;

pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub n: usize,
    pub u: MixtureWeight,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Drop the j = i term from the empirical average.
    pub exclude_self: bool,
    pub memory_budget: u64,
}

impl ChainConfig {
    pub fn new(n: usize, u: f64, dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        let c = Self {
            n,
            u: MixtureWeight::new(u)?,
            dt,
            horizon,
            seed,
            initial: InitialLaw::Point(0.0),
            exclude_self: false,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("particle count must be at least 1".into()));
        }
        self.initial.validate()?;
        grid_steps(self.dt, self.horizon).map(|_| ())
    }

    pub fn steps(&self) -> usize {
        grid_steps(self.dt, self.horizon).unwrap_or(0)
    }
}

/// Number of Euler steps; the horizon must be a whole number of steps.
pub fn grid_steps(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Grid(format!("dt must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Grid(format!("horizon must be positive, got {horizon}")));
    }
    if dt > horizon {
        return Err(Error::Grid(format!("dt = {dt} exceeds horizon = {horizon}")));
    }
    let x = horizon / dt;
    let k = x.round();
    if (x - k).abs() > 1e-9 * x {
        return Err(Error::Grid(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(k as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub paths: PathSet,
    pub seed: u64,
    pub wraparound: bool,
}

impl PathEnsemble {
    pub fn n(&self) -> usize {
        self.paths.rows()
    }
}

/// Reusable per-step buffers.
#[derive(Default)]
struct Scratch {
    drift: Vec<f64>,
}

fn step_into(
    state: &[f64],
    out: &mut [f64],
    kernel: &DriftKernel,
    u: f64,
    t: f64,
    dt: f64,
    noise: &[f64],
    exclude_self: bool,
    scratch: &mut Scratch,
) -> Result<()> {
    let n = state.len();
    let sdt = dt.sqrt();
    if let Some((a_x, a_y, c)) = kernel.affine_coeffs() {
        let total = if u < 1.0 { pairwise_sum(state) } else { 0.0 };
        for i in 0..n {
            let x = state[i];
            let nb = state[(i + 1) % n];
            let mut b = 0.0;
            if u > 0.0 {
                b += u * (a_x * x + a_y * nb + c);
            }
            if u < 1.0 {
                let mf = if exclude_self {
                    ((n - 1) as f64 * (a_x * x + c) + a_y * (total - x)) / n as f64
                } else {
                    a_x * x + a_y * (total / n as f64) + c
                };
                b += (1.0 - u) * mf;
            }
            out[i] = x + dt * b + sdt * noise[i];
        }
        return Ok(());
    }
    scratch.drift.resize(n, 0.0);
    for i in 0..n {
        let x = state[i];
        let mut b = 0.0;
        if u > 0.0 {
            b += u * kernel.eval(t, x, state[(i + 1) % n])?;
        }
        if u < 1.0 {
            let mut acc = 0.0;
            for (j, &y) in state.iter().enumerate() {
                if exclude_self && j == i {
                    continue;
                }
                acc += kernel.eval(t, x, y)?;
            }
            b += (1.0 - u) * acc / n as f64;
        }
        scratch.drift[i] = b;
    }
    for i in 0..n {
        out[i] = state[i] + dt * scratch.drift[i] + sdt * noise[i];
    }
    Ok(())
}

/// One synchronous Euler-Maruyama step of the circular chain.
pub fn step_chain(
    state: &[f64],
    kernel: &DriftKernel,
    u: MixtureWeight,
    t: f64,
    dt: f64,
    noise: &[f64],
    exclude_self: bool,
) -> Result<Vec<f64>> {
    if noise.len() != state.len() {
        return Err(Error::Dimension(format!(
            "{} noise values for {} particles",
            noise.len(),
            state.len()
        )));
    }
    if let Some(i) = state.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, step: 0 });
    }
    let mut out = vec![0.0; state.len()];
    step_into(
        state,
        &mut out,
        kernel,
        u.get(),
        t,
        dt,
        noise,
        exclude_self,
        &mut Scratch::default(),
    )?;
    Ok(out)
}

pub fn simulate_chain(config: &ChainConfig, kernel: &DriftKernel) -> Result<PathEnsemble> {
    simulate_chain_replica(config, kernel, 0)
}

/// Particle `i` of replica `r` uses noise stream `(seed, r, i)`.
pub fn simulate_chain_replica(config: &ChainConfig, kernel: &DriftKernel, replica: u64) -> Result<PathEnsemble> {
    config.validate()?;
    let n = config.n;
    let steps = config.steps();
    let required = (n as u64).saturating_mul(steps as u64 + 1).saturating_mul(8);
    if required > config.memory_budget {
        return Err(Error::Capacity {
            required,
            budget: config.memory_budget,
        });
    }
    let cols = steps + 1;
    let mut data = vec![0.0; n * cols];
    let mut streams: Vec<_> = (0..n)
        .map(|i| rng::stream(config.seed, rng::NOISE, replica, i as u64))
        .collect();
    let mut state: Vec<f64> = (0..n)
        .map(|i| initial_value(&config.initial, config.seed, replica, i as u64))
        .collect();
    let mut next = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut scratch = Scratch::default();
    for i in 0..n {
        data[i * cols] = state[i];
    }
    let u = config.u.get();
    for k in 0..steps {
        for (z, s) in noise.iter_mut().zip(streams.iter_mut()) {
            *z = rng::normal(s);
        }
        step_into(
            &state,
            &mut next,
            kernel,
            u,
            k as f64 * config.dt,
            config.dt,
            &noise,
            config.exclude_self,
            &mut scratch,
        )?;
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, step: k + 1 });
        }
        std::mem::swap(&mut state, &mut next);
        for i in 0..n {
            data[i * cols + k + 1] = state[i];
        }
    }
    Ok(PathEnsemble {
        paths: PathSet::new(n, cols, config.dt, data)?,
        seed: config.seed,
        wraparound: true,
    })
}

fn tuples(ensemble: &PathEnsemble, k: usize, t: f64) -> Result<Vec<Vec<f64>>> {
    let n = ensemble.n();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("window k = {k} must lie in 1..={n}")));
    }
    let col = ensemble.paths.index_of(t)?;
    Ok((0..n)
        .map(|i| (0..k).map(|j| ensemble.paths.value((i + j) % n, col)).collect())
        .collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy distance between two groups of a pooled sample, given group labels.
fn energy_from(d: &dyn Fn(usize, usize) -> f64, labels: &[bool]) -> f64 {
    let n = labels.len();
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            let v = d(i, j);
            match (labels[i], labels[j]) {
                (true, true) => aa += v,
                (false, false) => bb += v,
                _ => ab += v,
            }
        }
    }
    let na = labels.iter().filter(|&&l| l).count() as f64;
    let nb = n as f64 - na;
    2.0 * ab / (na * nb) - 2.0 * aa / (na * na) - 2.0 * bb / (nb * nb)
}

fn parity_labels(n: usize) -> Vec<bool> {
    // first, third, fifth... particle in one group
    (0..n).map(|i| i % 2 == 0).collect()
}

/// Energy distance between the k-window laws started at odd and at even positions.
pub fn shift_invariance_statistic(ensemble: &PathEnsemble, k: usize, t: f64) -> Result<f64> {
    let tup = tuples(ensemble, k, t)?;
    if tup.len() < 2 {
        return Err(Error::Domain("need at least two particles".into()));
    }
    let labels = parity_labels(tup.len());
    Ok(energy_from(&|i, j| dist(&tup[i], &tup[j]), &labels))
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ShiftTest {
    pub statistic: f64,
    pub quantile_99: f64,
    pub p_value: f64,
    pub reject: bool,
}

pub const PERMUTATION_LIMIT: usize = 4096;

/// Permutation test of shift invariance at level 1%.
pub fn shift_invariance_test(
    ensemble: &PathEnsemble,
    k: usize,
    t: f64,
    permutations: usize,
    seed: u64,
) -> Result<ShiftTest> {
    let tup = tuples(ensemble, k, t)?;
    let n = tup.len();
    if n < 4 {
        return Err(Error::Domain("need at least four particles".into()));
    }
    if n > PERMUTATION_LIMIT {
        return Err(Error::Capacity {
            required: (n * n * 8) as u64,
            budget: (PERMUTATION_LIMIT * PERMUTATION_LIMIT * 8) as u64,
        });
    }
    if permutations < 100 {
        return Err(Error::Domain("use at least 100 permutations".into()));
    }
    let mut dm = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = dist(&tup[i], &tup[j]);
            dm[i * n + j] = v;
            dm[j * n + i] = v;
        }
    }
    let d = |i: usize, j: usize| dm[i * n + j];
    let mut labels = parity_labels(n);
    let statistic = energy_from(&d, &labels);
    let mut rng = rng::stream(seed, rng::AUX, 2, 0);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        for i in (1..n).rev() {
            let j = rng::index_below(&mut rng, i + 1);
            labels.swap(i, j);
        }
        null.push(energy_from(&d, &labels));
    }
    null.sort_by(|a, b| a.total_cmp(b));
    let q = null[((0.99 * permutations as f64).ceil() as usize).min(permutations) - 1];
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    let p_value = (1 + exceed) as f64 / (1 + permutations) as f64;
    Ok(ShiftTest {
        statistic,
        quantile_99: q,
        p_value,
        reject: statistic > q,
    })
}
