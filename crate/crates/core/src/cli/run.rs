//! Experiment runners. Each writes its artifacts into the output directory and
//! returns their file names; the caller records checksums in the manifest.

use super::config::{ExperimentConfig, Kind};
use super::svg::plot_csv;
use crate::chain::{grid_steps, simulate_chain_replica, ChainConfig};
use crate::drift::{DriftKernel, MixtureWeight};
use crate::error::{Error, Result};
use crate::inference::{
    conditional_mle, default_candidates, kalman_bucy_oracle, modified_estimator, moments_estimator, particle_filter,
    simulate_observation, FilterConfig, ObservationPath,
};
use crate::limit::{picard_solve, solve_nested_pair, Closure, LawPath, NestedConfig, PicardConfig};
use crate::measures::{fluctuation_study, FluctuationConfig};
use crate::numeric::{mean_var, variance_stderr};
use crate::oracle;
use crate::paths::{
    load_container, save_container, write_long_csv, ContainerHeader, ContainerKind, InitialLaw, PathSet,
};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub config: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let d = Sha256::digest(&bytes);
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<PathBuf> {
        let p = self.path(name);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&p)?);
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(p)
    }

    fn plot(&mut self, csv: &Path, name: &str, x: &str, y: &str, group: &[&str], title: &str) -> Result<()> {
        let p = self.path(name);
        plot_csv(csv, &p, x, y, group, title)
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(p, text + "\n")?;
        Ok(())
    }
}

/// Runs the experiment, writes the manifest and returns it.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    std::fs::create_dir_all(&config.out)?;
    let mut out = Out {
        dir: config.out.clone(),
        files: Vec::new(),
    };
    match config.kind {
        Kind::SimulateChain => simulate_chain(config, &mut out)?,
        Kind::SolveLimit => solve_limit(config, &mut out)?,
        Kind::VarianceTable => variance_table(config, &mut out)?,
        Kind::ConvergenceStudy => convergence_study(config, &mut out)?,
        Kind::EstimateU => estimate_u(config, &mut out)?,
        Kind::FilterStudy => filter_study(config, &mut out)?,
        Kind::DiscreteTime => discrete_time(config, &mut out)?,
    }
    let outputs = out
        .files
        .iter()
        .map(|f| {
            Ok(OutputDigest {
                file: f.clone(),
                sha256: sha256_file(&config.out.join(f))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        version: VERSION.into(),
        kind: config.kind.name().into(),
        seed: config.seed,
        config: config.snapshot(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(config.out.join(MANIFEST), text + "\n")?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn unit(u: f64) -> Result<MixtureWeight> {
    MixtureWeight::new(u)
}

fn simulate_chain(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let kernel = s.kernel()?;
    let mut cfg =
        ChainConfig::new(s.usize("n"), s.f64("u"), s.f64("dt"), s.f64("horizon"), c.seed)?.with_initial(s.initial()?);
    cfg.exclude_self = s.bool_or("exclude_self", false);
    let stride = s.usize_or("csv_stride", 1);
    let reps = c.replications;
    let ensembles = (0..reps)
        .map(|r| simulate_chain_replica(&cfg, &kernel, r as u64))
        .collect::<Result<Vec<_>>>()?;
    let first = &ensembles[0];
    let header = ContainerHeader {
        kind: ContainerKind::Chain,
        seed: c.seed,
        wraparound: true,
        generation: 0,
        closure: String::new(),
    };
    save_container(&out.path("chain.dcpe"), &header, &first.paths)?;
    {
        let p = out.path("paths.csv");
        let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
        write_long_csv(&mut w, &first.paths.thinned(stride)?)?;
        w.flush()?;
    }
    let cols = first.paths.cols();
    let mut rows = Vec::new();
    for k in (0..cols).step_by(stride) {
        let vals: Vec<f64> = ensembles.iter().flat_map(|e| e.paths.column(k)).collect();
        let (m, v) = mean_var(&vals);
        rows.push(format!("{},{m},{v},{}", first.paths.time(k), variance_stderr(&vals)));
    }
    let csv = out.csv("moments.csv", "t,mean,variance,stderr", rows)?;
    out.plot(&csv, "moments.svg", "t", "variance", &[], "particle variance")
}

fn law_for(
    kernel: &DriftKernel,
    u: f64,
    initial: &InitialLaw,
    dt: f64,
    steps: usize,
    law_file: Option<&str>,
) -> Result<LawPath> {
    if let Some(p) = law_file {
        let (_, paths) = load_container(Path::new(p))?;
        return Ok(LawPath::ensemble(paths));
    }
    if u == 1.0 || kernel.is_zero() {
        return Ok(LawPath::Absent);
    }
    LawPath::affine_mean(kernel, initial, dt, steps)
}

fn closure_from(name: &str, law_file: Option<&str>) -> Result<Closure> {
    match name {
        "frozen_law" => {
            let p = law_file.ok_or_else(|| Error::Config("frozen_law needs law_file".into()))?;
            Ok(Closure::FrozenLaw(Arc::new(load_container(Path::new(p))?.1)))
        }
        other => Closure::parse(other),
    }
}

fn moments_rows(a: &PathSet, b: Option<&PathSet>) -> Vec<String> {
    (0..a.cols())
        .map(|k| {
            let x = a.column(k);
            let (_, vx) = mean_var(&x);
            match b {
                Some(b) => {
                    let y = b.column(k);
                    let (_, vy) = mean_var(&y);
                    let (mx, my) = (crate::numeric::mean(&x), crate::numeric::mean(&y));
                    let cov =
                        x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (x.len().max(2) - 1) as f64;
                    format!("{},{vx},{vy},{cov}", a.time(k))
                }
                None => format!("{},{vx},{}", a.time(k), variance_stderr(&x)),
            }
        })
        .collect()
}

fn solve_limit(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let kernel = s.kernel()?;
    let u = s.f64("u");
    let (dt, horizon) = (s.f64("dt"), s.f64("horizon"));
    let initial = s.initial()?;
    let law_file = s.opt_str("law_file");
    match s.str_or("method", "nested") {
        "picard" => {
            let mut cfg = PicardConfig::new(c.replications, dt, horizon, c.seed);
            cfg.initial = initial;
            cfg.max_iter = s.usize_or("max_iter", 50);
            cfg.tolerance = s.f64_or("tolerance", 1e-3);
            let res = picard_solve(&cfg, &kernel, unit(u)?);
            let trace = match &res {
                Ok(o) => o.trace.clone(),
                Err(Error::Convergence { trace }) => trace.clone(),
                Err(_) => Vec::new(),
            };
            if s.bool_or("trace", false) {
                let rows = trace.iter().enumerate().map(|(i, d)| format!("{i},{d}"));
                let csv = out.csv("trace.csv", "iter,distance", rows)?;
                out.plot(
                    &csv,
                    "trace.svg",
                    "iter",
                    "distance",
                    &[],
                    "successive-iterate distance",
                )?;
            }
            let o = res?;
            let header = ContainerHeader {
                kind: ContainerKind::Law,
                seed: c.seed,
                wraparound: false,
                generation: o.law.generation,
                closure: "picard".into(),
            };
            save_container(&out.path("law.dcpe"), &header, &o.law.paths)?;
            let csv = out.csv("moments.csv", "t,variance,stderr", moments_rows(&o.law.paths, None))?;
            out.plot(&csv, "moments.svg", "t", "variance", &[], "fixed-point law variance")
        }
        _ => {
            let closure = closure_from(s.str_or("closure", "independent_bm"), law_file)?;
            let mut cfg = NestedConfig::new(s.usize_or("depth", 30), c.replications, closure, dt, horizon, c.seed);
            cfg.initial = initial.clone();
            let steps = grid_steps(dt, horizon)?;
            let law = law_for(&kernel, u, &initial, dt, steps, law_file)?;
            let e = solve_nested_pair(&cfg, &kernel, unit(u)?, &law)?;
            let (x, xt) = e.pair();
            let header = ContainerHeader {
                kind: ContainerKind::Law,
                seed: c.seed,
                wraparound: false,
                generation: 0,
                closure: e.closure.clone(),
            };
            save_container(&out.path("pair_x.dcpe"), &header, x)?;
            save_container(&out.path("pair_xtilde.dcpe"), &header, xt)?;
            let csv = out.csv("pair_moments.csv", "t,var_x,var_xtilde,cov", moments_rows(x, Some(xt)))?;
            out.plot(&csv, "pair_moments.svg", "t", "var_x", &[], "nested pair variance")
        }
    }
}

fn variance_table(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let (dt, tmax) = (s.f64("dt"), s.f64("t_max"));
    let points = s.usize("t_points");
    let steps = grid_steps(dt, tmax)?;
    let stride = steps / (points - 1);
    let ts: Vec<f64> = (0..points).map(|i| (i * stride) as f64 * dt).collect();
    let kernel = DriftKernel::linear_mean_revert();
    let mut rows = Vec::new();
    for &u in &s.f64s("u") {
        for &t in &ts {
            rows.push(format!("{t},{u},{},quadrature", oracle::variance_u(t, u)?.value));
        }
        if u == 0.0 || u == 1.0 {
            for &t in &ts {
                let v = if u == 0.0 {
                    oracle::variance_u0_closed(t)
                } else {
                    oracle::variance_u1_closed(t)?
                };
                rows.push(format!("{t},{u},{v},closed_form"));
            }
        }
        if s.bool_or("monte_carlo", true) {
            let mut cfg = NestedConfig::new(
                s.usize_or("depth", 30),
                c.replications,
                Closure::IndependentBm,
                dt,
                tmax,
                c.seed,
            );
            cfg.record_levels = 1;
            cfg.record_stride = stride;
            let law = law_for(&kernel, u, &cfg.initial, dt, steps, None)?;
            let e = solve_nested_pair(&cfg, &kernel, unit(u)?, &law)?;
            for (k, &t) in ts.iter().enumerate() {
                let (_, v) = mean_var(&e.levels[0].column(k));
                rows.push(format!("{t},{u},{v},monte_carlo"));
            }
        }
    }
    let csv = out.csv("variance_table.csv", "t,u,variance,source", rows)?;
    out.plot(
        &csv,
        "variance_table.svg",
        "t",
        "variance",
        &["u", "source"],
        "variance of the limit process",
    )
}

fn convergence_study(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let kernel = s.kernel()?;
    let (dt, horizon) = (s.f64("dt"), s.f64("horizon"));
    let steps = grid_steps(dt, horizon)?;
    let cfg = FluctuationConfig {
        n_list: s.usizes("n"),
        replicas: c.replications,
        dt,
        horizon,
        seed: c.seed,
        extra_depth: s.usize_or("extra_depth", 30),
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &u in &s.f64s("u") {
        let law = law_for(&kernel, u, &InitialLaw::Point(0.0), dt, steps, None)?;
        let rep = fluctuation_study(&kernel, unit(u)?, &law, &cfg)?;
        for r in &rep.rows {
            rows.push(format!("{u},{},{},{}", r.n, r.statistic, r.stderr));
        }
        summary.push(serde_json::json!({ "u": u, "slope": rep.slope, "bounded": rep.bounded }));
    }
    let csv = out.csv("fluctuation.csv", "u,n,statistic,stderr", rows)?;
    out.json("fluctuation_summary.json", &summary)?;
    out.plot(
        &csv,
        "fluctuation.svg",
        "n",
        "statistic",
        &["u"],
        "normalized coupled fluctuation",
    )
}

fn estimate_u(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let kernel = DriftKernel::linear_mean_revert();
    let obs = match s.opt_str("input") {
        Some(p) => {
            let path = Path::new(p);
            if path.extension().is_some_and(|e| e == "dcpe") {
                let (_, paths) = load_container(path)?;
                ObservationPath::from_paths(&paths, 0, p)?
            } else {
                ObservationPath::from_csv(path)?
            }
        }
        None => {
            let u = s.f64("synthetic_u");
            let (dt, horizon) = (s.f64("dt"), s.f64("horizon"));
            let steps = grid_steps(dt, horizon)?;
            let initial = InitialLaw::Point(0.0);
            let law = law_for(&kernel, u, &initial, dt, steps, None)?;
            let closure = if u < 1.0 {
                Closure::McKeanVlasov
            } else {
                Closure::IndependentBm
            };
            let o = simulate_observation(
                &kernel,
                unit(u)?,
                &law,
                &closure,
                &initial,
                s.usize_or("synthetic_depth", 30),
                dt,
                horizon,
                c.seed,
            )?;
            let p = out.path("observation.csv");
            let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
            o.write_csv(&mut w)?;
            w.flush()?;
            o
        }
    };
    let methods = s
        .strs("method")
        .unwrap_or_else(|| vec!["mm".into(), "modified".into(), "cmle".into()]);
    let mut results = serde_json::Map::new();
    let mut diagnostics = Vec::new();
    for m in &methods {
        let r = match m.as_str() {
            "mm" => moments_estimator(&obs)?,
            "modified" => modified_estimator(&obs)?,
            _ => {
                let law = LawPath::affine_mean(&kernel, &InitialLaw::Point(0.0), obs.dt, obs.steps())?;
                let mut fc = FilterConfig::new(
                    s.usize_or("depth", 3),
                    s.usize_or("particles", 500),
                    c.seed ^ 0x9e37_79b9_7f4a_7c15,
                );
                let candidates = s.opt_f64s("candidates").unwrap_or_else(default_candidates);
                let r = conditional_mle(&obs, &kernel, &law, &fc, &candidates)?;
                let best = r
                    .scan
                    .iter()
                    .min_by(|a, b| {
                        (a.estimate - a.candidate)
                            .abs()
                            .total_cmp(&(b.estimate - b.candidate).abs())
                    })
                    .unwrap();
                fc.snapshots.clear();
                let f = particle_filter(&obs, &kernel, unit(best.candidate)?, &law, &fc)?;
                if let Some(t) = f.degeneracy_time {
                    diagnostics.push(format!(
                        "effective sample size collapsed at t = {t} (candidate {})",
                        best.candidate
                    ));
                }
                let rows = f
                    .ess
                    .iter()
                    .enumerate()
                    .map(|(k, e)| format!("{},{e}", k as f64 * obs.dt));
                out.csv("ess.csv", "t,ess", rows.collect::<Vec<_>>())?;
                r
            }
        };
        for flag in &r.flags {
            diagnostics.push(format!("{m}: {flag}"));
        }
        results.insert(
            m.clone(),
            serde_json::to_value(&r).map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    let doc = serde_json::json!({
        "observation": obs.provenance,
        "horizon": obs.horizon(),
        "dt": obs.dt,
        "estimate": results,
        "diagnostics": diagnostics,
    });
    out.json("estimate.json", &doc)
}

fn filter_study(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let kernel = DriftKernel::linear_mean_revert();
    let u = s.f64("u");
    let (dt, horizon) = (s.f64("dt"), s.f64("horizon"));
    let depth = s.usize("depth");
    let steps = grid_steps(dt, horizon)?;
    let initial = InitialLaw::Point(0.0);
    let closure = Closure::parse(s.str_or("closure", if u < 1.0 { "mckean_vlasov" } else { "independent_bm" }))?;
    let law = law_for(&kernel, u, &initial, dt, steps, None)?;
    let obs = simulate_observation(&kernel, unit(u)?, &law, &closure, &initial, depth, dt, horizon, c.seed)?;
    let mut fc = FilterConfig::new(depth, s.usize("particles"), c.seed ^ 0x9e37_79b9_7f4a_7c15);
    fc.closure = closure.clone();
    let f = particle_filter(&obs, &kernel, unit(u)?, &law, &fc)?;
    let kb = kalman_bucy_oracle(depth, unit(u)?, &closure, initial.variance(), &obs)?;
    let stride = s.usize_or("csv_stride", 1);
    let rows = (0..=steps).step_by(stride).map(|k| {
        format!(
            "{},{},{},{},{},{}",
            k as f64 * dt,
            f.mean[k],
            f.mean_stderr[k],
            kb.mean_first(k),
            kb.variance_first(k),
            f.ess[k]
        )
    });
    let csv = out.csv(
        "filter.csv",
        "t,filter_mean,filter_stderr,oracle_mean,oracle_variance,ess",
        rows.collect::<Vec<_>>(),
    )?;
    out.plot(
        &csv,
        "filter.svg",
        "t",
        "filter_mean",
        &[],
        "conditional mean of the neighbour",
    )?;
    let res = f.ks_residual(&obs)?;
    let rows = res
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(k, r)| format!("{},{r}", k as f64 * dt));
    out.csv("ks_residual.csv", "t,residual", rows.collect::<Vec<_>>())?;
    Ok(())
}

fn discrete_time(c: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let s = c.section();
    let (a, u) = (s.f64("a"), s.f64("u"));
    let mut rows = Vec::new();
    for n in 0..=s.usize("n_max") as u64 {
        let exact = oracle::discrete_second_moment(n, a, u)?;
        let hyp = oracle::discrete_second_moment_hypergeometric(n, a, u)?;
        let mc = oracle::simulate_discrete(n, a, u, c.replications, c.seed)?;
        rows.push(format!("{n},{exact},{hyp},{},{}", mc.value, mc.stderr));
    }
    let csv = out.csv("discrete.csv", "n,exact,hypergeometric,monte_carlo,stderr", rows)?;
    out.plot(
        &csv,
        "discrete.svg",
        "n",
        "exact",
        &[],
        "second moment of the discrete-time chain",
    )
}
