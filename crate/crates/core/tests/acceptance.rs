//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.
//!
//!     cargo test --release --test acceptance

use dchain::drift::{DriftKernel, MixtureWeight};
use dchain::inference::{
    kalman_bucy_oracle, modified_estimator, moments_estimator, particle_filter, simulate_observation, FilterConfig,
};
use dchain::limit::{picard_solve, solve_nested_pair, Closure, LawPath, NestedConfig, PicardConfig};
use dchain::measures::{fluctuation_study, generator_residual, Bump, FluctuationConfig, MeasurePath};
use dchain::numeric::{mean, mean_var, variance_stderr};
use dchain::oracle;
use dchain::paths::{InitialLaw, PathSet};
use dchain::Error;
use std::process::Command;
use std::time::Instant;

type Outcome = Result<String, String>;

fn w(u: f64) -> MixtureWeight {
    MixtureWeight::new(u).unwrap()
}

fn linear() -> DriftKernel {
    DriftKernel::linear_mean_revert()
}

fn zero_mean(dt: f64, horizon: f64) -> LawPath {
    let steps = (horizon / dt).round() as usize;
    LawPath::affine_mean(&linear(), &InitialLaw::Point(0.0), dt, steps).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn column_variance(p: &PathSet, t: f64) -> (f64, f64) {
    let col = p.column(p.index_of(t).unwrap());
    (mean_var(&col).1, variance_stderr(&col))
}

// Exact covariance of the Euler scheme for the truncated chain: levels 0..=d,
// A = -I + u·superdiagonal, the last level closed by a plain -x drift (mean
// field with zero mean) or by nothing (Brownian closure).
fn euler_covariance(u: f64, depth: usize, brownian_closure: bool, dt: f64, steps: usize) -> Vec<f64> {
    let n = depth + 1;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0 - dt;
        if i + 1 < n {
            m[i * n + i + 1] = u * dt;
        }
    }
    if brownian_closure {
        m[(n - 1) * n + n - 1] = 1.0;
    }
    let mut c = vec![0.0; n * n];
    let mut tmp = vec![0.0; n * n];
    for _ in 0..steps {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in i..n.min(i + 2) {
                    s += m[i * n + k] * c[k * n + j];
                }
                tmp[i * n + j] = s;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in j..n.min(j + 2) {
                    s += tmp[i * n + k] * m[j * n + k];
                }
                c[i * n + j] = s + if i == j { dt } else { 0.0 };
            }
        }
    }
    c
}

fn criterion_1() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut at = Vec::new();
    for (dt, seed) in [(0.01, 101), (0.005, 102)] {
        let mut cfg = NestedConfig::new(1, 20_000, Closure::McKeanVlasov, dt, 2.0, seed);
        cfg.record_levels = 1;
        cfg.record_stride = (0.5 / dt).round() as usize;
        let ens = solve_nested_pair(&cfg, &linear(), w(0.0), &zero_mean(dt, 2.0)).map_err(|e| e.to_string())?;
        let mut row = Vec::new();
        for t in [0.5, 1.0, 2.0] {
            let (v, se) = column_variance(&ens.levels[0], t);
            let target = oracle::variance_u0_closed(t);
            let z = (v - target) / se;
            if dt == 0.01 {
                ok &= z.abs() <= 3.0;
                lines.push(format!("t={t}: {v:.5} vs {target:.5} ({z:+.2} se)"));
            }
            row.push((v, se));
        }
        at.push(row);
    }
    // Richardson sanity check: the statistic moves by less than 3 combined se at dt/2
    let drift_ok = at[0]
        .iter()
        .zip(&at[1])
        .all(|(a, b)| (a.0 - b.0).abs() <= 3.0 * (a.1.hypot(b.1)));
    ok &= drift_ok;
    lines.push(format!("dt/2 drift within 3 se: {drift_ok}"));
    check(ok, lines.join("; "))
}

fn criterion_2() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let (dt, horizon, depth, pooled) = (0.01, 15.0, 30, 10);
    let steps = 1500;
    for (u, seed) in [(0.5, 201), (0.9, 202)] {
        let mut cfg = NestedConfig::new(depth, 60_000, Closure::McKeanVlasov, dt, horizon, seed);
        cfg.record_levels = pooled;
        cfg.record_stride = steps;
        let ens = solve_nested_pair(&cfg, &linear(), w(u), &zero_mean(dt, horizon)).map_err(|e| e.to_string())?;
        let units: Vec<f64> = (0..cfg.replicas)
            .map(|r| ens.levels.iter().map(|l| l.value(r, 1).powi(2)).sum::<f64>() / pooled as f64)
            .collect();
        let (v, var_units) = mean_var(&units);
        let se = (var_units / units.len() as f64).sqrt();
        let target = oracle::stationary_variance(u).unwrap();
        let rel = (v - target) / target;
        let c = euler_covariance(u, depth, false, dt, steps);
        let euler = (0..pooled).map(|l| c[l * (depth + 1) + l]).sum::<f64>() / pooled as f64;
        ok &= rel.abs() <= 0.02;
        lines.push(format!(
            "u={u}: {v:.5} vs {target:.5} ({:+.2}%, se {:.2}%, exact Euler {:+.2}%)",
            100.0 * rel,
            100.0 * se / target,
            100.0 * (euler - target) / target
        ));
    }
    let mut cfg = NestedConfig::new(depth, 20_000, Closure::IndependentBm, dt, 5.0, 203);
    cfg.record_levels = 2;
    cfg.record_stride = 500;
    let ens = solve_nested_pair(&cfg, &linear(), w(1.0), &LawPath::Absent).map_err(|e| e.to_string())?;
    let units: Vec<f64> = (0..cfg.replicas)
        .map(|r| 0.5 * (ens.levels[0].value(r, 1).powi(2) + ens.levels[1].value(r, 1).powi(2)))
        .collect();
    let (v, var_units) = mean_var(&units);
    let se = (var_units / units.len() as f64).sqrt();
    let target = 5.0 * (-10.0f64).exp() * (oracle::bessel_i(0, 10.0).unwrap() + oracle::bessel_i(1, 10.0).unwrap());
    let z = (v - target) / se;
    ok &= z.abs() <= 3.0;
    lines.push(format!("u=1 t=5: {v:.5} vs {target:.5} ({z:+.2} se)"));
    check(ok, lines.join("; "))
}

fn criterion_3() -> Outcome {
    let v = oracle::variance_u(50.0, 1.0).map_err(|e| e.to_string())?.value;
    let ratio = v / (50.0 / std::f64::consts::PI).sqrt();
    check(
        (0.95..=1.05).contains(&ratio),
        format!("variance_u(50,1)/sqrt(50/pi) = {ratio:.5}"),
    )
}

fn criterion_4() -> Outcome {
    let (dt, horizon, runs, per_run) = (0.01, 5.0, 16, 2000);
    let mut lines = Vec::new();
    let mut ok = true;
    for (u, seed) in [(0.0, 400u64), (0.5, 410), (1.0, 420)] {
        let mut picard_var = vec![Vec::new(), Vec::new()];
        for r in 0..runs {
            let mut cfg = PicardConfig::new(per_run, dt, horizon, seed + r as u64);
            cfg.tolerance = 1e-6;
            cfg.max_iter = 80;
            let out = picard_solve(&cfg, &linear(), w(u)).map_err(|e| e.to_string())?;
            for (i, t) in [1.0, 5.0].into_iter().enumerate() {
                picard_var[i].push(column_variance(&out.law.paths, t).0);
            }
        }
        let closure = if u < 1.0 {
            Closure::McKeanVlasov
        } else {
            Closure::IndependentBm
        };
        let law = if u < 1.0 {
            zero_mean(dt, horizon)
        } else {
            LawPath::Absent
        };
        let mut cfg = NestedConfig::new(30, 20_000, closure, dt, horizon, seed + 99);
        cfg.record_levels = 1;
        cfg.record_stride = 100;
        let ens = solve_nested_pair(&cfg, &linear(), w(u), &law).map_err(|e| e.to_string())?;
        for (i, t) in [1.0, 5.0].into_iter().enumerate() {
            let (pm, pv) = mean_var(&picard_var[i]);
            let pse = (pv / runs as f64).sqrt();
            let (nv, nse) = column_variance(&ens.levels[0], t);
            let band = 3.0 * pse.hypot(nse);
            ok &= (pm - nv).abs() <= band;
            lines.push(format!(
                "u={u} t={t}: picard {pm:.4} nested {nv:.4} (|d| {:.4} <= {band:.4})",
                (pm - nv).abs()
            ));
        }
    }
    check(ok, lines.join("; "))
}

fn criterion_5() -> Outcome {
    let mut cfg = PicardConfig::new(2000, 0.01, 5.0, 500);
    cfg.max_iter = 5;
    cfg.tolerance = 1e-300;
    let trace = match picard_solve(&cfg, &linear(), w(0.5)) {
        Err(Error::Convergence { trace }) => trace,
        Ok(o) => o.trace,
        Err(e) => return Err(e.to_string()),
    };
    let decreasing = trace.len() == 5 && trace.windows(2).all(|p| p[1] < p[0]);
    let ratios: Vec<String> = trace.windows(2).map(|p| format!("{:.3}", p[1] / p[0])).collect();
    let d: Vec<String> = trace.iter().map(|x| format!("{x:.3e}")).collect();
    check(
        decreasing,
        format!("d_k = [{}], ratios [{}]", d.join(", "), ratios.join(", ")),
    )
}

fn residual_rms(u: f64, n: usize, dt: f64, reps: usize, seed: u64) -> Result<Vec<f64>, Error> {
    let horizon = 1.0;
    let bumps = Bump::builtins();
    let mut sq = vec![0.0; bumps.len()];
    let (closure, law, depth) = if u < 1.0 {
        (Closure::McKeanVlasov, zero_mean(dt, horizon), 1)
    } else {
        (Closure::IndependentBm, LawPath::Absent, 12)
    };
    for r in 0..reps {
        let cfg = NestedConfig::new(depth, n, closure.clone(), dt, horizon, seed + r as u64);
        let ens = solve_nested_pair(&cfg, &linear(), w(u), &law)?;
        let (x, xt) = ens.pair();
        let joint = MeasurePath::from_levels(&[x, xt])?;
        let marginal = MeasurePath::from_levels(&[x])?;
        for (b, g) in bumps.iter().enumerate() {
            let res = generator_residual(&joint, &marginal, &linear(), w(u), *g, horizon)?;
            sq[b] += res * res;
        }
    }
    Ok(sq.into_iter().map(|s| (s / reps as f64).sqrt()).collect())
}

fn criterion_6() -> Outcome {
    let reps = 400;
    let mut lines = Vec::new();
    let mut ok = true;
    for (u, seed) in [(0.0, 600_000u64), (1.0, 700_000)] {
        let coarse = residual_rms(u, 250, 0.02, reps, seed).map_err(|e| e.to_string())?;
        let fine = residual_rms(u, 1000, 0.01, reps, seed + 100_000).map_err(|e| e.to_string())?;
        for (b, g) in Bump::builtins().iter().enumerate() {
            let ratio = fine[b] / coarse[b];
            ok &= (0.35..=0.65).contains(&ratio);
            lines.push(format!(
                "u={u} {}: {:.2e} -> {:.2e} (ratio {ratio:.3})",
                g.name(),
                coarse[b],
                fine[b]
            ));
        }
    }
    check(ok, lines.join("; "))
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (u, seed) in [(0.0, 700u64), (0.5, 701)] {
        let cfg = FluctuationConfig {
            n_list: vec![50, 100, 200, 400],
            replicas: 200,
            dt: 0.01,
            horizon: 2.0,
            seed,
            extra_depth: 10,
        };
        let rep = fluctuation_study(&linear(), w(u), &zero_mean(0.01, 2.0), &cfg).map_err(|e| e.to_string())?;
        ok &= rep.bounded;
        let rows: Vec<String> = rep.rows.iter().map(|r| format!("{}:{:.4}", r.n, r.statistic)).collect();
        lines.push(format!("u={u}: [{}] slope {:+.3}", rows.join(" "), rep.slope));
    }
    check(ok, lines.join("; "))
}

fn cross_moment(dt: f64, seed: u64) -> Result<(f64, f64), Error> {
    let u = 0.7;
    let mut cfg = NestedConfig::new(30, 40_000, Closure::McKeanVlasov, dt, 2.0, seed);
    cfg.record_stride = (1.0 / dt).round() as usize;
    let ens = solve_nested_pair(&cfg, &linear(), w(u), &zero_mean(dt, 2.0))?;
    let (x, xt) = ens.pair();
    let prod: Vec<f64> = (0..x.rows()).map(|r| x.value(r, 1) * xt.value(r, 2)).collect();
    let (m, v) = mean_var(&prod);
    Ok((m, (v / prod.len() as f64).sqrt()))
}

fn criterion_8() -> Outcome {
    let target = oracle::crosscov(1.0, 2.0, 0.7).map_err(|e| e.to_string())?.value;
    let (m, se) = cross_moment(0.01, 800).map_err(|e| e.to_string())?;
    let (m2, se2) = cross_moment(0.005, 801).map_err(|e| e.to_string())?;
    let z = (m - target) / se;
    let drift_ok = (m - m2).abs() <= 3.0 * se.hypot(se2);
    check(
        z.abs() <= 3.0 && drift_ok,
        format!("E[X_1 X~_2] {m:.5} vs {target:.5} ({z:+.2} se); dt/2 {m2:.5}, drift within 3 se: {drift_ok}"),
    )
}

fn criterion_9() -> Outcome {
    let u = 0.6;
    let (dt, horizon) = (0.01, 2000.0);
    let law = zero_mean(dt, horizon);
    let mut err_m = Vec::new();
    let mut err_mm = Vec::new();
    for seed in 0..10u64 {
        let obs = simulate_observation(
            &linear(),
            w(u),
            &law,
            &Closure::McKeanVlasov,
            &InitialLaw::Point(0.0),
            30,
            dt,
            horizon,
            900 + seed,
        )
        .map_err(|e| e.to_string())?;
        err_mm.push((moments_estimator(&obs).map_err(|e| e.to_string())?.estimate - u).abs());
        let limit = 1.0 - (1.0 - u * u).sqrt();
        err_m.push((modified_estimator(&obs).map_err(|e| e.to_string())?.estimate - limit).abs());
    }
    let (a, b) = (mean(&err_mm), mean(&err_m));
    check(
        a <= 0.05 && b <= 0.05,
        format!("mean |u_M - 0.6| = {a:.4}, mean |u_m - 0.2| = {b:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let (u, dt, horizon, depth) = (0.8, 0.01, 2.0, 3);
    let law = zero_mean(dt, horizon);
    let obs = simulate_observation(
        &linear(),
        w(u),
        &law,
        &Closure::McKeanVlasov,
        &InitialLaw::Point(0.0),
        depth,
        dt,
        horizon,
        1000,
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = FilterConfig::new(depth, 5000, 1001);
    cfg.snapshots = vec![0.5, 1.0, 2.0];
    let f = particle_filter(&obs, &linear(), w(u), &law, &cfg).map_err(|e| e.to_string())?;
    let kb = kalman_bucy_oracle(depth, w(u), &Closure::McKeanVlasov, 0.0, &obs).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut lines = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        let k = obs.index_of(t).map_err(|e| e.to_string())?;
        let m = f.estimate(t, |x| x[0]).map_err(|e| e.to_string())?;
        let se = f.estimate_stderr(t, |x| x[0]).map_err(|e| e.to_string())?;
        let one = f.estimate(t, |_| 1.0).map_err(|e| e.to_string())?;
        let target = kb.mean_first(k);
        let z = (m - target) / se;
        ok &= z.abs() <= 3.0 && (one - 1.0).abs() <= 1e-12;
        lines.push(format!(
            "t={t}: {m:.4} vs {target:.4} ({z:+.2} se), pi(1)-1 = {:.1e}",
            one - 1.0
        ));
    }
    check(ok, lines.join("; "))
}

// I_nu(x) e^{-x} = (1/pi) ∫_0^pi e^{x(cos θ - 1)} cos(nu θ) dθ; the trapezoid
// rule on a periodic analytic integrand converges geometrically.
fn bessel_scaled_integral(nu: u32, x: f64) -> f64 {
    let n = 400;
    let h = std::f64::consts::PI / n as f64;
    let f = |th: f64| (x * (th.cos() - 1.0)).exp() * (nu as f64 * th).cos();
    let mut s = 0.5 * (f(0.0) + f(std::f64::consts::PI));
    for i in 1..n {
        s += f(i as f64 * h);
    }
    s * h / std::f64::consts::PI
}

fn expm(q: &[f64], n: usize, t: f64) -> Vec<f64> {
    let norm = q.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64 * t;
    let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let scale = t / 2f64.powi(squarings);
    let a: Vec<f64> = q.iter().map(|v| v * scale).collect();
    let mul = |x: &[f64], y: &[f64]| {
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let xik = x[i * n + k];
                if xik != 0.0 {
                    for j in 0..n {
                        z[i * n + j] += xik * y[k * n + j];
                    }
                }
            }
        }
        z
    };
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        term = mul(&term, &a).into_iter().map(|v| v / k as f64).collect();
        for (r, v) in result.iter_mut().zip(&term) {
            *r += v;
        }
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}

fn pochhammer(a: f64, j: u64) -> f64 {
    (0..j).map(|i| a + i as f64).product()
}

fn hyp2f1_brute(k: u64, z: f64) -> f64 {
    let mut s = 0.0;
    let mut fact = 1.0;
    for j in 0..=k {
        if j > 0 {
            fact *= j as f64;
        }
        let mk = -(k as f64);
        s += pochhammer(mk, j) * pochhammer(mk, j) / (pochhammer(1.0, j) * fact) * z.powi(j as i32);
    }
    s
}

fn criterion_11() -> Outcome {
    let mut bessel_err: f64 = 0.0;
    let mut integral_err: f64 = 0.0;
    for i in 0..=600 {
        let x = 12.0 + 6.0 * i as f64 / 600.0;
        for nu in [0, 1] {
            let s = oracle::bessel_scaled_series(nu, x);
            let a = oracle::bessel_scaled_asymptotic(nu, x).0;
            bessel_err = bessel_err.max((s - a).abs());
            integral_err = integral_err.max((s - bessel_scaled_integral(nu, x)).abs());
        }
    }
    let n = 40;
    let mut taboo_err: f64 = 0.0;
    for u in [0.0, 0.3, 0.7, 1.0] {
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = -1.0;
            if i + 1 < n {
                q[i * n + i + 1] = u;
            }
        }
        for t in [0.1, 1.0, 3.0, 7.5] {
            let e = expm(&q, n, t);
            for k in 0..n {
                let p = oracle::taboo_kernel(k as u64, t, u).map_err(|e| e.to_string())?;
                taboo_err = taboo_err.max((p - e[k]).abs());
            }
        }
    }
    let mut discrete_err: f64 = 0.0;
    for n in 0..=12u64 {
        for a in [0.1f64, 0.35, 0.5, 0.8, 0.95] {
            for u in [0.0, 0.4, 1.0] {
                let b = u * (1.0 - a);
                let z = (b / a).powi(2);
                let brute: f64 = (0..n).map(|k| a.powi(2 * k as i32) * hyp2f1_brute(k, z)).sum();
                let exact = oracle::discrete_second_moment(n, a, u).map_err(|e| e.to_string())?;
                let hyp = oracle::discrete_second_moment_hypergeometric(n, a, u).map_err(|e| e.to_string())?;
                let scale = brute.abs().max(1.0);
                discrete_err = discrete_err
                    .max((exact - brute).abs() / scale)
                    .max((hyp - brute).abs() / scale);
            }
        }
    }
    check(
        bessel_err <= 1e-10 && integral_err <= 1e-10 && taboo_err <= 1e-8 && discrete_err <= 1e-10,
        format!(
            "bessel crossover {bessel_err:.1e}, vs integral {integral_err:.1e}, taboo vs expm {taboo_err:.1e}, discrete vs 2F1 {discrete_err:.1e}"
        ),
    )
}

fn criterion_12() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_dchain");
    let configs = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    let runs: [(&str, &[&str]); 7] = [
        ("simulate_chain", &["simulate-chain"]),
        ("solve_limit_picard", &["solve-limit", "--trace"]),
        ("solve_limit_nested", &["solve-limit"]),
        ("variance_table", &["variance-table"]),
        ("discrete_time", &["discrete-time"]),
        ("filter_study", &["filter-study"]),
        ("estimate_u", &["estimate-u"]),
    ];
    for (name, args) in runs {
        let out = dir.path().join(name);
        let status = Command::new(bin)
            .args(args)
            .arg("--config")
            .arg(format!("{configs}/{name}.toml"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "{name}: run failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        let replay = Command::new(bin)
            .arg("replay")
            .arg(out.join("manifest.json"))
            .output()
            .map_err(|e| e.to_string())?;
        let report = String::from_utf8_lossy(&replay.stdout);
        let files: Vec<&str> = report.lines().collect();
        let identical = files.iter().filter(|l| l.starts_with("identical")).count();
        let mut bytes_equal = true;
        for entry in std::fs::read_dir(&out).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.extension().is_some_and(|e| e == "csv") {
                let again = out.join("replay").join(p.file_name().unwrap());
                bytes_equal &= std::fs::read(&p).ok() == std::fs::read(&again).ok();
            }
        }
        let pass = replay.status.success() && identical == files.len() && identical > 0 && bytes_equal;
        ok &= pass;
        lines.push(format!("{name}: {identical}/{} identical", files.len()));
    }
    check(ok, lines.join("; "))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gaussian variance u=0", criterion_1),
        ("stationary dichotomy", criterion_2),
        ("explosive scaling u=1", criterion_3),
        ("picard vs nested chain", criterion_4),
        ("picard contraction", criterion_5),
        ("generator residual", criterion_6),
        ("fluctuation boundedness", criterion_7),
        ("cross-covariance", criterion_8),
        ("estimator consistency", criterion_9),
        ("filter vs kalman-bucy", criterion_10),
        ("bessel and kernel suite", criterion_11),
        ("replay determinism", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS [{:>2}] {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
