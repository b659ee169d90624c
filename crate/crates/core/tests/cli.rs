use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dchain"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn bundled_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let o = run(&["validate", "--config", p.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}: {}",
            p.display(),
            String::from_utf8_lossy(&o.stdout)
        );
    }
}

#[test]
fn empty_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.toml");
    std::fs::write(&p, "").unwrap();
    let o = run(&["validate", "--kind", "simulate-chain", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("seed") && text.contains("out"), "{text}");
}

#[test]
fn step_larger_than_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "kind = \"simulate-chain\"\nseed = 1\nout = \"x\"\nreplications = 1\n\n[simulate_chain]\nn = 10\nu = 0.5\ndt = 2.0\nhorizon = 1.0\n",
    )
    .unwrap();
    let o = run(&["validate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("dt"));
    let o = run(&[
        "simulate-chain",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unconverged_picard_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.toml");
    std::fs::write(
        &p,
        "kind = \"solve-limit\"\nseed = 1\nout = \"x\"\nreplications = 200\n\n[solve_limit]\nmethod = \"picard\"\nkernel = \"linear_mean_revert\"\nu = 0.5\ndt = 0.01\nhorizon = 1.0\nmax_iter = 2\ntolerance = 1e-12\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "solve-limit",
        "--trace",
        "--config",
        p.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn every_plot_has_its_csv_and_the_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chain");
    let cfg = configs().join("simulate_chain.toml");
    let o = run(&[
        "simulate-chain",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4242",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for entry in std::fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "svg") {
            assert!(p.with_extension("csv").exists(), "{}", p.display());
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4242);
    assert!(manifest["config"].as_str().unwrap().contains("seed = 4242"));
}

#[test]
fn tampered_output_is_reported_by_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let cfg = configs().join("discrete_time.toml");
    assert!(run(&[
        "discrete-time",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let manifest = out.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let o = run(&["replay", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("differs"));
}
