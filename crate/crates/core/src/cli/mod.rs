//! Command-line front end.

pub mod config;
pub mod run;
pub mod svg;

use crate::error::Error;
use clap::{Args, Parser, Subcommand};
use config::{parse_document, ExperimentConfig, Kind};
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dchain", version, about = "Directed-chain SDE experiments")]
pub struct Cli {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    SimulateChain,
    SolveLimit {
        /// Write the Picard distance sequence to trace.csv
        #[arg(long)]
        trace: bool,
    },
    VarianceTable,
    ConvergenceStudy,
    EstimateU(EstimateArgs),
    FilterStudy,
    DiscreteTime,
    /// Check a config without running it
    Validate {
        /// Experiment kind, when the config has no `kind` key
        #[arg(long)]
        kind: Option<String>,
    },
    /// Re-run a manifest and compare output checksums
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// mm, modified or cmle; repeatable
    #[arg(long)]
    pub method: Vec<String>,
    /// Observation CSV (`t,value`) or path container
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub depth: Option<u64>,
    #[arg(long)]
    pub particles: Option<u64>,
    /// Comma-separated candidate values of u
    #[arg(long)]
    pub candidates: Option<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Format(_)
        | Error::Io(_)
        | Error::Domain(_)
        | Error::Grid(_)
        | Error::InvalidLaw(_)
        | Error::Dimension(_)
        | Error::Capacity { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn load(path: Option<&Path>) -> Result<Table, Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            parse_document(&text)
        }
        None => Ok(Table::new()),
    }
}

fn section_mut<'a>(doc: &'a mut Table, kind: Kind) -> &'a mut Table {
    let entry = doc.entry(kind.section()).or_insert_with(|| Value::Table(Table::new()));
    if !entry.is_table() {
        *entry = Value::Table(Table::new());
    }
    entry.as_table_mut().unwrap()
}

fn apply_overrides(doc: &mut Table, cli: &Cli, kind: Kind) {
    if let Some(s) = cli.seed {
        doc.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(o) = &cli.out {
        doc.insert("out".into(), Value::String(o.display().to_string()));
    }
    match &cli.command {
        Command::SolveLimit { trace: true } => {
            section_mut(doc, kind).insert("trace".into(), Value::Boolean(true));
        }
        Command::EstimateU(a) => {
            let sec = section_mut(doc, kind);
            if !a.method.is_empty() {
                sec.insert(
                    "method".into(),
                    Value::Array(a.method.iter().cloned().map(Value::String).collect()),
                );
            }
            if let Some(i) = &a.input {
                sec.insert("input".into(), Value::String(i.clone()));
                sec.remove("synthetic_u");
            }
            if let Some(d) = a.depth {
                sec.insert("depth".into(), Value::Integer(d as i64));
            }
            if let Some(p) = a.particles {
                sec.insert("particles".into(), Value::Integer(p as i64));
            }
            if let Some(c) = &a.candidates {
                let vals: Vec<Value> = c
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map(Value::Float)
                            .unwrap_or_else(|_| Value::String(s.into()))
                    })
                    .collect();
                sec.insert("candidates".into(), Value::Array(vals));
            }
        }
        _ => {}
    }
}

fn kind_of(cmd: &Command) -> Option<Kind> {
    match cmd {
        Command::SimulateChain => Some(Kind::SimulateChain),
        Command::SolveLimit { .. } => Some(Kind::SolveLimit),
        Command::VarianceTable => Some(Kind::VarianceTable),
        Command::ConvergenceStudy => Some(Kind::ConvergenceStudy),
        Command::EstimateU(_) => Some(Kind::EstimateU),
        Command::FilterStudy => Some(Kind::FilterStudy),
        Command::DiscreteTime => Some(Kind::DiscreteTime),
        _ => None,
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

fn execute(doc: Table, kind: Option<Kind>) -> i32 {
    let cfg = match ExperimentConfig::from_document(doc, kind) {
        Ok(c) => c,
        Err(diags) => {
            for d in diags {
                eprintln!("{d}");
            }
            return EXIT_CONFIG;
        }
    };
    match run::run(&cfg) {
        Ok(m) => {
            println!(
                "{} finished in {:.2}s; {} outputs in {}",
                m.kind,
                m.wall_clock_seconds,
                m.outputs.len(),
                cfg.out.display()
            );
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

fn replay(cli: &Cli, manifest: &Path) -> i32 {
    let m = match run::load_manifest(manifest) {
        Ok(m) => m,
        Err(e) => return report(&e),
    };
    let mut doc = match parse_document(&m.config) {
        Ok(d) => d,
        Err(e) => return report(&e),
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
    doc.insert("out".into(), Value::String(out.display().to_string()));
    let kind = Kind::parse(&m.kind);
    let cfg = match ExperimentConfig::from_document(doc, kind) {
        Ok(c) => c,
        Err(diags) => {
            for d in diags {
                eprintln!("{d}");
            }
            return EXIT_CONFIG;
        }
    };
    let fresh = match run::run(&cfg) {
        Ok(f) => f,
        Err(e) => return report(&e),
    };
    let mut mismatches = 0;
    for o in &m.outputs {
        match fresh.outputs.iter().find(|f| f.file == o.file) {
            Some(f) if f.sha256 == o.sha256 => println!("identical {}", o.file),
            Some(_) => {
                println!("differs   {}", o.file);
                mismatches += 1;
            }
            None => {
                println!("missing   {}", o.file);
                mismatches += 1;
            }
        }
    }
    if mismatches == 0 {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

pub fn main_with(cli: Cli) -> i32 {
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Replay { manifest } => replay(&cli, manifest),
        Command::Validate { kind } => {
            let doc = match load(cli.config.as_deref()) {
                Ok(d) => d,
                Err(e) => return report(&e),
            };
            let kind = match kind.as_deref().map(|k| Kind::parse(k).ok_or(k)) {
                Some(Ok(k)) => Some(k),
                Some(Err(k)) => {
                    eprintln!("kind: unknown experiment kind '{k}'");
                    return EXIT_CONFIG;
                }
                None => None,
            };
            let diags = config::validate(&doc, kind);
            if diags.is_empty() {
                println!("ok");
                EXIT_OK
            } else {
                for d in &diags {
                    println!("{d}");
                }
                EXIT_CONFIG
            }
        }
        cmd => {
            let kind = kind_of(cmd).expect("experiment subcommand");
            let mut doc = match load(cli.config.as_deref()) {
                Ok(d) => d,
                Err(e) => return report(&e),
            };
            apply_overrides(&mut doc, &cli, kind);
            execute(doc, Some(kind))
        }
    }
}
