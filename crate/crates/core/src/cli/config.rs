//! Experiment configuration: a TOML file with top-level `kind`, `seed`, `out`,
//! `replications` and one section per experiment kind.

use crate::chain::{grid_steps, DEFAULT_MEMORY_BUDGET};
use crate::drift::DriftKernel;
use crate::error::{Error, Result};
use crate::paths::InitialLaw;
use std::fmt;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    SimulateChain,
    SolveLimit,
    VarianceTable,
    ConvergenceStudy,
    EstimateU,
    FilterStudy,
    DiscreteTime,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::SimulateChain,
        Kind::SolveLimit,
        Kind::VarianceTable,
        Kind::ConvergenceStudy,
        Kind::EstimateU,
        Kind::FilterStudy,
        Kind::DiscreteTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::SimulateChain => "simulate-chain",
            Kind::SolveLimit => "solve-limit",
            Kind::VarianceTable => "variance-table",
            Kind::ConvergenceStudy => "convergence-study",
            Kind::EstimateU => "estimate-u",
            Kind::FilterStudy => "filter-study",
            Kind::DiscreteTime => "discrete-time",
        }
    }

    pub fn section(self) -> &'static str {
        match self {
            Kind::SimulateChain => "simulate_chain",
            Kind::SolveLimit => "solve_limit",
            Kind::VarianceTable => "variance_table",
            Kind::ConvergenceStudy => "convergence_study",
            Kind::EstimateU => "estimate_u",
            Kind::FilterStudy => "filter_study",
            Kind::DiscreteTime => "discrete_time",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Float,
    Int,
    Str,
    Bool,
    FloatList,
    IntList,
    StrList,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Float => "a number",
            Ty::Int => "a nonnegative integer",
            Ty::Str => "a string",
            Ty::Bool => "a boolean",
            Ty::FloatList => "a list of numbers",
            Ty::IntList => "a list of nonnegative integers",
            Ty::StrList => "a list of strings",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        let num = |v: &Value| v.is_float() || v.as_integer().is_some();
        let nat = |v: &Value| v.as_integer().is_some_and(|i| i >= 0);
        match self {
            Ty::Float => num(v),
            Ty::Int => nat(v),
            Ty::Str => v.is_str(),
            Ty::Bool => v.is_bool(),
            Ty::FloatList => v.as_array().is_some_and(|a| a.iter().all(num)),
            Ty::IntList => v.as_array().is_some_and(|a| a.iter().all(nat)),
            Ty::StrList => v.as_array().is_some_and(|a| a.iter().all(Value::is_str)),
        }
    }
}

struct Field {
    key: &'static str,
    ty: Ty,
    required: bool,
}

const fn req(key: &'static str, ty: Ty) -> Field {
    Field {
        key,
        ty,
        required: true,
    }
}

const fn opt(key: &'static str, ty: Ty) -> Field {
    Field {
        key,
        ty,
        required: false,
    }
}

const TOP: &[Field] = &[
    req("seed", Ty::Int),
    req("out", Ty::Str),
    req("replications", Ty::Int),
    opt("kind", Ty::Str),
];

fn schema(kind: Kind) -> &'static [Field] {
    use Ty::*;
    match kind {
        Kind::SimulateChain => {
            const F: &[Field] = &[
                req("n", Int),
                req("u", Float),
                req("dt", Float),
                req("horizon", Float),
                req("kernel", Str),
                opt("initial", Str),
                opt("exclude_self", Bool),
                opt("csv_stride", Int),
            ];
            F
        }
        Kind::SolveLimit => {
            const F: &[Field] = &[
                req("method", Str),
                req("u", Float),
                req("dt", Float),
                req("horizon", Float),
                req("kernel", Str),
                opt("initial", Str),
                opt("depth", Int),
                opt("closure", Str),
                opt("law_file", Str),
                opt("max_iter", Int),
                opt("tolerance", Float),
                opt("trace", Bool),
            ];
            F
        }
        Kind::VarianceTable => {
            const F: &[Field] = &[
                req("u", FloatList),
                req("t_max", Float),
                req("t_points", Int),
                req("dt", Float),
                opt("depth", Int),
                opt("monte_carlo", Bool),
            ];
            F
        }
        Kind::ConvergenceStudy => {
            const F: &[Field] = &[
                req("n", IntList),
                req("u", FloatList),
                req("dt", Float),
                req("horizon", Float),
                opt("kernel", Str),
                opt("extra_depth", Int),
            ];
            F
        }
        Kind::EstimateU => {
            const F: &[Field] = &[
                opt("method", StrList),
                opt("input", Str),
                opt("synthetic_u", Float),
                opt("synthetic_depth", Int),
                opt("dt", Float),
                opt("horizon", Float),
                opt("depth", Int),
                opt("particles", Int),
                opt("candidates", FloatList),
            ];
            F
        }
        Kind::FilterStudy => {
            const F: &[Field] = &[
                req("u", Float),
                req("depth", Int),
                req("particles", Int),
                req("dt", Float),
                req("horizon", Float),
                opt("closure", Str),
                opt("csv_stride", Int),
            ];
            F
        }
        Kind::DiscreteTime => {
            const F: &[Field] = &[req("a", Float), req("u", Float), req("n_max", Int)];
            F
        }
    }
}

/// One problem found by `validate`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(out: &mut Vec<Diagnostic>, field: impl Into<String>, message: impl Into<String>) {
    out.push(Diagnostic {
        field: field.into(),
        message: message.into(),
    });
}

pub fn parse_kernel(spec: &str) -> Result<DriftKernel> {
    let spec = spec.trim();
    match spec {
        "linear_mean_revert" => Ok(DriftKernel::linear_mean_revert()),
        "linear_repulsive" => Ok(DriftKernel::linear_repulsive()),
        "zero" => Ok(DriftKernel::zero()),
        _ => {
            if let Some(rest) = spec.strip_prefix("affine:") {
                let v: Vec<f64> = rest
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("kernel '{spec}': {e}")))?;
                if v.len() != 3 {
                    return Err(Error::Config(format!("kernel '{spec}': affine needs a_x,a_y,c")));
                }
                DriftKernel::affine(v[0], v[1], v[2])
            } else if let Some(p) = spec.strip_prefix("file:") {
                DriftKernel::from_csv(Path::new(p))
            } else {
                Err(Error::Config(format!(
                    "unknown kernel '{spec}' (linear_mean_revert, linear_repulsive, zero, affine:a,b,c, file:path)"
                )))
            }
        }
    }
}

/// Reads a TOML document.
pub fn parse_document(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Config(format!("malformed config: {e}")))
}

fn num(v: &Value) -> f64 {
    v.as_float().unwrap_or_else(|| v.as_integer().unwrap_or(0) as f64)
}

fn get<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    t.get(key)
}

fn float_of(t: &Table, key: &str) -> Option<f64> {
    get(t, key).filter(|v| Ty::Float.accepts(v)).map(num)
}

fn int_of(t: &Table, key: &str) -> Option<u64> {
    get(t, key)
        .and_then(Value::as_integer)
        .filter(|&i| i >= 0)
        .map(|i| i as u64)
}

fn str_of<'a>(t: &'a Table, key: &str) -> Option<&'a str> {
    get(t, key).and_then(Value::as_str)
}

fn floats_of(t: &Table, key: &str) -> Option<Vec<f64>> {
    get(t, key)
        .filter(|v| Ty::FloatList.accepts(v))
        .map(|v| v.as_array().unwrap().iter().map(num).collect())
}

fn ints_of(t: &Table, key: &str) -> Option<Vec<u64>> {
    get(t, key).filter(|v| Ty::IntList.accepts(v)).map(|v| {
        v.as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_integer().unwrap() as u64)
            .collect()
    })
}

fn check_grid(out: &mut Vec<Diagnostic>, sec: &str, dt: Option<f64>, horizon: Option<f64>) -> Option<usize> {
    let (dt, h) = (dt?, horizon?);
    if !(dt > 0.0) {
        diag(out, format!("{sec}.dt"), "must be positive");
        return None;
    }
    if !(h > 0.0) {
        diag(out, format!("{sec}.horizon"), "must be positive");
        return None;
    }
    if dt > h {
        diag(out, format!("{sec}.dt"), format!("dt = {dt} exceeds the horizon {h}"));
        return None;
    }
    match grid_steps(dt, h) {
        Ok(s) => Some(s),
        Err(e) => {
            diag(out, format!("{sec}.horizon"), e.to_string());
            None
        }
    }
}

fn check_unit(out: &mut Vec<Diagnostic>, field: String, u: Option<f64>) {
    if let Some(u) = u {
        if !(0.0..=1.0).contains(&u) {
            diag(out, field, format!("u = {u} must lie in [0, 1]"));
        }
    }
}

fn check_file(out: &mut Vec<Diagnostic>, field: String, path: &str) {
    if !Path::new(path).is_file() {
        diag(out, field, format!("referenced file '{path}' does not exist"));
    }
}

fn check_initial(out: &mut Vec<Diagnostic>, sec: &str, t: &Table) {
    if let Some(s) = str_of(t, "initial") {
        if let Some(p) = s.strip_prefix("file:") {
            check_file(out, format!("{sec}.initial"), p);
        } else if let Err(e) = InitialLaw::parse(s) {
            diag(out, format!("{sec}.initial"), e.to_string());
        }
    }
}

fn check_kernel(out: &mut Vec<Diagnostic>, sec: &str, t: &Table) -> Option<DriftKernel> {
    let s = str_of(t, "kernel")?;
    if let Some(p) = s.strip_prefix("file:") {
        if !Path::new(p).is_file() {
            check_file(out, format!("{sec}.kernel"), p);
            return None;
        }
    }
    match parse_kernel(s) {
        Ok(k) => Some(k),
        Err(e) => {
            diag(out, format!("{sec}.kernel"), e.to_string());
            None
        }
    }
}

fn check_memory(out: &mut Vec<Diagnostic>, field: String, bytes: u64) {
    if bytes > DEFAULT_MEMORY_BUDGET {
        diag(
            out,
            field,
            format!("needs about {bytes} bytes, budget is {DEFAULT_MEMORY_BUDGET}"),
        );
    }
}

/// Dry-run check of a parsed config for `kind` (taken from the document when
/// `None`). Returns every problem found; no side effects.
pub fn validate(doc: &Table, kind: Option<Kind>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let kind = match (kind, str_of(doc, "kind")) {
        (Some(k), Some(named)) => {
            if Kind::parse(named) != Some(k) {
                diag(
                    &mut out,
                    "kind",
                    format!("config is for '{named}', subcommand is '{}'", k.name()),
                );
            }
            Some(k)
        }
        (Some(k), None) => Some(k),
        (None, Some(named)) => {
            let k = Kind::parse(named);
            if k.is_none() {
                diag(&mut out, "kind", format!("unknown experiment kind '{named}'"));
            }
            k
        }
        (None, None) => {
            diag(&mut out, "kind", "missing field");
            None
        }
    };
    check_fields(&mut out, doc, TOP, "", true);
    let Some(kind) = kind else { return out };
    let sec = kind.section();
    let empty = Table::new();
    let t = match doc.get(sec) {
        Some(Value::Table(t)) => t,
        Some(_) => {
            diag(&mut out, sec, "must be a table");
            return out;
        }
        None => &empty,
    };
    check_fields(&mut out, t, schema(kind), sec, false);
    for (key, v) in doc {
        if matches!(v, Value::Table(_)) && key != sec {
            if Kind::ALL.iter().any(|k| k.section() == key) {
                continue;
            }
            diag(&mut out, key.clone(), "unknown section");
        }
    }
    semantic(&mut out, doc, t, kind);
    out
}

fn check_fields(out: &mut Vec<Diagnostic>, t: &Table, fields: &[Field], sec: &str, top: bool) {
    let name = |k: &str| {
        if sec.is_empty() {
            k.to_string()
        } else {
            format!("{sec}.{k}")
        }
    };
    for f in fields {
        match t.get(f.key) {
            None if f.required => diag(out, name(f.key), "missing field"),
            None => {}
            Some(v) if !f.ty.accepts(v) => diag(out, name(f.key), format!("must be {}", f.ty.name())),
            Some(_) => {}
        }
    }
    for (k, v) in t {
        if top && matches!(v, Value::Table(_)) {
            continue;
        }
        if !fields.iter().any(|f| f.key == k) {
            diag(out, name(k), "unknown field");
        }
    }
}

fn semantic(out: &mut Vec<Diagnostic>, doc: &Table, t: &Table, kind: Kind) {
    let sec = kind.section();
    let f = |k: &str| format!("{sec}.{k}");
    let reps = int_of(doc, "replications").unwrap_or(1);
    if reps == 0 {
        diag(out, "replications", "must be at least 1");
    }
    check_initial(out, sec, t);
    match kind {
        Kind::SimulateChain => {
            check_unit(out, f("u"), float_of(t, "u"));
            check_kernel(out, sec, t);
            let steps = check_grid(out, sec, float_of(t, "dt"), float_of(t, "horizon"));
            if let Some(n) = int_of(t, "n") {
                if n == 0 {
                    diag(out, f("n"), "must be at least 1");
                }
                if let Some(s) = steps {
                    check_memory(out, f("n"), n.saturating_mul(s as u64 + 1).saturating_mul(8));
                }
            }
            if int_of(t, "csv_stride") == Some(0) {
                diag(out, f("csv_stride"), "must be at least 1");
            }
        }
        Kind::SolveLimit => {
            let u = float_of(t, "u");
            check_unit(out, f("u"), u);
            let kernel = check_kernel(out, sec, t);
            let steps = check_grid(out, sec, float_of(t, "dt"), float_of(t, "horizon"));
            let method = str_of(t, "method");
            if let Some(m) = method {
                if m != "nested" && m != "picard" {
                    diag(out, f("method"), format!("unknown method '{m}' (nested, picard)"));
                }
            }
            let closure = str_of(t, "closure").unwrap_or("independent_bm");
            match closure {
                "independent_bm" => {}
                "mckean_vlasov" => {
                    if u == Some(1.0) {
                        diag(out, f("closure"), "the mckean_vlasov closure is disabled at u = 1");
                    }
                }
                "frozen_law" => {
                    if str_of(t, "law_file").is_none() {
                        diag(out, f("law_file"), "required by the frozen_law closure");
                    }
                }
                other => diag(out, f("closure"), format!("unknown closure '{other}'")),
            }
            if let Some(p) = str_of(t, "law_file") {
                check_file(out, f("law_file"), p);
            }
            if method == Some("nested") {
                if let (Some(k), Some(u)) = (&kernel, u) {
                    if u < 1.0 && k.affine_coeffs().is_none() && str_of(t, "law_file").is_none() {
                        diag(
                            out,
                            f("law_file"),
                            "a non-affine kernel with u < 1 needs a marginal law file",
                        );
                    }
                }
                if int_of(t, "depth") == Some(0) {
                    diag(out, f("depth"), "must be at least 1");
                }
            }
            if let Some(tol) = float_of(t, "tolerance") {
                if !(tol > 0.0) {
                    diag(out, f("tolerance"), "must be positive");
                }
            }
            if int_of(t, "max_iter") == Some(0) {
                diag(out, f("max_iter"), "must be at least 1");
            }
            if let Some(s) = steps {
                check_memory(
                    out,
                    "replications".into(),
                    reps.saturating_mul(2 * (s as u64 + 1)).saturating_mul(8),
                );
            }
        }
        Kind::VarianceTable => {
            if let Some(us) = floats_of(t, "u") {
                if us.is_empty() {
                    diag(out, f("u"), "must not be empty");
                }
                for u in us {
                    check_unit(out, f("u"), Some(u));
                }
            }
            let dt = float_of(t, "dt");
            let tmax = float_of(t, "t_max");
            if let Some(steps) = check_grid(out, sec, dt, tmax) {
                if let Some(p) = int_of(t, "t_points") {
                    if p < 2 {
                        diag(out, f("t_points"), "must be at least 2");
                    } else if steps % (p as usize - 1) != 0 {
                        diag(out, f("t_points"), "t grid points must fall on the dt grid");
                    }
                }
            }
        }
        Kind::ConvergenceStudy => {
            if let Some(ns) = ints_of(t, "n") {
                if ns.is_empty() || ns.contains(&0) {
                    diag(out, f("n"), "must be a nonempty list of positive sizes");
                }
            }
            if let Some(us) = floats_of(t, "u") {
                if us.is_empty() {
                    diag(out, f("u"), "must not be empty");
                }
                for u in us {
                    check_unit(out, f("u"), Some(u));
                }
            }
            if t.contains_key("kernel") {
                if let Some(k) = check_kernel(out, sec, t) {
                    if k.affine_coeffs().is_none() {
                        diag(out, f("kernel"), "the nested comparison needs an affine kernel");
                    }
                }
            }
            check_grid(out, sec, float_of(t, "dt"), float_of(t, "horizon"));
            if reps < 2 {
                diag(
                    out,
                    "replications",
                    "at least 2 replications are needed for standard errors",
                );
            }
        }
        Kind::EstimateU => {
            let methods: Vec<String> = t
                .get("method")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_else(|| vec!["mm".into(), "modified".into(), "cmle".into()]);
            if methods.is_empty() {
                diag(out, f("method"), "must not be empty");
            }
            for m in &methods {
                if !["mm", "modified", "cmle"].contains(&m.as_str()) {
                    diag(out, f("method"), format!("unknown method '{m}' (mm, modified, cmle)"));
                }
            }
            match (str_of(t, "input"), float_of(t, "synthetic_u")) {
                (Some(_), Some(_)) => diag(out, f("input"), "give either input or synthetic_u, not both"),
                (None, None) => diag(out, f("input"), "missing field (or synthetic_u)"),
                (Some(p), None) => check_file(out, f("input"), p),
                (None, Some(u)) => {
                    check_unit(out, f("synthetic_u"), Some(u));
                    for k in ["dt", "horizon"] {
                        if !t.contains_key(k) {
                            diag(out, f(k), "missing field (required with synthetic_u)");
                        }
                    }
                    check_grid(out, sec, float_of(t, "dt"), float_of(t, "horizon"));
                    if u == 1.0 {
                        diag(out, f("synthetic_u"), "synthetic paths at u = 1 are not stationary");
                    }
                }
            }
            for k in ["depth", "particles", "synthetic_depth"] {
                if int_of(t, k) == Some(0) {
                    diag(out, f(k), "must be at least 1");
                }
            }
            if let Some(c) = floats_of(t, "candidates") {
                if c.is_empty() {
                    diag(out, f("candidates"), "must not be empty");
                }
                for u in c {
                    check_unit(out, f("candidates"), Some(u));
                }
            }
        }
        Kind::FilterStudy => {
            check_unit(out, f("u"), float_of(t, "u"));
            check_grid(out, sec, float_of(t, "dt"), float_of(t, "horizon"));
            for k in ["depth", "particles", "csv_stride"] {
                if int_of(t, k) == Some(0) {
                    diag(out, f(k), "must be at least 1");
                }
            }
            if let Some(c) = str_of(t, "closure") {
                if c != "mckean_vlasov" && c != "independent_bm" {
                    diag(
                        out,
                        f("closure"),
                        "the linear oracle needs mckean_vlasov or independent_bm",
                    );
                }
                if c == "mckean_vlasov" && float_of(t, "u") == Some(1.0) {
                    diag(out, f("closure"), "the mckean_vlasov closure is disabled at u = 1");
                }
            }
        }
        Kind::DiscreteTime => {
            if let Some(a) = float_of(t, "a") {
                if !(a > 0.0 && a < 1.0) {
                    diag(out, f("a"), format!("a = {a} must lie in (0, 1)"));
                }
            }
            check_unit(out, f("u"), float_of(t, "u"));
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub out: PathBuf,
    pub replications: usize,
    /// the effective document, after command-line overrides
    pub document: Table,
}

impl ExperimentConfig {
    pub fn from_document(doc: Table, kind: Option<Kind>) -> std::result::Result<Self, Vec<Diagnostic>> {
        let diags = validate(&doc, kind);
        if !diags.is_empty() {
            return Err(diags);
        }
        let kind = kind
            .or_else(|| str_of(&doc, "kind").and_then(Kind::parse))
            .expect("validated");
        let mut doc = doc;
        doc.insert("kind".into(), Value::String(kind.name().into()));
        Ok(Self {
            kind,
            seed: int_of(&doc, "seed").unwrap(),
            out: PathBuf::from(str_of(&doc, "out").unwrap()),
            replications: int_of(&doc, "replications").unwrap() as usize,
            document: doc,
        })
    }

    pub fn section(&self) -> Section<'_> {
        static EMPTY: std::sync::OnceLock<Table> = std::sync::OnceLock::new();
        let t = self
            .document
            .get(self.kind.section())
            .and_then(Value::as_table)
            .unwrap_or_else(|| EMPTY.get_or_init(Table::new));
        Section(t)
    }

    pub fn snapshot(&self) -> String {
        toml::to_string(&self.document).unwrap_or_default()
    }
}

/// Typed access to a validated section.
pub struct Section<'a>(&'a Table);

impl Section<'_> {
    pub fn f64(&self, key: &str) -> f64 {
        float_of(self.0, key).unwrap_or(f64::NAN)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> f64 {
        float_of(self.0, key).unwrap_or(default)
    }

    pub fn opt_f64(&self, key: &str) -> Option<f64> {
        float_of(self.0, key)
    }

    pub fn usize(&self, key: &str) -> usize {
        int_of(self.0, key).unwrap_or(0) as usize
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        int_of(self.0, key).map(|v| v as usize).unwrap_or(default)
    }

    pub fn str_or<'b>(&'b self, key: &str, default: &'b str) -> &'b str {
        str_of(self.0, key).unwrap_or(default)
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        str_of(self.0, key)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> bool {
        self.0.get(key).and_then(Value::as_bool).unwrap_or(default)
    }

    pub fn f64s(&self, key: &str) -> Vec<f64> {
        floats_of(self.0, key).unwrap_or_default()
    }

    pub fn opt_f64s(&self, key: &str) -> Option<Vec<f64>> {
        floats_of(self.0, key)
    }

    pub fn usizes(&self, key: &str) -> Vec<usize> {
        ints_of(self.0, key)
            .unwrap_or_default()
            .into_iter()
            .map(|v| v as usize)
            .collect()
    }

    pub fn strs(&self, key: &str) -> Option<Vec<String>> {
        self.0
            .get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
    }

    pub fn kernel(&self) -> Result<DriftKernel> {
        parse_kernel(self.str_or("kernel", "linear_mean_revert"))
    }

    pub fn initial(&self) -> Result<InitialLaw> {
        InitialLaw::parse(self.str_or("initial", "point:0"))
    }
}
