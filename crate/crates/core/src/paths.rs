//! Path matrices on a uniform grid, initial laws, and the binary container.

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// `rows` paths, each sampled at `cols` grid points spaced `dt` apart.
/// Stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    rows: usize,
    cols: usize,
    dt: f64,
    data: Vec<f64>,
}

impl PathSet {
    pub fn new(rows: usize, cols: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Grid("a path needs at least one grid point".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Grid(format!("dt must be positive, got {dt}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for {rows}x{cols} paths",
                data.len()
            )));
        }
        Ok(Self { rows, cols, dt, data })
    }

    pub fn zeros(rows: usize, cols: usize, dt: f64) -> Result<Self> {
        Self::new(rows, cols, dt, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn steps(&self) -> usize {
        self.cols - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.value(i, k)).collect()
    }

    /// Grid index of time `t`; off-grid times are an error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let k = x.round();
        if !(k >= 0.0) || (x - k).abs() > 1e-9 * x.abs().max(1.0) || k as usize >= self.cols {
            return Err(Error::Grid(format!(
                "t = {t} is not a grid time (dt = {}, horizon = {})",
                self.dt,
                self.horizon()
            )));
        }
        Ok(k as usize)
    }

    pub fn same_grid(&self, other: &PathSet) -> bool {
        self.cols == other.cols && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    /// Keeps every `stride`-th grid point.
    pub fn thinned(&self, stride: usize) -> Result<PathSet> {
        if stride == 0 || self.steps() % stride != 0 {
            return Err(Error::Grid(format!(
                "stride {stride} does not divide {} steps",
                self.steps()
            )));
        }
        let cols = self.steps() / stride + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend((0..cols).map(|k| r[k * stride]));
        }
        PathSet::new(self.rows, cols, self.dt * stride as f64, data)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, dt: f64) -> Result<PathSet> {
        let n = rows.len();
        let cols = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("rows of unequal length".into()));
        }
        PathSet::new(n, cols, dt, rows.into_iter().flatten().collect())
    }
}

/// Law of the initial values.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(f64),
    Gaussian {
        mean: f64,
        var: f64,
    },
    /// Uniform draws from a sample list.
    Samples(Arc<Vec<f64>>),
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Point(c) if !c.is_finite() => Err(Error::Domain("initial point must be finite".into())),
            InitialLaw::Gaussian { mean, var } if !mean.is_finite() || !(*var >= 0.0) || !var.is_finite() => {
                Err(Error::Domain(format!("bad gaussian initial law N({mean}, {var})")))
            }
            InitialLaw::Samples(s) if s.is_empty() => Err(Error::InvalidLaw("empty initial sample list".into())),
            InitialLaw::Samples(s) if s.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidLaw("non-finite initial sample".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            InitialLaw::Point(c) => *c,
            InitialLaw::Gaussian { mean, var } => mean + var.sqrt() * rng::normal(rng),
            InitialLaw::Samples(s) => s[rng::index_below(rng, s.len())],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            InitialLaw::Point(c) => *c,
            InitialLaw::Gaussian { mean, .. } => *mean,
            InitialLaw::Samples(s) => crate::numeric::mean(s),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            InitialLaw::Point(_) => 0.0,
            InitialLaw::Gaussian { var, .. } => *var,
            InitialLaw::Samples(s) => {
                let m = crate::numeric::mean(s);
                s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s.len() as f64
            }
        }
    }

    /// Parses `point:c`, `gaussian:mean,var` or `file:path` (one value per line).
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("initial law '{spec}': {e}")))
        };
        let law = match kind.trim() {
            "point" => InitialLaw::Point(num(rest)?),
            "gaussian" => {
                let (m, v) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("initial law '{spec}': expected mean,var")))?;
                InitialLaw::Gaussian {
                    mean: num(m)?,
                    var: num(v)?,
                }
            }
            "file" => {
                let text = std::fs::read_to_string(rest.trim())
                    .map_err(|e| Error::Config(format!("initial law file '{}': {e}", rest.trim())))?;
                let vals = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(num)
                    .collect::<Result<Vec<f64>>>()?;
                InitialLaw::Samples(Arc::new(vals))
            }
            other => return Err(Error::Config(format!("unknown initial law kind '{other}'"))),
        };
        law.validate()?;
        Ok(law)
    }
}

/// Draw of the initial value for `(seed, replica, index)`.
pub fn initial_value(law: &InitialLaw, seed: u64, replica: u64, index: u64) -> f64 {
    let mut r = rng::stream(seed, rng::INITIAL, replica, index);
    law.sample(&mut r)
}

const MAGIC: &[u8; 4] = b"DCPE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Chain = 0,
    Law = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    pub seed: u64,
    pub wraparound: bool,
    pub generation: u64,
    pub closure: String,
}

pub fn write_container(w: &mut impl Write, header: &ContainerHeader, paths: &PathSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(header.kind as u8)?;
    w.write_u8(header.wraparound as u8)?;
    w.write_u64::<LittleEndian>(paths.rows() as u64)?;
    w.write_u64::<LittleEndian>(paths.steps() as u64)?;
    w.write_f64::<LittleEndian>(paths.dt())?;
    w.write_u64::<LittleEndian>(header.seed)?;
    w.write_u64::<LittleEndian>(header.generation)?;
    let tag = header.closure.as_bytes();
    w.write_u16::<LittleEndian>(tag.len() as u16)?;
    w.write_all(tag)?;
    for &v in paths.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> Result<(ContainerHeader, PathSet)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a path container".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let kind = match r.read_u8()? {
        0 => ContainerKind::Chain,
        1 => ContainerKind::Law,
        k => return Err(Error::Format(format!("unknown container kind {k}"))),
    };
    let wraparound = r.read_u8()? != 0;
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let steps = r.read_u64::<LittleEndian>()? as usize;
    let dt = r.read_f64::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    let generation = r.read_u64::<LittleEndian>()?;
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut tag = vec![0u8; len];
    r.read_exact(&mut tag)?;
    let closure = String::from_utf8(tag).map_err(|_| Error::Format("closure tag is not UTF-8".into()))?;
    let count = rows
        .checked_mul(steps + 1)
        .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(count.min(1 << 28));
    for _ in 0..count {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    let paths = PathSet::new(rows, steps + 1, dt, data)?;
    Ok((
        ContainerHeader {
            kind,
            seed,
            wraparound,
            generation,
            closure,
        },
        paths,
    ))
}

pub fn save_container(path: &Path, header: &ContainerHeader, paths: &PathSet) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_container(&mut w, header, paths)?;
    w.flush()?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<(ContainerHeader, PathSet)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_container(&mut r)
}

/// `t,particle,value` rows.
pub fn write_long_csv(w: &mut impl Write, paths: &PathSet) -> Result<()> {
    writeln!(w, "t,particle,value")?;
    for k in 0..paths.cols() {
        let t = paths.time(k);
        for i in 0..paths.rows() {
            writeln!(w, "{t},{i},{}", paths.value(i, k))?;
        }
    }
    Ok(())
}
