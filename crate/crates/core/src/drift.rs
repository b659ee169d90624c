//! Interaction kernels and the mixed neighbour/mean-field drift.

use crate::error::{ensure_finite, Error, Result};
use crate::measures::EmpiricalMeasure;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// values[i * ys.len() + j] = b(xs[i], ys[j])
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    LinearMeanRevert,
    LinearRepulsive,
    Affine { a_x: f64, a_y: f64, c: f64 },
    Tabulated(Grid2),
}

/// A time-homogeneous interaction kernel b(t, x, y) with its Lipschitz and
/// growth constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftKernel {
    kind: KernelKind,
    lipschitz: f64,
    growth: f64,
}

impl DriftKernel {
    /// b(x, y) = -(x - y)
    pub fn linear_mean_revert() -> Self {
        Self {
            kind: KernelKind::LinearMeanRevert,
            lipschitz: 1.0,
            growth: 1.0,
        }
    }

    /// b(x, y) = x - y
    pub fn linear_repulsive() -> Self {
        Self {
            kind: KernelKind::LinearRepulsive,
            lipschitz: 1.0,
            growth: 1.0,
        }
    }

    /// b(x, y) = a_x x + a_y y + c
    pub fn affine(a_x: f64, a_y: f64, c: f64) -> Result<Self> {
        ensure_finite("a_x", a_x)?;
        ensure_finite("a_y", a_y)?;
        ensure_finite("c", c)?;
        let lipschitz = a_x.abs().max(a_y.abs());
        let growth = lipschitz.max(c.abs());
        Ok(Self {
            kind: KernelKind::Affine { a_x, a_y, c },
            lipschitz,
            growth,
        })
    }

    pub fn zero() -> Self {
        Self {
            kind: KernelKind::Affine {
                a_x: 0.0,
                a_y: 0.0,
                c: 0.0,
            },
            lipschitz: 0.0,
            growth: 0.0,
        }
    }

    pub fn tabulated(grid: Grid2) -> Result<Self> {
        let (nx, ny) = (grid.xs.len(), grid.ys.len());
        if nx < 2 || ny < 2 {
            return Err(Error::Domain(
                "tabulated kernel needs at least 2 points per axis".into(),
            ));
        }
        if grid.values.len() != nx * ny {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                nx * ny,
                grid.values.len()
            )));
        }
        for axis in [&grid.xs, &grid.ys] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(
                    "grid coordinates must be finite and strictly increasing".into(),
                ));
            }
        }
        if grid.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tabulated values must be finite".into()));
        }
        let v = |i: usize, j: usize| grid.values[i * ny + j];
        let mut lx: f64 = 0.0;
        let mut ly: f64 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                if i + 1 < nx {
                    lx = lx.max(((v(i + 1, j) - v(i, j)) / (grid.xs[i + 1] - grid.xs[i])).abs());
                }
                if j + 1 < ny {
                    ly = ly.max(((v(i, j + 1) - v(i, j)) / (grid.ys[j + 1] - grid.ys[j])).abs());
                }
            }
        }
        let lipschitz = lx.max(ly);
        let min_abs = |a: f64, b: f64| {
            if a <= 0.0 && b >= 0.0 {
                0.0
            } else {
                a.abs().min(b.abs())
            }
        };
        let mut growth: f64 = 0.0;
        for i in 0..nx - 1 {
            for j in 0..ny - 1 {
                let top = v(i, j)
                    .abs()
                    .max(v(i + 1, j).abs())
                    .max(v(i, j + 1).abs())
                    .max(v(i + 1, j + 1).abs());
                let floor = 1.0 + min_abs(grid.xs[i], grid.xs[i + 1]) + min_abs(grid.ys[j], grid.ys[j + 1]);
                growth = growth.max(top / floor);
            }
        }
        Ok(Self {
            kind: KernelKind::Tabulated(grid),
            lipschitz,
            growth: growth.max(lipschitz),
        })
    }

    /// Loads a `x,y,value` CSV grid, x outer and y inner.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty kernel file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["x", "y", "value"] {
            return Err(Error::Format(format!("expected header x,y,value, got {header}")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let f: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", ln + 2)))?;
            if f.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 fields", ln + 2)));
            }
            rows.push((f[0], f[1], f[2]));
        }
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for &(x, y, _) in &rows {
            if xs.last() != Some(&x) {
                xs.push(x);
            }
            if xs.len() == 1 {
                ys.push(y);
            }
        }
        let ny = ys.len();
        if rows.len() != xs.len() * ny {
            return Err(Error::Format("grid is not rectangular".into()));
        }
        for (k, &(x, y, _)) in rows.iter().enumerate() {
            if x != xs[k / ny] || y != ys[k % ny] {
                return Err(Error::Format(format!("row {} breaks row-major order", k + 2)));
            }
        }
        let values = rows.iter().map(|r| r.2).collect();
        Self::tabulated(Grid2 { xs, ys, values })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth
    }

    /// (a_x, a_y, c) when the kernel is affine.
    pub fn affine_coeffs(&self) -> Option<(f64, f64, f64)> {
        match self.kind {
            KernelKind::LinearMeanRevert => Some((-1.0, 1.0, 0.0)),
            KernelKind::LinearRepulsive => Some((1.0, -1.0, 0.0)),
            KernelKind::Affine { a_x, a_y, c } => Some((a_x, a_y, c)),
            KernelKind::Tabulated(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.affine_coeffs() == Some((0.0, 0.0, 0.0))
    }

    pub fn name(&self) -> String {
        match &self.kind {
            KernelKind::LinearMeanRevert => "linear_mean_revert".into(),
            KernelKind::LinearRepulsive => "linear_repulsive".into(),
            KernelKind::Affine { a_x, a_y, c } => format!("affine({a_x},{a_y},{c})"),
            KernelKind::Tabulated(g) => format!("tabulated({}x{})", g.xs.len(), g.ys.len()),
        }
    }

    #[inline]
    pub fn eval(&self, _t: f64, x: f64, y: f64) -> Result<f64> {
        match &self.kind {
            KernelKind::LinearMeanRevert => Ok(y - x),
            KernelKind::LinearRepulsive => Ok(x - y),
            KernelKind::Affine { a_x, a_y, c } => Ok(a_x * x + a_y * y + c),
            KernelKind::Tabulated(g) => bilinear(g, x, y),
        }
    }
}

fn locate(axis: &[f64], v: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if !(v >= axis[0] && v <= axis[n - 1]) {
        return None;
    }
    let i = match axis.partition_point(|&a| a <= v) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    Some((i, (v - axis[i]) / (axis[i + 1] - axis[i])))
}

fn bilinear(g: &Grid2, x: f64, y: f64) -> Result<f64> {
    let (i, s) = locate(&g.xs, x).ok_or_else(|| Error::Domain(format!("x = {x} outside tabulated range")))?;
    let (j, r) = locate(&g.ys, y).ok_or_else(|| Error::Domain(format!("y = {y} outside tabulated range")))?;
    let ny = g.ys.len();
    let v = |a: usize, b: usize| g.values[a * ny + b];
    Ok((1.0 - s) * (1.0 - r) * v(i, j)
        + s * (1.0 - r) * v(i + 1, j)
        + (1.0 - s) * r * v(i, j + 1)
        + s * r * v(i + 1, j + 1))
}

pub fn eval_kernel(kernel: &DriftKernel, t: f64, x: f64, y: f64) -> Result<f64> {
    kernel.eval(t, x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MixtureWeight(f64);

impl MixtureWeight {
    pub fn new(u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("mixture weight must lie in [0,1], got {u}")));
        }
        Ok(Self(u))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum MeanFieldRepr {
    SampleCloud(EmpiricalMeasure),
    KnownMean(f64),
    /// Point mass at the origin.
    Zero,
}

/// A law at a fixed time, used for the mean-field term.
#[derive(Debug, Clone)]
pub struct MeanFieldHandle {
    pub repr: MeanFieldRepr,
    pub provenance: String,
}

impl MeanFieldHandle {
    pub fn sample_cloud(m: EmpiricalMeasure, provenance: impl Into<String>) -> Result<Self> {
        if m.dim() != 1 {
            return Err(Error::Dimension(format!(
                "mean-field law must be 1-D, got dimension {}",
                m.dim()
            )));
        }
        Ok(Self {
            repr: MeanFieldRepr::SampleCloud(m),
            provenance: provenance.into(),
        })
    }

    pub fn known_mean(m: f64) -> Self {
        Self {
            repr: MeanFieldRepr::KnownMean(m),
            provenance: "analytic mean".into(),
        }
    }

    pub fn zero() -> Self {
        Self {
            repr: MeanFieldRepr::Zero,
            provenance: "point mass at 0".into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(&self.repr, MeanFieldRepr::SampleCloud(m) if m.len() == 0)
    }

    /// Integral of b(t, x, y) over y from this law.
    pub fn integrate_kernel(&self, kernel: &DriftKernel, t: f64, x: f64) -> Result<f64> {
        match &self.repr {
            MeanFieldRepr::Zero => kernel.eval(t, x, 0.0),
            MeanFieldRepr::KnownMean(m) => match kernel.affine_coeffs() {
                Some((a_x, a_y, c)) => Ok(a_x * x + a_y * m + c),
                None => Err(Error::InvalidLaw(
                    "a known mean determines the integral only for affine kernels".into(),
                )),
            },
            MeanFieldRepr::SampleCloud(cloud) => {
                if cloud.len() == 0 {
                    return Err(Error::InvalidLaw("empty sample cloud".into()));
                }
                if let Some((a_x, a_y, c)) = kernel.affine_coeffs() {
                    return Ok(a_x * x + a_y * cloud.mean(0) + c);
                }
                let mut acc = 0.0;
                for i in 0..cloud.len() {
                    acc += cloud.weight(i) * kernel.eval(t, x, cloud.point(i)[0])?;
                }
                Ok(acc)
            }
        }
    }
}

/// u b(t, x, neighbor) + (1 - u) \int b(t, x, y) law(dy)
pub fn eval_mixed_drift(
    kernel: &DriftKernel,
    t: f64,
    x: f64,
    neighbor: f64,
    law: &MeanFieldHandle,
    u: MixtureWeight,
) -> Result<f64> {
    let u = u.get();
    if u == 1.0 {
        return kernel.eval(t, x, neighbor);
    }
    let mf = law.integrate_kernel(kernel, t, x)?;
    if u == 0.0 {
        return Ok(mf);
    }
    Ok(u * kernel.eval(t, x, neighbor)? + (1.0 - u) * mf)
}

/// b(t, x, z) - \int b(t, x, y) law(dy)
pub fn centered_kernel(kernel: &DriftKernel, t: f64, x: f64, z: f64, law: &MeanFieldHandle) -> Result<f64> {
    Ok(kernel.eval(t, x, z)? - law.integrate_kernel(kernel, t, x)?)
}
