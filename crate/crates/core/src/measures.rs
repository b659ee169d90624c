//! Empirical measures, distances between laws, and residuals of the limiting
//! integral equations.

use crate::chain::PathEnsemble;
use crate::drift::{DriftKernel, MixtureWeight};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::paths::PathSet;
use crate::rng;
use serde::Serialize;

/// Weighted atoms in R^dim.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("dimension must be at least 1".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates for {} atoms of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLaw("non-finite atom".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidLaw("weights must be finite and nonnegative".into()));
        }
        if !weights.is_empty() {
            let s = pairwise_sum(&weights);
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidLaw(format!("weights sum to {s}, not 1")));
            }
        }
        Ok(Self { dim, points, weights })
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} coordinates do not split into dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = (0..self.len()).map(|i| self.weights[i] * f(self.point(i))).collect();
        pairwise_sum(&terms)
    }

    pub fn mean(&self, coord: usize) -> f64 {
        self.integrate(|p| p[coord])
    }

    pub fn project(&self, coords: &[usize]) -> Result<EmpiricalMeasure> {
        if coords.is_empty() || coords.iter().any(|&c| c >= self.dim) {
            return Err(Error::Dimension(format!(
                "bad projection {coords:?} of dimension {}",
                self.dim
            )));
        }
        let mut pts = Vec::with_capacity(self.len() * coords.len());
        for i in 0..self.len() {
            let p = self.point(i);
            pts.extend(coords.iter().map(|&c| p[c]));
        }
        EmpiricalMeasure::new(coords.len(), pts, self.weights.clone())
    }

    pub fn marginal(&self, coord: usize) -> Result<EmpiricalMeasure> {
        self.project(&[coord])
    }

    /// Merges coincident atoms; atoms come out in lexicographic order.
    pub fn dedup(&self) -> EmpiricalMeasure {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let cmp = |a: &usize, b: &usize| {
            for (x, y) in self.point(*a).iter().zip(self.point(*b)) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            std::cmp::Ordering::Equal
        };
        idx.sort_by(cmp);
        let mut pts: Vec<f64> = Vec::new();
        let mut ws: Vec<f64> = Vec::new();
        let mut last: Option<usize> = None;
        for &i in &idx {
            if let Some(j) = last {
                if self.point(i) == self.point(j) {
                    *ws.last_mut().unwrap() += self.weights[i];
                    continue;
                }
            }
            pts.extend_from_slice(self.point(i));
            ws.push(self.weights[i]);
            last = Some(i);
        }
        EmpiricalMeasure {
            dim: self.dim,
            points: pts,
            weights: ws,
        }
    }
}

/// (1/n) sum_i delta of (X_{t,i}, ..., X_{t,i+k-1}), indices mod n.
pub fn empirical_joint(ensemble: &PathEnsemble, t: f64, k: usize) -> Result<EmpiricalMeasure> {
    let col = ensemble.paths.index_of(t)?;
    chain_tuples_at(&ensemble.paths, col, k)
}

fn chain_tuples_at(paths: &PathSet, col: usize, k: usize) -> Result<EmpiricalMeasure> {
    let n = paths.rows();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("window k = {k} must lie in 1..={n}")));
    }
    let mut pts = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            pts.push(paths.value((i + j) % n, col));
        }
    }
    EmpiricalMeasure::uniform(k, pts)
}

/// W1 between 1-D measures by the quantile coupling. With `truncate`, the cost
/// |x - y| is replaced by |x - y| ∧ 1 along the same coupling, which gives an
/// upper bound for the truncated distance.
pub fn wasserstein1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, truncate: bool) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Dimension(format!(
            "W1 needs 1-D inputs, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidLaw("empty measure".into()));
    }
    let sorted = |m: &EmpiricalMeasure| {
        let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.point(i)[0], m.weight(i))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut terms = Vec::with_capacity(a.len() + b.len());
    loop {
        let m = ra.min(rb);
        let mut c = (a[i].0 - b[j].0).abs();
        if truncate {
            c = c.min(1.0);
        }
        terms.push(m * c);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Bounded Lipschitz test functions: |f| ≤ 1 and Lipschitz constant ≤ 1 in the Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub enum LipschitzFn {
    /// clamp(x_coord - center, -1, 1)
    Clamp { coord: usize, center: f64 },
    /// max(0, 1 - |x - center| / scale), scale ≥ 1
    Radial { center: Vec<f64>, scale: f64 },
}

impl LipschitzFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LipschitzFn::Clamp { coord, center } => (x[*coord] - center).clamp(-1.0, 1.0),
            LipschitzFn::Radial { center, scale } => {
                let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (1.0 - r / scale).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestFunctionFamily {
    pub dim: usize,
    pub members: Vec<LipschitzFn>,
}

impl TestFunctionFamily {
    pub fn standard(dim: usize) -> Self {
        let mut members = Vec::new();
        for coord in 0..dim {
            for c in [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0] {
                members.push(LipschitzFn::Clamp { coord, center: c });
            }
        }
        for c in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            for scale in [1.0, 2.0] {
                members.push(LipschitzFn::Radial {
                    center: vec![c; dim],
                    scale,
                });
            }
        }
        Self { dim, members }
    }

    /// Checks sup-norm and Lipschitz bounds on random pairs of points.
    pub fn verify(&self, samples: usize, seed: u64) -> Result<()> {
        let mut r = rng::stream(seed, rng::AUX, 3, 0);
        for (m, f) in self.members.iter().enumerate() {
            for _ in 0..samples {
                let x: Vec<f64> = (0..self.dim).map(|_| 4.0 * rng::normal(&mut r)).collect();
                let y: Vec<f64> = x.iter().map(|v| v + rng::normal(&mut r) * 0.5).collect();
                let (fx, fy) = (f.eval(&x), f.eval(&y));
                let d = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if fx.abs() > 1.0 || (fx - fy).abs() > d * (1.0 + 1e-12) {
                    return Err(Error::Domain(format!(
                        "member {m} violates the bounded-Lipschitz bounds"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// max over the family of |∫f dμ − ∫f dν|; a lower bound of the bounded-Lipschitz distance.
pub fn bounded_lipschitz_distance(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    family: &TestFunctionFamily,
) -> Result<f64> {
    if mu.dim() != nu.dim() || mu.dim() != family.dim {
        return Err(Error::Dimension("measures and family must share a dimension".into()));
    }
    if family.members.is_empty() {
        return Err(Error::Domain("empty test-function family".into()));
    }
    Ok(family
        .members
        .iter()
        .map(|f| (mu.integrate(|p| f.eval(p)) - nu.integrate(|p| f.eval(p))).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct PathDistance {
    pub value: f64,
    pub coupling: String,
    /// Always true: the value comes from an explicit coupling.
    pub upper_bound: bool,
    pub truncated: bool,
}

fn sup_cost(a: &[f64], b: &[f64], truncate: bool) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        m = m.max((x - y).abs());
    }
    if truncate {
        m.min(1.0)
    } else {
        m
    }
}

fn order_by(p: &PathSet, key: impl Fn(&[f64]) -> f64) -> Vec<usize> {
    let keys: Vec<f64> = (0..p.rows()).map(|i| key(p.row(i))).collect();
    let mut idx: Vec<usize> = (0..p.rows()).collect();
    idx.sort_by(|&i, &j| keys[i].total_cmp(&keys[j]).then(i.cmp(&j)));
    idx
}

/// Cost of the monotone (north-west corner) coupling of two orderings with uniform weights.
fn sorted_coupling_cost(a: &PathSet, ia: &[usize], b: &PathSet, ib: &[usize], truncate: bool) -> f64 {
    let (na, nb) = (a.rows(), b.rows());
    // integer mass units: each a-atom carries nb units, each b-atom na units
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (nb, na);
    let mut terms = Vec::with_capacity(na + nb);
    while i < na && j < nb {
        let m = ra.min(rb);
        terms.push(m as f64 * sup_cost(a.row(ia[i]), b.row(ib[j]), truncate));
        ra -= m;
        rb -= m;
        if ra == 0 {
            i += 1;
            ra = nb;
        }
        if rb == 0 {
            j += 1;
            rb = na;
        }
    }
    pairwise_sum(&terms) / (na as f64 * nb as f64)
}

/// Upper bound on the path-space distance D_T: minimum over explicit
/// couplings (index pairing, monotone couplings after sorting by a path
/// functional, and random pairings standing in for the independent coupling).
pub fn pathspace_distance(a: &PathSet, b: &PathSet, truncate: bool) -> Result<PathDistance> {
    if !a.same_grid(b) {
        return Err(Error::Grid("path ensembles live on different grids".into()));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidLaw("empty ensemble".into()));
    }
    let mut best = (f64::INFINITY, String::new());
    let mut consider = |v: f64, name: &str| {
        if v < best.0 {
            best = (v, name.to_string());
        }
    };
    if a.rows() == b.rows() {
        let terms: Vec<f64> = (0..a.rows()).map(|i| sup_cost(a.row(i), b.row(i), truncate)).collect();
        consider(pairwise_sum(&terms) / a.rows() as f64, "index");
    }
    let last = a.cols() - 1;
    let functionals: [(&str, Box<dyn Fn(&[f64]) -> f64>); 2] = [
        ("sorted-terminal", Box::new(move |p: &[f64]| p[last])),
        (
            "sorted-mean",
            Box::new(|p: &[f64]| p.iter().sum::<f64>() / p.len() as f64),
        ),
    ];
    for (name, f) in functionals.iter() {
        let ia = order_by(a, f);
        let ib = order_by(b, f);
        consider(sorted_coupling_cost(a, &ia, b, &ib, truncate), name);
    }
    if a.rows() == b.rows() {
        let n = a.rows();
        let mut r = rng::stream(0x5eed, rng::AUX, 4, 0);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng::index_below(&mut r, i + 1));
        }
        let terms: Vec<f64> = (0..n).map(|i| sup_cost(a.row(i), b.row(perm[i]), truncate)).collect();
        consider(pairwise_sum(&terms) / n as f64, "random-pairing");
    }
    Ok(PathDistance {
        value: best.0,
        coupling: best.1,
        upper_bound: true,
        truncated: truncate,
    })
}

/// Time-indexed empirical measures on a uniform grid.
#[derive(Debug, Clone)]
pub struct MeasurePath {
    pub dt: f64,
    pub measures: Vec<EmpiricalMeasure>,
}

impl MeasurePath {
    /// Tuples (level_1, ..., level_k) of each replica at each grid time.
    pub fn from_levels(levels: &[&PathSet]) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::Dimension("no levels given".into()))?;
        if levels.iter().any(|l| !l.same_grid(first) || l.rows() != first.rows()) {
            return Err(Error::Grid("levels must share replicas and grid".into()));
        }
        let k = levels.len();
        let measures = (0..first.cols())
            .map(|c| {
                let mut pts = Vec::with_capacity(first.rows() * k);
                for r in 0..first.rows() {
                    pts.extend(levels.iter().map(|l| l.value(r, c)));
                }
                EmpiricalMeasure::uniform(k, pts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dt: first.dt(),
            measures,
        })
    }

    /// Circular k-windows of a finite chain at each grid time.
    pub fn from_chain(ensemble: &PathEnsemble, k: usize) -> Result<Self> {
        let p = &ensemble.paths;
        let measures = (0..p.cols())
            .map(|c| chain_tuples_at(p, c, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt: p.dt(), measures })
    }

    pub fn dim(&self) -> usize {
        self.measures.first().map_or(0, |m| m.dim())
    }

    pub fn project(&self, coords: &[usize]) -> Result<Self> {
        let measures = self
            .measures
            .iter()
            .map(|m| m.project(coords))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt: self.dt, measures })
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let k = x.round();
        if !(k >= 0.0) || (x - k).abs() > 1e-9 * x.abs().max(1.0) || k as usize >= self.measures.len() {
            return Err(Error::Grid(format!("t = {t} is not a grid time")));
        }
        Ok(k as usize)
    }
}

/// C² test functions with compact support on R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bump {
    /// e·exp(-1/(1-s²)), s = (x - center)/radius
    Smooth { center: f64, radius: f64 },
    /// (1 - s²)³
    Poly { center: f64, radius: f64 },
}

impl Bump {
    pub fn builtins() -> [Bump; 3] {
        [
            Bump::Smooth {
                center: 0.0,
                radius: 2.0,
            },
            Bump::Poly {
                center: 0.0,
                radius: 2.5,
            },
            Bump::Smooth {
                center: 0.5,
                radius: 1.5,
            },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Bump::Smooth { center, radius } => format!("smooth({center},{radius})"),
            Bump::Poly { center, radius } => format!("poly({center},{radius})"),
        }
    }

    /// (g, g', g'')
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            Bump::Smooth { center, radius } => {
                let s = (x - center) / radius;
                if s.abs() >= 1.0 {
                    return (0.0, 0.0, 0.0);
                }
                let q = 1.0 - s * s;
                let g = (1.0 - 1.0 / q).exp();
                let h1 = -2.0 * s / (q * q);
                let h2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
                (g, g * h1 / radius, g * (h1 * h1 + h2) / (radius * radius))
            }
            Bump::Poly { center, radius } => {
                let s = (x - center) / radius;
                if s.abs() >= 1.0 {
                    return (0.0, 0.0, 0.0);
                }
                let q = 1.0 - s * s;
                (
                    q * q * q,
                    -6.0 * s * q * q / radius,
                    (-6.0 * q * q + 24.0 * s * s * q) / (radius * radius),
                )
            }
        }
    }
}

/// Test functions on R^k built from 1-D bumps.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFnK {
    Product(Vec<Bump>),
    Sum(Vec<Bump>),
}

impl TestFnK {
    fn factors(&self) -> &[Bump] {
        match self {
            TestFnK::Product(f) | TestFnK::Sum(f) => f,
        }
    }

    pub fn dim(&self) -> usize {
        self.factors().len()
    }

    /// (g, grad, diagonal of the Hessian)
    fn eval(&self, y: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let f = self.factors();
        let vals: Vec<(f64, f64, f64)> = f.iter().zip(y).map(|(b, &x)| b.eval(x)).collect();
        match self {
            TestFnK::Sum(_) => {
                for (l, v) in vals.iter().enumerate() {
                    grad[l] = v.1;
                    hess[l] = v.2;
                }
                vals.iter().map(|v| v.0).sum()
            }
            TestFnK::Product(_) => {
                let g: f64 = vals.iter().map(|v| v.0).product();
                for l in 0..vals.len() {
                    let others: f64 = vals
                        .iter()
                        .enumerate()
                        .filter(|(m, _)| *m != l)
                        .map(|(_, v)| v.0)
                        .product();
                    grad[l] = vals[l].1 * others;
                    hess[l] = vals[l].2 * others;
                }
                g
            }
        }
    }
}

/// ∫ b(t, x, y) m(dy) for each atom x of a 1-D measure.
fn mean_field_at(kernel: &DriftKernel, t: f64, xs: &[f64], m: &EmpiricalMeasure) -> Result<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let mut acc = Vec::with_capacity(m.len());
            for j in 0..m.len() {
                acc.push(m.weight(j) * kernel.eval(t, x, m.point(j)[0])?);
            }
            Ok(pairwise_sum(&acc))
        })
        .collect()
}

fn check_paths(a: &MeasurePath, b: &MeasurePath) -> Result<()> {
    if a.measures.len() != b.measures.len() || (a.dt - b.dt).abs() > 1e-12 * a.dt {
        return Err(Error::Grid("measure paths live on different grids".into()));
    }
    Ok(())
}

/// Residual of the k-tuple integral equation at grid time `t`:
/// ∫g dM_t − ∫g dM_0 − ∫_0^t A g ds, time integral by the trapezoid rule.
/// `joint_k1` carries tuples one longer than `joint_k`, its last coordinate
/// being the neighbour of the last coordinate of `joint_k`; `marginal` is the
/// one-dimensional law used in the mean-field term.
pub fn generator_residual_k(
    joint_k: &MeasurePath,
    joint_k1: &MeasurePath,
    marginal: &MeasurePath,
    kernel: &DriftKernel,
    u: MixtureWeight,
    g: &TestFnK,
    t: f64,
) -> Result<f64> {
    let k = g.dim();
    if joint_k.dim() != k || joint_k1.dim() != k + 1 || marginal.dim() != 1 {
        return Err(Error::Dimension(format!(
            "expected dimensions {k}, {} and 1, got {}, {} and {}",
            k + 1,
            joint_k.dim(),
            joint_k1.dim(),
            marginal.dim()
        )));
    }
    check_paths(joint_k, joint_k1)?;
    check_paths(joint_k, marginal)?;
    let end = joint_k.index_of(t)?;
    let u = u.get();
    let mut grad = vec![0.0; k];
    let mut hess = vec![0.0; k];
    let integral_g = |m: &EmpiricalMeasure, grad: &mut [f64], hess: &mut [f64]| {
        let terms: Vec<f64> = (0..m.len())
            .map(|i| m.weight(i) * g.eval(m.point(i), grad, hess))
            .collect();
        pairwise_sum(&terms)
    };
    let mut gen = Vec::with_capacity(end + 1);
    for s in 0..=end {
        let ts = s as f64 * joint_k.dt;
        let mk = &joint_k.measures[s];
        let mut total = 0.0;
        if u > 0.0 {
            let m1 = &joint_k1.measures[s];
            let mut terms = Vec::with_capacity(m1.len());
            for i in 0..m1.len() {
                let y = m1.point(i);
                g.eval(&y[..k], &mut grad, &mut hess);
                let mut acc = 0.0;
                for l in 0..k {
                    if grad[l] != 0.0 {
                        acc += kernel.eval(ts, y[l], y[l + 1])? * grad[l];
                    }
                }
                terms.push(m1.weight(i) * acc);
            }
            total += u * pairwise_sum(&terms);
        }
        let mut terms_mf = Vec::with_capacity(mk.len());
        let mut terms_d2 = Vec::with_capacity(mk.len());
        let m = &marginal.measures[s];
        let affine = kernel.affine_coeffs().map(|(a_x, a_y, c)| (a_x, a_y * m.mean(0) + c));
        for i in 0..mk.len() {
            let y = mk.point(i);
            g.eval(y, &mut grad, &mut hess);
            terms_d2.push(mk.weight(i) * hess.iter().sum::<f64>());
            if u < 1.0 {
                let mut acc = 0.0;
                for l in 0..k {
                    if grad[l] != 0.0 {
                        let mf = match affine {
                            Some((a_x, shift)) => a_x * y[l] + shift,
                            None => mean_field_at(kernel, ts, &y[l..l + 1], m)?[0],
                        };
                        acc += mf * grad[l];
                    }
                }
                terms_mf.push(mk.weight(i) * acc);
            }
        }
        if u < 1.0 {
            total += (1.0 - u) * pairwise_sum(&terms_mf);
        }
        total += 0.5 * pairwise_sum(&terms_d2);
        gen.push(total);
    }
    let g_t = integral_g(&joint_k.measures[end], &mut grad, &mut hess);
    let g_0 = integral_g(&joint_k.measures[0], &mut grad, &mut hess);
    Ok(g_t - g_0 - crate::numeric::trapezoid(&gen, joint_k.dt))
}

/// Residual of the pair equation for a one-dimensional test function `g`.
pub fn generator_residual(
    joint: &MeasurePath,
    marginal: &MeasurePath,
    kernel: &DriftKernel,
    u: MixtureWeight,
    g: Bump,
    t: f64,
) -> Result<f64> {
    if joint.dim() != 2 {
        return Err(Error::Dimension(format!("joint law must be 2-D, got {}", joint.dim())));
    }
    let first = joint.project(&[0])?;
    generator_residual_k(&first, joint, marginal, kernel, u, &TestFnK::Product(vec![g]), t)
}

#[derive(Debug, Clone)]
pub struct FluctuationConfig {
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Nested depth is n + extra_depth.
    pub extra_depth: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationRow {
    pub n: usize,
    pub statistic: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationReport {
    pub rows: Vec<FluctuationRow>,
    /// least-squares slope of log statistic against log n
    pub slope: f64,
    /// every statistic is at most 1.5 times the first one
    pub bounded: bool,
}

/// (1/√n) Σ_i E[sup_t |X_{t,i} − X̄_{t,i}|] for the chain of n and the nested
/// chain driven by the same noise: particle i and level i+1 share a stream.
pub fn fluctuation_study(
    kernel: &DriftKernel,
    u: MixtureWeight,
    law: &crate::limit::LawPath,
    config: &FluctuationConfig,
) -> Result<FluctuationReport> {
    use crate::chain::{simulate_chain_replica, ChainConfig};
    use crate::limit::{Closure, NestedRun};
    use rayon::prelude::*;
    if config.n_list.is_empty() || config.replicas < 2 {
        return Err(Error::Domain("need at least one n and two replicas".into()));
    }
    let steps = crate::chain::grid_steps(config.dt, config.horizon)?;
    let closure = if u.get() < 1.0 {
        Closure::McKeanVlasov
    } else {
        Closure::IndependentBm
    };
    let initial = crate::paths::InitialLaw::Point(0.0);
    let mut rows = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        if n == 0 {
            return Err(Error::Domain("n must be positive".into()));
        }
        let depth = n + config.extra_depth;
        let chain_cfg = ChainConfig::new(n, u.get(), config.dt, config.horizon, config.seed)?;
        let run = NestedRun::prepare(
            kernel,
            u,
            law,
            &closure,
            &initial,
            depth,
            config.dt,
            steps,
            config.seed,
            n,
        )?;
        let per: Vec<f64> = (0..config.replicas)
            .into_par_iter()
            .map(|r| {
                let chain = simulate_chain_replica(&chain_cfg, kernel, r as u64)?;
                let mut total = 0.0;
                run.replica(r as u64, &mut |level, path| {
                    if level <= n {
                        let x = chain.paths.row(level - 1);
                        total += x.iter().zip(path).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    }
                    Ok(())
                })?;
                Ok(total / (n as f64).sqrt())
            })
            .collect::<Result<_>>()?;
        let (m, v) = crate::numeric::mean_var(&per);
        rows.push(FluctuationRow {
            n,
            statistic: m,
            stderr: (v / per.len() as f64).sqrt(),
        });
    }
    let base = rows[0].statistic;
    let bounded = rows.iter().all(|r| r.statistic <= 1.5 * base);
    let slope = if rows.len() < 2 || base == 0.0 {
        0.0
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.statistic.max(f64::MIN_POSITIVE).ln()).collect();
        let mx = crate::numeric::mean(&xs);
        let my = crate::numeric::mean(&ys);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    Ok(FluctuationReport { rows, slope, bounded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn measure_validation() {
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![0.0, f64::NAN], vec![0.5, 0.5]).is_err());
        assert!(EmpiricalMeasure::new(2, vec![0.0, 1.0, 2.0], vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn w1_examples() {
        let a = m1(&[0.0, 1.0, 3.0]);
        assert_eq!(wasserstein1_1d(&a, &a, false).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&m1(&[0.0]), &m1(&[1.0]), false).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&m1(&[0.0]), &m1(&[3.0]), true).unwrap(), 1.0);
        // unequal sizes: {0,2} vs {1}: 0.5*1 + 0.5*1
        assert!((wasserstein1_1d(&m1(&[0.0, 2.0]), &m1(&[1.0]), false).unwrap() - 1.0).abs() < 1e-15);
        let w = EmpiricalMeasure::new(1, vec![0.0, 4.0], vec![0.75, 0.25]).unwrap();
        assert!((wasserstein1_1d(&w, &m1(&[0.0]), false).unwrap() - 1.0).abs() < 1e-15);
        assert!(wasserstein1_1d(&EmpiricalMeasure::uniform(2, vec![0.0, 0.0]).unwrap(), &a, false).is_err());
    }

    #[test]
    fn bl_examples() {
        let fam = TestFunctionFamily::standard(1);
        fam.verify(200, 1).unwrap();
        let single = TestFunctionFamily {
            dim: 1,
            members: vec![LipschitzFn::Clamp { coord: 0, center: 0.0 }],
        };
        assert_eq!(
            bounded_lipschitz_distance(&m1(&[0.0]), &m1(&[3.0]), &single).unwrap(),
            1.0
        );
        // the clamp centred at 1.5 separates the atoms by the full 2
        assert_eq!(bounded_lipschitz_distance(&m1(&[0.0]), &m1(&[3.0]), &fam).unwrap(), 2.0);
        assert_eq!(
            bounded_lipschitz_distance(&m1(&[0.2, 0.4]), &m1(&[0.2, 0.4]), &fam).unwrap(),
            0.0
        );
        let empty = TestFunctionFamily {
            dim: 1,
            members: vec![],
        };
        assert!(bounded_lipschitz_distance(&m1(&[0.0]), &m1(&[1.0]), &empty).is_err());
    }

    #[test]
    fn joint_examples() {
        let p = PathSet::new(2, 1, 0.1, vec![1.0, 2.0]).unwrap();
        let e = PathEnsemble {
            paths: p,
            seed: 0,
            wraparound: true,
        };
        let j = empirical_joint(&e, 0.0, 2).unwrap().dedup();
        assert_eq!(j.len(), 2);
        assert_eq!(j.point(0), &[1.0, 2.0]);
        assert_eq!(j.point(1), &[2.0, 1.0]);
        assert_eq!(j.weight(0), 0.5);
        let c = PathEnsemble {
            paths: PathSet::new(3, 1, 0.1, vec![4.0; 3]).unwrap(),
            seed: 0,
            wraparound: true,
        };
        let j = empirical_joint(&c, 0.0, 3).unwrap().dedup();
        assert_eq!(j.len(), 1);
        assert_eq!(j.weight(0), 1.0);
        assert!(empirical_joint(&c, 0.05, 1).is_err());
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        for b in Bump::builtins() {
            for &x in &[-1.2, -0.3, 0.0, 0.4, 1.1] {
                let h = 1e-5;
                let (g, d1, d2) = b.eval(x);
                let (gp, d1p, _) = b.eval(x + h);
                let (gm, d1m, _) = b.eval(x - h);
                assert!(((gp - gm) / (2.0 * h) - d1).abs() < 1e-6, "{b:?} at {x}");
                assert!(((d1p - d1m) / (2.0 * h) - d2).abs() < 1e-5, "{b:?} at {x}");
                assert!(g <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn frozen_ensemble_residual_is_zero() {
        let p = PathSet::new(3, 11, 0.1, (0..33).map(|i| ((i / 11) as f64) * 0.3 - 0.3).collect()).unwrap();
        let mp = MeasurePath::from_levels(&[&p, &p]).unwrap();
        let marg = MeasurePath::from_levels(&[&p]).unwrap();
        // constant paths: the g'' term must vanish on the atoms for an exact zero
        let g = Bump::Poly {
            center: 10.0,
            radius: 1.0,
        };
        let r = generator_residual(
            &mp,
            &marg,
            &DriftKernel::zero(),
            MixtureWeight::new(0.5).unwrap(),
            g,
            1.0,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn fluctuation_vanishes_for_zero_kernel() {
        let cfg = FluctuationConfig {
            n_list: vec![3, 6],
            replicas: 4,
            dt: 0.1,
            horizon: 1.0,
            seed: 2,
            extra_depth: 2,
        };
        for u in [0.0, 0.5, 1.0] {
            let rep = fluctuation_study(
                &DriftKernel::zero(),
                MixtureWeight::new(u).unwrap(),
                &crate::limit::LawPath::Absent,
                &cfg,
            )
            .unwrap();
            assert!(rep.rows.iter().all(|r| r.statistic == 0.0));
            assert!(rep.bounded);
        }
    }
}
