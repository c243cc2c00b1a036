//! Finite samples of geodesic model spaces with exact metrics and
//! constant-speed geodesic oracles: segment, circle, Euclidean disk and round sphere.

use crate::error::{domain, Error, Result};
use crate::scalar::{cnt, lit, max_of, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Model coordinates of a point. Segment and circle use `p[0]` (position,
/// resp. arclength angle in `[0, L)`); the disk uses `(p[0], p[1])`; the
/// sphere uses ambient coordinates in `R^3`.
pub type Coords<T> = [T; 3];

/// Values aligned with the sample points.
pub type Potential<T> = Vec<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiskLayout {
    /// Square lattice clipped to the disk; contains every vertical chord through lattice columns.
    #[default]
    Cartesian,
    /// Concentric rings with spacing matching the lattice density.
    Polar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpaceKind<T> {
    Segment { a: T, b: T },
    Circle { circumference: T },
    Disk { radius: T, layout: DiskLayout },
    Sphere { radius: T },
}

#[derive(Clone, Debug)]
pub struct SampledSpace<T> {
    pub kind: SpaceKind<T>,
    pub points: Vec<Coords<T>>,
    fill_radius: T,
}

/// Tolerance under which two sphere points count as antipodal.
const ANTIPODAL_TOL: f64 = 1e-9;

pub fn make_space<T: Real>(kind: SpaceKind<T>, resolution: usize) -> Result<SampledSpace<T>> {
    if resolution < 16 {
        return domain(format!("resolution must be at least 16, got {resolution}"));
    }
    let z = T::zero();
    let (points, fill) = match kind {
        SpaceKind::Segment { a, b } => {
            if !(b > a) {
                return domain("segment needs a < b");
            }
            let h = (b - a) / cnt(resolution - 1);
            let pts = (0..resolution)
                .map(|i| [if i + 1 == resolution { b } else { a + cnt::<T>(i) * h }, z, z])
                .collect();
            (pts, h / lit(2.0))
        }
        SpaceKind::Circle { circumference } => {
            if !(circumference > z) {
                return domain("circle needs a positive circumference");
            }
            let h = circumference / cnt(resolution);
            ((0..resolution).map(|i| [cnt::<T>(i) * h, z, z]).collect(), h / lit(2.0))
        }
        SpaceKind::Disk { radius, layout } => {
            if !(radius > z) {
                return domain("disk needs a positive radius");
            }
            let pts = match layout {
                DiskLayout::Cartesian => disk_cartesian(radius, resolution),
                DiskLayout::Polar => disk_polar(radius, resolution),
            };
            let fill = probe_fill_radius(&kind, &pts);
            (pts, fill)
        }
        SpaceKind::Sphere { radius } => {
            if !(radius > z) {
                return domain("sphere needs a positive radius");
            }
            let pts = fibonacci_sphere(radius, resolution);
            let fill = probe_fill_radius(&kind, &pts);
            (pts, fill)
        }
    };
    Ok(SampledSpace { kind, points, fill_radius: fill })
}

fn disk_cartesian<T: Real>(radius: T, resolution: usize) -> Vec<Coords<T>> {
    let spacing = radius * (T::PI() / cnt(resolution)).sqrt();
    let m = (radius / spacing).floor().to_i64().unwrap_or(0);
    let r2 = radius * radius * (T::one() + lit(1e-12));
    let mut pts = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            let x = lit::<T>(i as f64) * spacing;
            let y = lit::<T>(j as f64) * spacing;
            if x * x + y * y <= r2 {
                pts.push([x, y, T::zero()]);
            }
        }
    }
    pts
}

fn disk_polar<T: Real>(radius: T, resolution: usize) -> Vec<Coords<T>> {
    let spacing = radius * (T::PI() / cnt(resolution)).sqrt();
    let rings = (radius / spacing).round().to_usize().unwrap_or(1).max(1);
    let mut pts = vec![[T::zero(); 3]];
    for k in 1..=rings {
        let r = radius * cnt(k) / cnt(rings);
        let count = ((lit::<T>(2.0) * T::PI() * r / spacing).round().to_usize().unwrap_or(6)).max(6);
        for m in 0..count {
            let a = lit::<T>(2.0) * T::PI() * cnt(m) / cnt(count);
            pts.push([r * a.cos(), r * a.sin(), T::zero()]);
        }
    }
    pts
}

fn fibonacci_sphere<T: Real>(radius: T, n: usize) -> Vec<Coords<T>> {
    let golden = T::PI() * (lit::<T>(3.0) - lit::<T>(5.0).sqrt());
    (0..n)
        .map(|i| {
            let z = T::one() - lit::<T>(2.0) * (cnt::<T>(i) + lit(0.5)) / cnt(n);
            let r = (T::one() - z * z).max(T::zero()).sqrt();
            let a = golden * cnt(i);
            [radius * r * a.cos(), radius * r * a.sin(), radius * z]
        })
        .collect()
}

fn probe_fill_radius<T: Real>(kind: &SpaceKind<T>, pts: &[Coords<T>]) -> T {
    let probes: Vec<Coords<T>> = match *kind {
        SpaceKind::Disk { radius, .. } => {
            let m = 80usize;
            let mut v = Vec::new();
            for i in 0..=m {
                for j in 0..=m {
                    let x = radius * (lit::<T>(2.0) * cnt(i) / cnt(m) - T::one());
                    let y = radius * (lit::<T>(2.0) * cnt(j) / cnt(m) - T::one());
                    if x * x + y * y <= radius * radius {
                        v.push([x, y, T::zero()]);
                    }
                }
            }
            v
        }
        SpaceKind::Sphere { radius } => fibonacci_sphere(radius, 4 * pts.len() + 1),
        _ => return T::zero(),
    };
    let worst = probes
        .par_iter()
        .map(|p| pts.iter().map(|q| metric(kind, p, q)).fold(T::infinity(), T::min))
        .reduce(|| T::zero(), T::max);
    worst
}

/// Wraps `x` into `(-L/2, L/2]`.
pub fn wrap_signed<T: Real>(x: T, l: T) -> T {
    let half = l / lit(2.0);
    let mut y = x - l * (x / l).round();
    if y <= -half {
        y = y + l;
    }
    if y > half {
        y = y - l;
    }
    y
}

fn norm3<T: Real>(p: &Coords<T>) -> T {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn dot3<T: Real>(p: &Coords<T>, q: &Coords<T>) -> T {
    p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
}

fn cross3<T: Real>(p: &Coords<T>, q: &Coords<T>) -> Coords<T> {
    [p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]]
}

/// Angle between two points on a sphere, stable near 0 and pi.
fn sphere_angle<T: Real>(p: &Coords<T>, q: &Coords<T>) -> T {
    norm3(&cross3(p, q)).atan2(dot3(p, q))
}

fn metric<T: Real>(kind: &SpaceKind<T>, p: &Coords<T>, q: &Coords<T>) -> T {
    match *kind {
        SpaceKind::Segment { .. } => (p[0] - q[0]).abs(),
        SpaceKind::Circle { circumference } => wrap_signed(q[0] - p[0], circumference).abs(),
        SpaceKind::Disk { .. } => ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt(),
        SpaceKind::Sphere { radius } => radius * sphere_angle(p, q),
    }
}

impl<T: Real> SampledSpace<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance from a point of the model to the sample (probed for disk and sphere).
    pub fn fill_radius(&self) -> T {
        self.fill_radius
    }

    pub fn diameter(&self) -> T {
        match self.kind {
            SpaceKind::Segment { a, b } => b - a,
            SpaceKind::Circle { circumference } => circumference / lit(2.0),
            SpaceKind::Disk { radius, .. } => lit::<T>(2.0) * radius,
            SpaceKind::Sphere { radius } => T::PI() * radius,
        }
    }

    pub fn dist(&self, i: usize, j: usize) -> T {
        metric(&self.kind, &self.points[i], &self.points[j])
    }

    pub fn dist_points(&self, p: &Coords<T>, q: &Coords<T>) -> T {
        metric(&self.kind, p, q)
    }

    /// Row-major `n x n` distance matrix.
    pub fn distance_matrix(&self) -> Vec<T> {
        let n = self.len();
        let mut m = vec![T::zero(); n * n];
        m.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.dist(i, j);
            }
        });
        m
    }

    pub fn is_antipodal(&self, p: &Coords<T>, q: &Coords<T>) -> bool {
        match self.kind {
            SpaceKind::Sphere { .. } => T::PI() - sphere_angle(p, q) <= lit(ANTIPODAL_TOL),
            SpaceKind::Circle { circumference } => {
                (wrap_signed(q[0] - p[0], circumference).abs() - circumference / lit(2.0)).abs()
                    <= lit::<T>(ANTIPODAL_TOL) * circumference
            }
            _ => false,
        }
    }

    /// Constant-speed geodesic from `p` to `q` at time `t`. Antipodal pairs
    /// use a fixed canonical choice: the positive direction on the circle and,
    /// on the sphere, the great circle towards the first basis vector not nearly parallel to `p`.
    pub fn geodesic_points(&self, p: &Coords<T>, q: &Coords<T>, t: T) -> Coords<T> {
        let z = T::zero();
        match self.kind {
            SpaceKind::Segment { .. } => [p[0] + t * (q[0] - p[0]), z, z],
            SpaceKind::Circle { circumference } => {
                let mut delta = wrap_signed(q[0] - p[0], circumference);
                if self.is_antipodal(p, q) {
                    delta = circumference / lit(2.0);
                }
                let mut x = p[0] + t * delta;
                x = x - circumference * (x / circumference).floor();
                if x >= circumference {
                    x = x - circumference;
                }
                [x, z, z]
            }
            SpaceKind::Disk { .. } => [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), z],
            SpaceKind::Sphere { radius } => {
                let pu = p.map(|c| c / radius);
                let theta = sphere_angle(p, q);
                if theta == z {
                    return *p;
                }
                let dir = if T::PI() - theta <= lit(ANTIPODAL_TOL) {
                    let basis = [[T::one(), z, z], [z, T::one(), z], [z, z, T::one()]];
                    let e = basis
                        .iter()
                        .find(|e| dot3(e, &pu).abs() < lit(0.9))
                        .copied()
                        .unwrap_or(basis[0]);
                    let d = dot3(&e, &pu);
                    let w = [e[0] - d * pu[0], e[1] - d * pu[1], e[2] - d * pu[2]];
                    let nw = norm3(&w);
                    w.map(|c| c / nw)
                } else {
                    let qu = q.map(|c| c / radius);
                    let d = dot3(&pu, &qu);
                    let w = [qu[0] - d * pu[0], qu[1] - d * pu[1], qu[2] - d * pu[2]];
                    let nw = norm3(&w);
                    w.map(|c| c / nw)
                };
                let a = t * theta;
                let (s, c) = a.sin_cos();
                [
                    radius * (c * pu[0] + s * dir[0]),
                    radius * (c * pu[1] + s * dir[1]),
                    radius * (c * pu[2] + s * dir[2]),
                ]
            }
        }
    }

    pub fn geodesic(&self, i: usize, j: usize, t: T) -> Coords<T> {
        self.geodesic_points(&self.points[i], &self.points[j], t)
    }

    /// Like [`SampledSpace::geodesic`] but rejects antipodal endpoints.
    pub fn geodesic_unique(&self, i: usize, j: usize, t: T) -> Result<Coords<T>> {
        if self.is_antipodal(&self.points[i], &self.points[j]) {
            return Err(Error::Antipodal(i, j));
        }
        Ok(self.geodesic(i, j, t))
    }

    /// Index of the nearest sample point (lowest index on ties).
    pub fn snap(&self, p: &Coords<T>) -> usize {
        let n = self.len();
        match self.kind {
            SpaceKind::Segment { a, b } => {
                let h = (b - a) / cnt(n - 1);
                ((p[0] - a) / h).round().max(T::zero()).to_usize().unwrap_or(0).min(n - 1)
            }
            SpaceKind::Circle { circumference } => {
                let h = circumference / cnt(n);
                let x = wrap_signed(p[0], circumference);
                let x = if x < T::zero() { x + circumference } else { x };
                (x / h).round().to_usize().unwrap_or(0) % n
            }
            _ => {
                let mut best = (T::infinity(), 0usize);
                for (i, q) in self.points.iter().enumerate() {
                    let d = self.dist_points(p, q);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            }
        }
    }

    /// Pairs at distance at most `2 * fill_radius` (with a small margin): the
    /// geodesic-adjacent pairs used for crossing detection.
    pub fn neighbour_pairs(&self) -> Vec<(usize, usize)> {
        let r = lit::<T>(2.0) * self.fill_radius * (T::one() + lit(1e-9));
        let n = self.len();
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| ((i + 1)..n).filter(move |&j| self.dist(i, j) <= r).map(move |j| (i, j)))
            .collect()
    }
}

/// Nonnegative weights aligned with the points of a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure<T> {
    pub weights: Vec<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= T::zero())) {
            return domain(format!("measure weights must be finite and nonnegative, got {w}"));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![T::one() / cnt(n); n] }
    }

    pub fn from_fn<F: Fn(&Coords<T>) -> T>(space: &SampledSpace<T>, f: F) -> Result<Self> {
        Self::new(space.points.iter().map(f).collect())
    }

    pub fn total(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.total();
        if !(t > T::zero()) {
            return domain("cannot normalize a zero measure");
        }
        Ok(Self { weights: self.weights.iter().map(|&w| w / t).collect() })
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > T::zero()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "weight"])?;
        for (i, v) in self.weights.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{v:.16e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let idx: usize = rec.get(0).unwrap_or("").trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            if idx != row {
                return Err(Error::Parse(format!("measure rows must be in index order, row {row} has index {idx}")));
            }
            let w: f64 = rec.get(1).unwrap_or("").trim().parse().map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            out.push(lit(w));
        }
        Self::new(out)
    }
}

/// Largest `|u(i) - u(j)| - d(i, j)` over all pairs, with its pair.
pub fn lipschitz_defect<T: Real>(space: &SampledSpace<T>, u: &[T]) -> (T, usize, usize) {
    let n = space.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (T::neg_infinity(), i, i);
            for j in (i + 1)..n {
                let d = (u[i] - u[j]).abs() - space.dist(i, j);
                if d > best.0 {
                    best = (d, i, j);
                }
            }
            best
        })
        .reduce(|| (T::neg_infinity(), 0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

/// Relative slack allowed in Lipschitz certificates on top of the metric tolerance.
pub const LIPSCHITZ_REL_TOL: f64 = 1e-9;

/// Slack of the Lipschitz certificate of [`signed_distance`]: the zero set is
/// only resolved up to the sample, so `2 * fill_radius + 1e-9 * diameter`.
pub fn metric_tolerance<T: Real>(space: &SampledSpace<T>) -> T {
    lit::<T>(2.0) * space.fill_radius() + lit::<T>(LIPSCHITZ_REL_TOL) * space.diameter()
}

/// `d_f(x) = dist(x, {f = 0}) sgn f(x)`. The zero set consists of samples
/// with `|f| <= zero_tol` (default `1e-9 max|f|`) and of the linear
/// crossing points on neighbour pairs where `f` changes sign. The result is
/// certified 1-Lipschitz up to [`metric_tolerance`]; it is exact when the zero
/// set is resolved by the sample.
pub fn signed_distance<T: Real>(space: &SampledSpace<T>, f: &[T], zero_tol: Option<T>) -> Result<Potential<T>> {
    if f.len() != space.len() {
        return domain("potential length does not match the space");
    }
    let fmax = max_of(&f.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let tol = zero_tol.unwrap_or_else(|| lit::<T>(1e-9) * fmax);
    let mut zeros: Vec<Coords<T>> = (0..space.len()).filter(|&i| f[i].abs() <= tol).map(|i| space.points[i]).collect();
    for (i, j) in space.neighbour_pairs() {
        if f[i].abs() > tol && f[j].abs() > tol && (f[i] > T::zero()) != (f[j] > T::zero()) {
            let s = f[i] / (f[i] - f[j]);
            zeros.push(space.geodesic(i, j, s));
        }
    }
    if zeros.is_empty() {
        return Err(Error::NoLevelSet);
    }
    let u: Vec<T> = space
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if f[i].abs() <= tol {
                return T::zero();
            }
            let d = zeros.iter().map(|z| space.dist_points(p, z)).fold(T::infinity(), T::min);
            if f[i] > T::zero() {
                d
            } else {
                -d
            }
        })
        .collect();
    let (defect, i, j) = lipschitz_defect(space, &u);
    if defect > metric_tolerance(space) {
        return Err(Error::NotLipschitz { defect: defect.to_f64().unwrap_or(f64::NAN), i, j });
    }
    Ok(u)
}

/// Space description used by the CLI: `{"kind": ..., "resolution": n, "extent": {...}, "seed": k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub kind: String,
    pub resolution: usize,
    #[serde(default)]
    pub extent: Extent,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Extent {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub length: Option<f64>,
    pub circumference: Option<f64>,
    pub radius: Option<f64>,
    pub layout: Option<DiskLayout>,
}

impl SpaceSpec {
    pub fn kind<T: Real>(&self) -> Result<SpaceKind<T>> {
        let e = &self.extent;
        Ok(match self.kind.as_str() {
            "segment" => {
                let a = e.a.unwrap_or(0.0);
                let b = e.b.unwrap_or(a + e.length.unwrap_or(1.0));
                SpaceKind::Segment { a: lit(a), b: lit(b) }
            }
            "circle" => SpaceKind::Circle { circumference: lit(e.circumference.unwrap_or(2.0 * std::f64::consts::PI)) },
            "disk" => SpaceKind::Disk { radius: lit(e.radius.unwrap_or(1.0)), layout: e.layout.unwrap_or_default() },
            "sphere" => SpaceKind::Sphere { radius: lit(e.radius.unwrap_or(1.0)) },
            other => return domain(format!("unsupported space kind {other}")),
        })
    }

    pub fn build<T: Real>(&self) -> Result<SampledSpace<T>> {
        make_space(self.kind()?, self.resolution)
    }
}
