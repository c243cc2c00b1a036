//! Exact monotone transport between piecewise-uniform measures on a line.
//!
//! Each sample weight of a segment measure is spread uniformly over the
//! sample's Voronoi cell. The monotone map between two such measures is
//! piecewise linear, so displacement interpolants have exact cell masses.

use crate::error::{domain, Result};
use crate::scalar::{lit, total_cmp, Real};
use crate::spaces::{DiscreteMeasure, SampledSpace, SpaceKind};

/// Piecewise-uniform measure: `masses[k]` spread over `[edges[k], edges[k+1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMeasure1d<T> {
    pub edges: Vec<T>,
    pub masses: Vec<T>,
    cum: Vec<T>,
}

impl<T: Real> CellMeasure1d<T> {
    pub fn new(edges: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if edges.len() != masses.len() + 1 || masses.is_empty() {
            return domain("cell measure needs one more edge than masses");
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("cell edges must be strictly increasing");
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= T::zero())) {
            return domain("cell masses must be finite and nonnegative");
        }
        let mut cum = Vec::with_capacity(edges.len());
        cum.push(T::zero());
        for &m in &masses {
            cum.push(cum[cum.len() - 1] + m);
        }
        Ok(Self { edges, masses, cum })
    }

    /// Voronoi cells of a segment sample carrying `measure`.
    pub fn from_segment(space: &SampledSpace<T>, measure: &DiscreteMeasure<T>) -> Result<Self> {
        Self::new(voronoi_edges(space)?, measure.weights.clone())
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total(&self) -> T {
        self.cum[self.cum.len() - 1]
    }

    pub fn width(&self, k: usize) -> T {
        self.edges[k + 1] - self.edges[k]
    }

    /// Lebesgue density on cell `k`.
    pub fn density(&self, k: usize) -> T {
        self.masses[k] / self.width(k)
    }

    fn cell_of(&self, x: T) -> usize {
        let k = self.edges.partition_point(|&e| e <= x);
        k.saturating_sub(1).min(self.len() - 1)
    }

    pub fn cdf(&self, x: T) -> T {
        if x <= self.edges[0] {
            return T::zero();
        }
        if x >= self.edges[self.len()] {
            return self.total();
        }
        let k = self.cell_of(x);
        self.cum[k] + self.masses[k] * (x - self.edges[k]) / self.width(k)
    }

    /// Cell whose cumulative range contains `u`, preferring cells of positive mass.
    fn quantile_cell(&self, u: T) -> usize {
        let j = self.cum.partition_point(|&c| c < u);
        let mut k = j.saturating_sub(1).min(self.len() - 1);
        while k + 1 < self.len() && self.masses[k] == T::zero() {
            k += 1;
        }
        k
    }

    fn quantile_in(&self, k: usize, u: T) -> T {
        if self.masses[k] == T::zero() {
            return self.edges[k];
        }
        let r = ((u - self.cum[k]) / self.masses[k]).max(T::zero()).min(T::one());
        self.edges[k] + r * self.width(k)
    }

    /// Left-continuous quantile function.
    pub fn quantile(&self, u: T) -> T {
        self.quantile_in(self.quantile_cell(u), u)
    }

    /// Masses of this measure on the cells of `edges`.
    pub fn rebin(&self, edges: &[T]) -> Vec<T> {
        edges.windows(2).map(|w| self.cdf(w[1]) - self.cdf(w[0])).collect()
    }
}

/// Cell edges at midpoints between consecutive samples of a segment.
pub fn voronoi_edges<T: Real>(space: &SampledSpace<T>) -> Result<Vec<T>> {
    let SpaceKind::Segment { a, b } = space.kind else {
        return domain("Voronoi cells on a line need a segment space");
    };
    let n = space.len();
    let mut e = Vec::with_capacity(n + 1);
    e.push(a);
    for k in 1..n {
        e.push((space.points[k - 1][0] + space.points[k][0]) / lit(2.0));
    }
    e.push(b);
    Ok(e)
}

/// One linear piece of the monotone map: `[x0, x1] -> [y0, y1]` carrying
/// `mass` of the source, inside source cell `src` and target cell `dst`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPiece<T> {
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub y1: T,
    pub mass: T,
    pub src: usize,
    pub dst: usize,
}

impl<T: Real> MapPiece<T> {
    pub fn map(&self, x: T) -> T {
        if self.x1 == self.x0 {
            return self.y0;
        }
        self.y0 + (self.y1 - self.y0) * (x - self.x0) / (self.x1 - self.x0)
    }

    /// Image interval of the piece under `x -> (1 - t) x + t T(x)`.
    pub fn image(&self, t: T) -> (T, T) {
        let s = T::one() - t;
        (s * self.x0 + t * self.y0, s * self.x1 + t * self.y1)
    }
}

/// Monotone (quantile) transport `T = F_1^{-1} o F_0`.
#[derive(Clone, Debug)]
pub struct MonotoneMap1d<T> {
    pub source: CellMeasure1d<T>,
    pub target: CellMeasure1d<T>,
    pub pieces: Vec<MapPiece<T>>,
}

impl<T: Real> MonotoneMap1d<T> {
    /// Fails unless both measures have the same total mass (relative `1e-10`).
    pub fn new(source: CellMeasure1d<T>, target: CellMeasure1d<T>) -> Result<Self> {
        let (m0, m1) = (source.total(), target.total());
        if !(m0 > T::zero()) || (m0 - m1).abs() > lit::<T>(1e-10) * m0.max(m1) {
            return domain(format!("monotone map needs equal positive masses, got {m0} and {m1}"));
        }
        // Rescale the target so the cumulative functions end at the same value.
        let target = CellMeasure1d::new(target.edges.clone(), target.masses.iter().map(|&m| m * m0 / m1).collect())?;
        let mut xs: Vec<T> = source.edges.clone();
        for &c in &target.cum[1..target.cum.len() - 1] {
            xs.push(source.quantile(c));
        }
        xs.sort_by(total_cmp);
        xs.dedup();
        let mut pieces = Vec::new();
        for w in xs.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let (u0, u1) = (source.cdf(x0), source.cdf(x1));
            let mass = u1 - u0;
            if !(mass > T::zero()) {
                continue;
            }
            let src = source.cell_of((x0 + x1) / lit(2.0));
            let dst = target.quantile_cell((u0 + u1) / lit(2.0));
            pieces.push(MapPiece { x0, x1, y0: target.quantile_in(dst, u0), y1: target.quantile_in(dst, u1), mass, src, dst });
        }
        Ok(Self { source, target, pieces })
    }

    /// `T(x)` on the support of the source.
    pub fn map(&self, x: T) -> T {
        let k = self.pieces.partition_point(|p| p.x1 < x).min(self.pieces.len() - 1);
        self.pieces[k].map(x)
    }

    /// `int f(x, T(x)) dmu_0` with a 9-node Simpson rule per piece.
    pub fn integrate<F: Fn(&MapPiece<T>, T, T) -> T>(&self, f: F) -> T {
        self.pieces
            .iter()
            .map(|p| {
                let g = |x: T| f(p, x, p.map(x));
                crate::scalar::simpson(g, p.x0, p.x1, 9) * p.mass / (p.x1 - p.x0)
            })
            .sum()
    }

    /// `W_2^2 / 2` of the pair.
    pub fn cost(&self) -> T {
        self.integrate(|_, x, y| (y - x) * (y - x) / lit(2.0))
    }

    /// Exact masses of `mu_t` on the cells of `edges`.
    pub fn interpolate(&self, t: T, edges: &[T]) -> Vec<T> {
        let nc = edges.len() - 1;
        let mut out = vec![T::zero(); nc];
        let cell = |y: T| edges.partition_point(|&e| e <= y).saturating_sub(1).min(nc - 1);
        for p in &self.pieces {
            let (q0, q1) = p.image(t);
            let (k0, k1) = (cell(q0), cell(q1));
            if q1 <= q0 || k0 == k1 {
                out[k0] = out[k0] + p.mass;
                continue;
            }
            let len = q1 - q0;
            for (k, o) in out.iter_mut().enumerate().take(k1 + 1).skip(k0) {
                let lo = q0.max(edges[k]);
                let hi = q1.min(edges[k + 1]);
                if hi > lo {
                    *o = *o + p.mass * (hi - lo) / len;
                }
            }
        }
        out
    }
}

/// Continuous density on `[a, b]` tabulated on a uniform grid, linearly
/// interpolated; the CDF is the exact integral of the interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothDensity1d<T> {
    pub a: T,
    pub b: T,
    pub values: Vec<T>,
    cum: Vec<T>,
}

impl<T: Real> SmoothDensity1d<T> {
    pub fn from_fn<F: Fn(T) -> T>(a: T, b: T, nodes: usize, f: F) -> Result<Self> {
        if nodes < 2 || !(b > a) {
            return domain("smooth density needs a < b and at least two nodes");
        }
        let h = (b - a) / crate::scalar::cnt(nodes - 1);
        let values: Vec<T> = (0..nodes).map(|k| f(a + crate::scalar::cnt::<T>(k) * h)).collect();
        if values.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return domain("smooth density values must be finite and nonnegative");
        }
        let mut cum = vec![T::zero(); nodes];
        for k in 1..nodes {
            cum[k] = cum[k - 1] + (values[k - 1] + values[k]) * h / lit(2.0);
        }
        Ok(Self { a, b, values, cum })
    }

    fn step(&self) -> T {
        (self.b - self.a) / crate::scalar::cnt(self.values.len() - 1)
    }

    fn locate(&self, x: T) -> (usize, T) {
        let h = self.step();
        let n = self.values.len();
        let u = ((x - self.a) / h).max(T::zero()).min(crate::scalar::cnt(n - 1));
        let k = u.floor().to_usize().unwrap_or(0).min(n - 2);
        (k, x - self.a - crate::scalar::cnt::<T>(k) * h)
    }

    pub fn total(&self) -> T {
        self.cum[self.cum.len() - 1]
    }

    pub fn eval(&self, x: T) -> T {
        let (k, s) = self.locate(x);
        let h = self.step();
        self.values[k] + (self.values[k + 1] - self.values[k]) * s / h
    }

    pub fn cdf(&self, x: T) -> T {
        if x <= self.a {
            return T::zero();
        }
        if x >= self.b {
            return self.total();
        }
        let (k, s) = self.locate(x);
        let slope = (self.values[k + 1] - self.values[k]) / self.step();
        self.cum[k] + self.values[k] * s + slope * s * s / lit(2.0)
    }

    pub fn quantile(&self, u: T) -> T {
        let n = self.values.len();
        let j = self.cum.partition_point(|&c| c < u);
        let k = j.saturating_sub(1).min(n - 2);
        let r = (u - self.cum[k]).max(T::zero());
        let (f, slope) = (self.values[k], (self.values[k + 1] - self.values[k]) / self.step());
        let disc = (f * f + lit::<T>(2.0) * slope * r).max(T::zero());
        let denom = f + disc.sqrt();
        let s = if denom > T::zero() { lit::<T>(2.0) * r / denom } else { T::zero() };
        (self.a + crate::scalar::cnt::<T>(k) * self.step() + s.min(self.step())).min(self.b)
    }

    /// Same shape with unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.total();
        if !(m > T::zero()) {
            return domain("cannot normalize a zero density");
        }
        Ok(Self { a: self.a, b: self.b, values: self.values.iter().map(|&v| v / m).collect(), cum: self.cum.iter().map(|&c| c / m).collect() })
    }
}

/// Monotone transport between two smooth densities: `T = F_1^{-1} o F_0`,
/// `T' = f_0 / f_1(T)`.
#[derive(Clone, Debug)]
pub struct SmoothMonotone1d<T> {
    pub source: SmoothDensity1d<T>,
    pub target: SmoothDensity1d<T>,
}

impl<T: Real> SmoothMonotone1d<T> {
    /// Both densities are normalized to unit mass.
    pub fn new(source: &SmoothDensity1d<T>, target: &SmoothDensity1d<T>) -> Result<Self> {
        Ok(Self { source: source.normalized()?, target: target.normalized()? })
    }

    pub fn map(&self, x: T) -> T {
        self.target.quantile(self.source.cdf(x))
    }

    pub fn derivative(&self, x: T) -> T {
        self.source.eval(x) / self.target.eval(self.map(x))
    }

    /// Lebesgue density of `mu_t` at `(1 - t) x + t T(x)`.
    pub fn density_along(&self, x: T, t: T) -> T {
        self.source.eval(x) / ((T::one() - t) + t * self.derivative(x))
    }
}
