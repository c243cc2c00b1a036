//! Hopf-Lax semigroup, c-transforms, intermediate potentials, length
//! functions and the temporal certificates along geodesics.
//!
//! Two engines implement [`HopfLaxEngine`]: [`SampleEngine`] takes exact
//! extrema over the points of a [`SampledSpace`]; [`ContinuumEngine`]
//! computes the same quantities in closed form for piecewise-quadratic
//! potentials on a segment or circle, which is what the third-order and
//! `z` certificates need.

use crate::error::{domain, Error, Result};
use crate::report::{Check, SlackAccumulator};
use crate::scalar::{cnt, lit, to_f64, Real};
use crate::spaces::{wrap_signed, Coords, Potential, SampledSpace};
use rayon::prelude::*;
use serde_json::json;

/// Relative value tolerance for near-minimizers in `D^-` / `D^+`.
pub const VAL_TOL: f64 = 1e-10;
/// Relative value tolerance for counting tied minimizers.
pub const TIE_TOL: f64 = 1e-12;

/// Value of a Hopf-Lax problem at one point with the extreme distances to
/// its (near-)minimizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremal<T> {
    pub value: T,
    pub d_minus: T,
    pub d_plus: T,
    pub ties: usize,
}

/// Minimizes over `(value, distance)` candidates.
fn minimize<T: Real>(cands: &[(T, T)]) -> Extremal<T> {
    let best = cands.iter().fold(T::infinity(), |m, c| m.min(c.0));
    let vt = lit::<T>(VAL_TOL) * (T::one() + best.abs());
    let tt = lit::<T>(TIE_TOL) * (T::one() + best.abs());
    let (mut dm, mut dp, mut ties) = (T::infinity(), T::neg_infinity(), 0usize);
    for &(v, d) in cands {
        if v <= best + vt {
            dm = dm.min(d);
            dp = dp.max(d);
        }
        if v <= best + tt {
            ties += 1;
        }
    }
    Extremal { value: best, d_minus: dm, d_plus: dp, ties }
}

/// Source of interpolating potentials: `phi_t = -Q_t(-phi)` and
/// `phibar_t = Q_{1-t}(-phi^c)` at arbitrary points of the model.
pub trait HopfLaxEngine<T: Real>: Sync {
    /// `phi_t(x)` with distances to the maximizers; `t in (0, 1]`.
    fn forward(&self, x: &Coords<T>, t: T) -> Extremal<T>;
    /// `phibar_t(x)` with distances to the minimizers; `t in [0, 1)`.
    fn backward(&self, x: &Coords<T>, t: T) -> Extremal<T>;
    fn dist(&self, p: &Coords<T>, q: &Coords<T>) -> T;
    fn geodesic(&self, p: &Coords<T>, q: &Coords<T>, t: T) -> Coords<T>;

    fn ell(&self, x: &Coords<T>, t: T) -> (T, T) {
        let e = self.forward(x, t);
        (e.d_minus / t, e.d_plus / t)
    }

    fn ell_bar(&self, x: &Coords<T>, t: T) -> (T, T) {
        let e = self.backward(x, t);
        let s = T::one() - t;
        (e.d_minus / s, e.d_plus / s)
    }
}

/// Output of [`hopf_lax`].
#[derive(Clone, Debug, PartialEq)]
pub struct HopfLax<T> {
    pub values: Potential<T>,
    /// Number of minimizers within `TIE_TOL` at each point.
    pub ties: Vec<usize>,
    pub d_minus: Vec<T>,
    pub d_plus: Vec<T>,
}

fn sample_extremal<T: Real>(space: &SampledSpace<T>, x: &Coords<T>, f: &[T], t: T, sign: T) -> Extremal<T> {
    let two_t = lit::<T>(2.0) * t;
    let cands: Vec<(T, T)> = space
        .points
        .iter()
        .zip(f)
        .map(|(p, &fy)| {
            let d = space.dist_points(x, p);
            (d * d / two_t + sign * fy, d)
        })
        .collect();
    minimize(&cands)
}

/// `Q_t f(x) = min_y d(x,y)^2 / (2t) + f(y)`, exact over the sample.
pub fn hopf_lax<T: Real>(space: &SampledSpace<T>, f: &[T], t: T) -> Result<HopfLax<T>> {
    if !(t > T::zero()) {
        return domain("hopf_lax requires t > 0");
    }
    if f.len() != space.len() {
        return domain("potential length does not match the space");
    }
    let ex: Vec<Extremal<T>> = space.points.par_iter().map(|x| sample_extremal(space, x, f, t, T::one())).collect();
    Ok(HopfLax {
        values: ex.iter().map(|e| e.value).collect(),
        ties: ex.iter().map(|e| e.ties).collect(),
        d_minus: ex.iter().map(|e| e.d_minus).collect(),
        d_plus: ex.iter().map(|e| e.d_plus).collect(),
    })
}

/// `psi^c(x) = min_y d(x,y)^2 / 2 - psi(y)`.
pub fn c_transform<T: Real>(space: &SampledSpace<T>, psi: &[T]) -> Potential<T> {
    space
        .points
        .par_iter()
        .map(|x| sample_extremal(space, x, psi, T::one(), -T::one()).value)
        .collect()
}

/// `max |(phi^c)^c - phi|`; zero iff `phi` is c-concave on the sample.
pub fn c_concavity_defect<T: Real>(space: &SampledSpace<T>, phi: &[T]) -> T {
    let cc = c_transform(space, &c_transform(space, phi));
    cc.iter().zip(phi).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max)
}

/// Tolerance used when certifying c-concavity of sample potentials.
pub fn c_concavity_tol<T: Real>(phi: &[T]) -> T {
    let scale = phi.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    lit::<T>(1e-12) * (T::one() + scale)
}

/// Exact interpolating potentials over a sample.
#[derive(Clone, Debug)]
pub struct SampleEngine<'a, T> {
    pub space: &'a SampledSpace<T>,
    pub phi: Potential<T>,
    pub phi_c: Potential<T>,
}

impl<'a, T: Real> SampleEngine<'a, T> {
    /// Fails unless `phi` is c-concave on the sample.
    pub fn new(space: &'a SampledSpace<T>, phi: Potential<T>) -> Result<Self> {
        if phi.len() != space.len() {
            return domain("potential length does not match the space");
        }
        let phi_c = c_transform(space, &phi);
        let back = c_transform(space, &phi_c);
        let defect = back.iter().zip(&phi).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        if defect > c_concavity_tol(&phi) {
            return domain(format!("potential is not c-concave on the sample (defect {defect:e})"));
        }
        Ok(Self { space, phi, phi_c })
    }

    /// `(psi^c)^c` of an arbitrary potential, which is always c-concave.
    pub fn symmetrized(space: &'a SampledSpace<T>, psi: &[T]) -> Result<Self> {
        let phi = c_transform(space, &c_transform(space, psi));
        Self::new(space, phi)
    }
}

impl<T: Real> HopfLaxEngine<T> for SampleEngine<'_, T> {
    fn forward(&self, x: &Coords<T>, t: T) -> Extremal<T> {
        let e = sample_extremal(self.space, x, &self.phi, t, -T::one());
        Extremal { value: -e.value, ..e }
    }

    fn backward(&self, x: &Coords<T>, t: T) -> Extremal<T> {
        sample_extremal(self.space, x, &self.phi_c, T::one() - t, -T::one())
    }

    fn dist(&self, p: &Coords<T>, q: &Coords<T>) -> T {
        self.space.dist_points(p, q)
    }

    fn geodesic(&self, p: &Coords<T>, q: &Coords<T>, t: T) -> Coords<T> {
        self.space.geodesic_points(p, q, t)
    }
}

/// `ell^-_t <= ell^+_t` pointwise.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthField<T> {
    pub ell_minus: Vec<T>,
    pub ell_plus: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Interpolant<T> {
    pub t: T,
    pub phi_t: Potential<T>,
    pub phibar_t: Potential<T>,
    pub lengths: LengthField<T>,
    pub lengths_bar: LengthField<T>,
}

/// `phi_t`, `phibar_t`, `ell^pm_t` and `ellbar^pm_t` at every sample point.
pub fn interpolants<T: Real>(engine: &SampleEngine<'_, T>, t_grid: &[T]) -> Result<Vec<Interpolant<T>>> {
    t_grid
        .iter()
        .map(|&t| {
            if !(t > T::zero() && t < T::one()) {
                return domain("interpolation times must lie in (0, 1)");
            }
            let per: Vec<(Extremal<T>, Extremal<T>)> = engine
                .space
                .points
                .par_iter()
                .map(|x| (engine.forward(x, t), engine.backward(x, t)))
                .collect();
            let s = T::one() - t;
            Ok(Interpolant {
                t,
                phi_t: per.iter().map(|p| p.0.value).collect(),
                phibar_t: per.iter().map(|p| p.1.value).collect(),
                lengths: LengthField {
                    ell_minus: per.iter().map(|p| p.0.d_minus / t).collect(),
                    ell_plus: per.iter().map(|p| p.0.d_plus / t).collect(),
                },
                lengths_bar: LengthField {
                    ell_minus: per.iter().map(|p| p.1.d_minus / s).collect(),
                    ell_plus: per.iter().map(|p| p.1.d_plus / s).collect(),
                },
            })
        })
        .collect()
}

/// Largest difference quotient of `phi` over all sample pairs.
pub fn lipschitz_estimate<T: Real>(space: &SampledSpace<T>, phi: &[T]) -> T {
    let n = space.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut m = T::zero();
            for j in (i + 1)..n {
                let d = space.dist(i, j);
                if d > T::zero() {
                    m = m.max((phi[i] - phi[j]).abs() / d);
                }
            }
            m
        })
        .reduce(T::zero, T::max)
}

/// Default `10 h Lip(phi)`, with `h` twice the fill radius.
pub fn default_midpoint_tol<T: Real>(space: &SampledSpace<T>, phi: &[T]) -> T {
    lit::<T>(10.0) * lit::<T>(2.0) * space.fill_radius() * lipschitz_estimate(space, phi)
}

/// Points with `phibar_t - phi_t <= eq_tol`.
pub fn midpoint_set<T: Real>(engine: &SampleEngine<'_, T>, t: T, eq_tol: Option<T>) -> Result<Vec<bool>> {
    if !(t > T::zero() && t < T::one()) {
        return domain("midpoint_set requires t in (0, 1)");
    }
    let tol = eq_tol.unwrap_or_else(|| default_midpoint_tol(engine.space, &engine.phi));
    Ok(engine
        .space
        .points
        .par_iter()
        .map(|x| engine.backward(x, t).value - engine.forward(x, t).value <= tol)
        .collect())
}

/// Pairs `(y, z)` with `phi(y) + phi^c(z) = d(y, z)^2 / 2` within `VAL_TOL`.
pub fn optimal_pairs<T: Real>(engine: &SampleEngine<'_, T>) -> Vec<(usize, usize)> {
    let sp = engine.space;
    let n = sp.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..n).filter_map(move |k| {
                let d = sp.dist(j, k);
                let c = d * d / lit(2.0);
                let gap = c - engine.phi[j] - engine.phi_c[k];
                (gap <= lit::<T>(VAL_TOL) * (T::one() + c.abs())).then_some((j, k))
            })
        })
        .collect()
}

/// Brute-force midpoint oracle: snapped `t`-midpoints of all optimal pairs.
pub fn midpoints_brute_force<T: Real>(engine: &SampleEngine<'_, T>, t: T) -> Vec<bool> {
    let mut mask = vec![false; engine.space.len()];
    for (j, k) in optimal_pairs(engine) {
        mask[engine.space.snap(&engine.space.geodesic(j, k, t))] = true;
    }
    mask
}

/// Symmetric Hausdorff distance between two point masks (infinite if exactly one is empty).
pub fn mask_hausdorff<T: Real>(space: &SampledSpace<T>, a: &[bool], b: &[bool]) -> T {
    let one_way = |p: &[bool], q: &[bool]| -> T {
        let qs: Vec<usize> = (0..q.len()).filter(|&i| q[i]).collect();
        (0..p.len())
            .filter(|&i| p[i])
            .map(|i| qs.iter().map(|&j| space.dist(i, j)).fold(T::infinity(), T::min))
            .fold(T::zero(), T::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// `Phi_s^t = phi_t + (t - s) ell_t^2 / 2`, `None` where `ell^+_t - ell^-_t > tol`.
pub fn propagated_potential<T: Real>(engine: &SampleEngine<'_, T>, s: T, t: T, tol: T) -> Result<Vec<Option<T>>> {
    if !(s > T::zero() && s < T::one() && t > T::zero() && t < T::one()) {
        return domain("propagated_potential requires s, t in (0, 1)");
    }
    Ok(engine
        .space
        .points
        .par_iter()
        .map(|x| {
            let e = engine.forward(x, t);
            let (lm, lp) = (e.d_minus / t, e.d_plus / t);
            (lp - lm <= tol).then(|| e.value + (t - s) * lp * lp / lit(2.0))
        })
        .collect())
}

/// One-dimensional model on which [`ContinuumEngine`] works; the circle uses lifted coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LineDomain<T> {
    Segment { a: T, b: T },
    Circle { circumference: T },
}

/// `c2 y^2 + c1 y + c0` on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPiece<T> {
    pub lo: T,
    pub hi: T,
    pub c2: T,
    pub c1: T,
    pub c0: T,
}

impl<T: Real> QuadPiece<T> {
    pub fn eval(&self, y: T) -> T {
        (self.c2 * y + self.c1) * y + self.c0
    }

    pub fn deriv(&self, y: T) -> T {
        lit::<T>(2.0) * self.c2 * y + self.c1
    }
}

/// A potential given in closed form on a lifted interval; `-inf` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseQuadratic<T> {
    pub pieces: Vec<QuadPiece<T>>,
}

impl<T: Real> PiecewiseQuadratic<T> {
    pub fn single(lo: T, hi: T, c2: T, c1: T, c0: T) -> Self {
        Self { pieces: vec![QuadPiece { lo, hi, c2, c1, c0 }] }
    }

    pub fn support(&self) -> (T, T) {
        let lo = self.pieces.iter().fold(T::infinity(), |m, p| m.min(p.lo));
        let hi = self.pieces.iter().fold(T::neg_infinity(), |m, p| m.max(p.hi));
        (lo, hi)
    }

    pub fn eval(&self, y: T) -> Option<T> {
        self.pieces.iter().find(|p| y >= p.lo && y <= p.hi).map(|p| p.eval(y))
    }

    fn piece_at(&self, y: T) -> Option<&QuadPiece<T>> {
        self.pieces.iter().find(|p| y >= p.lo && y <= p.hi)
    }

    /// Candidates `(-(P(y) - (X - y)^2 / (2s)), |X - y|)` at endpoints and stationary points.
    fn candidates(&self, xs: &[T], s: T, out: &mut Vec<(T, T)>) {
        let two_s = lit::<T>(2.0) * s;
        for &x in xs {
            for p in &self.pieces {
                let a = p.c2 - T::one() / two_s;
                let b = p.c1 + x / s;
                let mut push = |y: T| {
                    let d = x - y;
                    out.push((-(p.eval(y) - d * d / two_s), d.abs()));
                };
                push(p.lo);
                push(p.hi);
                let scale = T::one() / s + p.c2.abs();
                if a < -lit::<T>(1e-14) * scale {
                    let y = (-b / (lit::<T>(2.0) * a)).max(p.lo).min(p.hi);
                    push(y);
                } else if a.abs() <= lit::<T>(1e-14) * scale && b.abs() <= lit::<T>(1e-14) * (scale + x.abs() / s) {
                    push(x.max(p.lo).min(p.hi));
                }
            }
        }
    }
}

/// Closed-form interpolating potentials for a pair (`phi` on `I`, `phi^c` on `J`)
/// of piecewise-quadratic potentials on a segment or circle.
#[derive(Clone, Debug)]
pub struct ContinuumEngine<T> {
    pub domain: LineDomain<T>,
    pub phi: PiecewiseQuadratic<T>,
    pub phi_c: PiecewiseQuadratic<T>,
    centre: T,
}

impl<T: Real> ContinuumEngine<T> {
    pub fn new(domain: LineDomain<T>, phi: PiecewiseQuadratic<T>, phi_c: PiecewiseQuadratic<T>) -> Result<Self> {
        let (lo, hi) = phi.support();
        let (lo2, hi2) = phi_c.support();
        let (lo_all, hi_all) = (lo.min(lo2), hi.max(hi2));
        match domain {
            LineDomain::Segment { a, b } => {
                if lo_all < a || hi_all > b {
                    return domain_err("supports must lie in the segment");
                }
            }
            LineDomain::Circle { circumference } => {
                if !(hi_all - lo_all < circumference / lit(2.0)) {
                    return domain_err("lifted supports must span less than half the circle");
                }
            }
        }
        Ok(Self { domain, phi, phi_c, centre: (lo_all + hi_all) / lit(2.0) })
    }

    /// `phi = c y` on `I`, transporting `I` onto `I - c`.
    pub fn segment_translation(a: T, b: T, c: T) -> Result<Self> {
        if !((b - a) > c.abs()) {
            return domain_err("translation length must be shorter than the segment");
        }
        let (ilo, ihi) = if c >= T::zero() { (a + c, b) } else { (a, b + c) };
        Self::translation(LineDomain::Segment { a, b }, ilo, ihi, c)
    }

    /// Translation by `c` of the arc `[alpha, beta]` on a circle.
    pub fn circle_translation(circumference: T, alpha: T, beta: T, c: T) -> Result<Self> {
        if !(beta > alpha && (beta - alpha) + c.abs() < circumference / lit(2.0)) {
            return domain_err("arc plus shift must be shorter than half the circle");
        }
        Self::translation(LineDomain::Circle { circumference }, alpha, beta, c)
    }

    fn translation(domain: LineDomain<T>, ilo: T, ihi: T, c: T) -> Result<Self> {
        let z = T::zero();
        let phi = PiecewiseQuadratic::single(ilo, ihi, z, c, z);
        let phi_c = PiecewiseQuadratic::single(ilo - c, ihi - c, z, -c, -c * c / lit(2.0));
        Self::new(domain, phi, phi_c)
    }

    /// `phi = lambda (y - o)^2 / 2` on `[a, b]`: contraction by `1 - lambda` towards `o`.
    pub fn segment_contraction(a: T, b: T, o: T, lambda: T) -> Result<Self> {
        if !(o >= a && o <= b) {
            return domain_err("contraction centre must lie in the segment");
        }
        Self::contraction(LineDomain::Segment { a, b }, a, b, o, lambda)
    }

    /// Contraction of the arc `[o - half_width, o + half_width]` towards `o`.
    pub fn circle_contraction(circumference: T, o: T, half_width: T, lambda: T) -> Result<Self> {
        if !(half_width > T::zero() && half_width * (lit::<T>(2.0) - lambda) < circumference / lit(2.0)) {
            return domain_err("arc too wide for a contraction on this circle");
        }
        Self::contraction(LineDomain::Circle { circumference }, o - half_width, o + half_width, o, lambda)
    }

    fn contraction(domain: LineDomain<T>, a: T, b: T, o: T, lambda: T) -> Result<Self> {
        if !(lambda > T::zero() && lambda <= T::one()) {
            return domain_err("contraction rate must lie in (0, 1]");
        }
        let half = lit::<T>(0.5);
        let phi = PiecewiseQuadratic::single(a, b, half * lambda, -lambda * o, half * lambda * o * o);
        let phi_c = if lambda == T::one() {
            PiecewiseQuadratic::single(o, o, T::zero(), T::zero(), T::zero())
        } else {
            let k = -half * lambda / (T::one() - lambda);
            let m = T::one() - lambda;
            PiecewiseQuadratic::single(o + m * (a - o), o + m * (b - o), k, -lit::<T>(2.0) * k * o, k * o * o)
        };
        Self::new(domain, phi, phi_c)
    }

    fn lifts(&self, x: T) -> Vec<T> {
        match self.domain {
            LineDomain::Segment { .. } => vec![x],
            LineDomain::Circle { circumference } => {
                let x0 = self.centre + wrap_signed(x - self.centre, circumference);
                vec![x0 - circumference, x0, x0 + circumference]
            }
        }
    }

    /// Lifted coordinate of `x` closest to the supports.
    pub fn lift(&self, x: T) -> T {
        match self.domain {
            LineDomain::Segment { .. } => x,
            LineDomain::Circle { circumference } => self.centre + wrap_signed(x - self.centre, circumference),
        }
    }

    /// Optimal map `x - phi'(x)` on the source support.
    pub fn transport_map(&self, x: T) -> Result<T> {
        let x = self.lift(x);
        let p = self.phi.piece_at(x).ok_or_else(|| Error::Domain("point outside the source support".into()))?;
        Ok(x - p.deriv(x))
    }

    /// `max (phi(x) + phi^c(y) - d(x, y)^2 / 2)` over `m x m` support samples
    /// (nonpositive for an admissible pair) and the equality defect along the map.
    pub fn duality_defects(&self, m: usize) -> (T, T) {
        let (a, b) = self.phi.support();
        let (c, d) = self.phi_c.support();
        let mut worst = T::neg_infinity();
        let mut eq = T::zero();
        let at = |lo: T, hi: T, i: usize| lo + (hi - lo) * cnt(i) / cnt(m - 1);
        for i in 0..m {
            let x = at(a, b, i);
            let px = self.phi.eval(x).unwrap_or(T::nan());
            for j in 0..m {
                let y = at(c, d, j);
                let dd = self.dist(&[x, T::zero(), T::zero()], &[y, T::zero(), T::zero()]);
                worst = worst.max(px + self.phi_c.eval(y).unwrap_or(T::nan()) - dd * dd / lit(2.0));
            }
            if let Ok(y) = self.transport_map(x) {
                let dd = self.dist(&[x, T::zero(), T::zero()], &[y, T::zero(), T::zero()]);
                let v = px + self.phi_c.eval(y).unwrap_or(T::nan()) - dd * dd / lit(2.0);
                eq = eq.max(v.abs());
            }
        }
        (worst, eq)
    }

    /// Trace along the optimal geodesic started at `x0` in the source support.
    pub fn trace(&self, x0: T, times: &[T]) -> Result<GeodesicTrace<T>> {
        let x0 = self.lift(x0);
        let y = self.transport_map(x0)?;
        let z = T::zero();
        build_trace(self, [x0, z, z], [y, z, z], times)
    }
}

fn domain_err<T>(msg: &str) -> Result<T> {
    domain(msg)
}

impl<T: Real> HopfLaxEngine<T> for ContinuumEngine<T> {
    fn forward(&self, x: &Coords<T>, t: T) -> Extremal<T> {
        let mut c = Vec::with_capacity(12);
        self.phi.candidates(&self.lifts(x[0]), t, &mut c);
        let e = minimize(&c);
        Extremal { value: -e.value, ..e }
    }

    fn backward(&self, x: &Coords<T>, t: T) -> Extremal<T> {
        let mut c = Vec::with_capacity(12);
        self.phi_c.candidates(&self.lifts(x[0]), T::one() - t, &mut c);
        let e = minimize(&c);
        Extremal { value: e.value, ..e }
    }

    fn dist(&self, p: &Coords<T>, q: &Coords<T>) -> T {
        match self.domain {
            LineDomain::Segment { .. } => (p[0] - q[0]).abs(),
            LineDomain::Circle { circumference } => wrap_signed(q[0] - p[0], circumference).abs(),
        }
    }

    fn geodesic(&self, p: &Coords<T>, q: &Coords<T>, t: T) -> Coords<T> {
        let delta = match self.domain {
            LineDomain::Segment { .. } => q[0] - p[0],
            LineDomain::Circle { circumference } => wrap_signed(q[0] - p[0], circumference),
        };
        [p[0] + t * delta, T::zero(), T::zero()]
    }
}

/// Samples of the interpolating potentials along one geodesic.
#[derive(Clone, Debug)]
pub struct GeodesicTrace<T> {
    pub start: Coords<T>,
    pub end: Coords<T>,
    /// Sample indices of the endpoints when the trace comes from a plan.
    pub endpoints: Option<(usize, usize)>,
    pub length: T,
    pub times: Vec<T>,
    pub positions: Vec<Coords<T>>,
    pub phi: Vec<T>,
    pub phibar: Vec<T>,
    pub ell_minus: Vec<T>,
    pub ell_plus: Vec<T>,
    pub ellbar_minus: Vec<T>,
    pub ellbar_plus: Vec<T>,
}

impl<T: Real> GeodesicTrace<T> {
    /// `phibar_t - phi_t` at each sampled time.
    pub fn midpoint_gaps(&self) -> Vec<T> {
        self.phibar.iter().zip(&self.phi).map(|(a, b)| *a - *b).collect()
    }

    /// `Phi_s^{t_k}(gamma_{t_k}) - phi_s(gamma_s)` for all sampled `(s, t_k)`.
    pub fn propagation_defects(&self) -> Vec<(usize, usize, T)> {
        let n = self.times.len();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                let (s, t) = (self.times[i], self.times[k]);
                let l = self.ell_plus[k];
                let big_phi = self.phi[k] + (t - s) * l * l / lit(2.0);
                out.push((i, k, big_phi - self.phi[i]));
            }
        }
        out
    }
}

/// Default tolerance for the midpoint test along traces: `1e-9 (1 + ell^2)`.
pub fn trace_midpoint_tol<T: Real>(length: T) -> T {
    lit::<T>(1e-9) * (T::one() + length * length)
}

/// Evaluates a trace from `start` to `end` at `times` in `(0, 1)`.
pub fn build_trace<T: Real, E: HopfLaxEngine<T> + ?Sized>(engine: &E, start: Coords<T>, end: Coords<T>, times: &[T]) -> Result<GeodesicTrace<T>> {
    if times.iter().any(|&t| !(t > T::zero() && t < T::one())) {
        return domain("trace times must lie in (0, 1)");
    }
    let length = engine.dist(&start, &end);
    let positions: Vec<Coords<T>> = times.iter().map(|&t| engine.geodesic(&start, &end, t)).collect();
    let ev: Vec<(Extremal<T>, Extremal<T>)> = positions
        .iter()
        .zip(times)
        .map(|(x, &t)| (engine.forward(x, t), engine.backward(x, t)))
        .collect();
    Ok(GeodesicTrace {
        start,
        end,
        endpoints: None,
        length,
        times: times.to_vec(),
        phi: ev.iter().map(|e| e.0.value).collect(),
        phibar: ev.iter().map(|e| e.1.value).collect(),
        ell_minus: ev.iter().zip(times).map(|(e, &t)| e.0.d_minus / t).collect(),
        ell_plus: ev.iter().zip(times).map(|(e, &t)| e.0.d_plus / t).collect(),
        ellbar_minus: ev.iter().zip(times).map(|(e, &t)| e.1.d_minus / (T::one() - t)).collect(),
        ellbar_plus: ev.iter().zip(times).map(|(e, &t)| e.1.d_plus / (T::one() - t)).collect(),
        positions,
    })
}

/// Uniform grid `k / (m + 1)`, `k = 1..=m`.
pub fn interior_grid<T: Real>(m: usize) -> Vec<T> {
    (1..=m).map(|k| cnt::<T>(k) / cnt(m + 1)).collect()
}

/// Temporal certificates along one trace: midpoint membership, length
/// identity, propagation, Lipschitz and derivative bounds of `ell` at
/// fixed points, third-order inequality (primal and dual) and `q`
/// monotonicity. Times off the midpoint set are masked and noted.
pub fn temporal_certificates<T: Real, E: HopfLaxEngine<T> + ?Sized>(
    engine: &E,
    trace: &GeodesicTrace<T>,
    eps: &[T],
    tol: T,
) -> Result<Vec<Check>> {
    let ell = trace.length;
    if !(ell > lit::<T>(1e-12)) {
        return Err(Error::NullGeodesic);
    }
    let mid_tol = trace_midpoint_tol(ell);
    let gaps = trace.midpoint_gaps();
    let active: Vec<usize> = (0..trace.times.len()).filter(|&k| gaps[k] <= mid_tol).collect();
    let masked = trace.times.len() - active.len();
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);

    let mut mid = SlackAccumulator::new("trace_in_midpoint_set", mid_tol);
    for (k, &g) in gaps.iter().enumerate() {
        mid.record(-g, || json!({ "t": to_f64(trace.times[k]) }));
    }
    if masked > 0 {
        mid.note(format!("{masked} sampled times left the midpoint set and were masked"));
    }

    let mut ident = SlackAccumulator::new("length_identity", tol);
    for &k in &active {
        let dev = [trace.ell_minus[k], trace.ell_plus[k], trace.ellbar_minus[k], trace.ellbar_plus[k]]
            .iter()
            .map(|l| (*l - ell).abs())
            .fold(T::zero(), T::max);
        ident.record(-dev, || json!({ "t": to_f64(trace.times[k]) }));
    }

    let mut prop = SlackAccumulator::new("propagated_potential", tol);
    for (i, k, d) in trace.propagation_defects() {
        if active.contains(&i) && active.contains(&k) {
            prop.record(-d.abs(), || json!({ "s": to_f64(trace.times[i]), "t": to_f64(trace.times[k]) }));
        }
    }

    // Lipschitz and derivative bounds of tau -> ell_tau(x) at x = gamma_{t_k}.
    let mut lip = SlackAccumulator::new("ell_lipschitz_bound", tol);
    let mut der = SlackAccumulator::new("ell_derivative_bounds", tol);
    let mut mono = SlackAccumulator::new("ell_monotonicity", tol);
    for &k in &active {
        let x = trace.positions[k];
        let samples: Vec<(T, T, T, T, T, bool)> = trace
            .times
            .iter()
            .map(|&tau| {
                let f = engine.forward(&x, tau);
                let b = engine.backward(&x, tau);
                let s = T::one() - tau;
                let on = b.value - f.value <= mid_tol;
                (tau, f.d_minus / tau, f.d_plus / tau, b.d_minus / s, b.d_plus / s, on)
            })
            .collect();
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let (s, lms, lps, lbms, lbps, on_s) = samples[i];
                let (t, lmt, lpt, lbmt, lbpt, on_t) = samples[j];
                let w = || json!({ "x": to_f64(x[0]), "s": to_f64(s), "t": to_f64(t) });
                mono.record((t * lmt - s * lms).min(t * lpt - s * lps), w);
                mono.record(((T::one() - s) * lbms - (T::one() - t) * lbmt).min((T::one() - s) * lbps - (T::one() - t) * lbpt), w);
                if on_s && on_t {
                    let (ls, lt) = (half * (lms + lps), half * (lmt + lpt));
                    let lhs = ((t * (T::one() - t)).sqrt() * lt - (s * (T::one() - s)).sqrt() * ls).abs();
                    let rhs = (lt * ls).sqrt() * ((t * (T::one() - s)).sqrt() - (s * (T::one() - t)).sqrt()).abs();
                    lip.record(rhs - lhs, w);
                    der.record(t * t * lt * lt - s * s * ls * ls, w);
                    der.record((T::one() - s).powi(2) * ls * ls - (T::one() - t).powi(2) * lt * lt, w);
                }
            }
        }
    }

    let mut primal = SlackAccumulator::new("third_order_primal", tol);
    let mut dual = SlackAccumulator::new("third_order_dual", tol);
    let mut qmono = SlackAccumulator::new("q_monotonicity", tol);
    let e_half = half * ell * ell;
    for &e in eps {
        let mut h = Vec::new();
        let mut hb = Vec::new();
        for &k in &active {
            let t = trace.times[k];
            let te = t + e;
            if !(te > T::zero() && te < T::one()) {
                continue;
            }
            let x = trace.positions[k];
            let f = engine.forward(&x, te);
            let b = engine.backward(&x, te);
            let hv = two * (f.value - trace.phi[k] - e * e_half);
            let hbv = two * (b.value - trace.phi[k] - e * e_half);
            let s = T::one() - te;
            h.push((t, hv, f.d_minus / te, f.d_plus / te));
            hb.push((t, hbv, b.d_minus / s, b.d_plus / s));
        }
        for i in 0..h.len() {
            for j in (i + 1)..h.len() {
                let (s, hs, lms, lps) = h[i];
                let (t, ht, _, _) = h[j];
                let q = (ht - hs) / (t - s);
                let w = || json!({ "s": to_f64(s), "t": to_f64(t), "eps": to_f64(e) });
                let coef = (s + e) / (t + e);
                let rhs = coef * (lms - ell).powi(2).max((lps - ell).powi(2));
                primal.record(q - rhs, w);
                qmono.record((ht - hs) / (e * e), w);

                let (_, hbs, _, _) = hb[i];
                let (_, hbt, lbmt, lbpt) = hb[j];
                let qb = (hbt - hbs) / (t - s);
                let coef_b = (T::one() - t - e) / (T::one() - s - e);
                let rhs_b = coef_b * (lbmt - ell).powi(2).max((lbpt - ell).powi(2));
                dual.record(qb - rhs_b, w);
                qmono.record((hbt - hbs) / (e * e), w);
            }
        }
    }

    // `q` monotonicity is a limit statement; its finite-eps form is implied by `primal`.
    Ok(vec![
        mid.finish(),
        ident.finish(),
        prop.finish(),
        lip.finish(),
        der.finish(),
        mono.finish(),
        primal.finish(),
        dual.finish(),
        qmono.finish(),
    ])
}

/// `z_c(t) = d/dtau ell_tau^2 / 2 (gamma_t)` along a trace, with the derived
/// concave factor `L = exp(-(1/ell^2) int z)`.
#[derive(Clone, Debug)]
pub struct ZProfile<T> {
    pub times: Vec<T>,
    pub z: Vec<T>,
    pub length: T,
    pub l_factor: Vec<T>,
    pub concavity: Check,
    pub two_point: Check,
}

/// Default step of the `z` stencil.
pub const Z_DELTA: f64 = 1e-4;

/// Computes `z_c` by a fourth-order central difference of `ell_tau^2 / 2`
/// (first differences only), then the `L` concavity and two-point `z`
/// certificates. `times` must be uniform for the concavity test.
pub fn z_function<T: Real, E: HopfLaxEngine<T> + ?Sized>(engine: &E, trace: &GeodesicTrace<T>, delta: T, tol: T) -> Result<ZProfile<T>> {
    let ell = trace.length;
    if !(ell > lit::<T>(1e-12)) {
        return Err(Error::NullGeodesic);
    }
    let half = lit::<T>(0.5);
    let sq = |x: &Coords<T>, tau: T| -> T {
        let (a, b) = engine.ell(x, tau);
        let l = half * (a + b);
        half * l * l
    };
    let mut z = Vec::with_capacity(trace.times.len());
    for (k, &t) in trace.times.iter().enumerate() {
        if !(t - lit::<T>(2.0) * delta > T::zero() && t + lit::<T>(2.0) * delta < T::one()) {
            return domain("z stencil leaves (0, 1)");
        }
        let x = &trace.positions[k];
        let d1 = sq(x, t + delta) - sq(x, t - delta);
        let d2 = sq(x, t + lit::<T>(2.0) * delta) - sq(x, t - lit::<T>(2.0) * delta);
        z.push((lit::<T>(8.0) * d1 - d2) / (lit::<T>(12.0) * delta));
    }
    let l2 = ell * ell;
    let mut l_factor = Vec::with_capacity(z.len());
    let mut acc = T::zero();
    for k in 0..z.len() {
        if k > 0 {
            acc = acc + half * (z[k] + z[k - 1]) * (trace.times[k] - trace.times[k - 1]);
        }
        l_factor.push((-acc / l2).exp());
    }
    let mut conc = SlackAccumulator::new("l_concavity", tol);
    for k in 1..z.len().saturating_sub(1) {
        let (t0, t1, t2) = (trace.times[k - 1], trace.times[k], trace.times[k + 1]);
        let w = (t1 - t0) / (t2 - t0);
        let chord = (T::one() - w) * l_factor[k - 1] + w * l_factor[k + 1];
        conc.record(l_factor[k] - chord, || json!({ "t": to_f64(t1) }));
    }
    let mut two = SlackAccumulator::new("z_two_point", tol);
    for i in 0..z.len() {
        for j in (i + 1)..z.len() {
            let (s, t) = (trace.times[i], trace.times[j]);
            let lhs = (z[j] - z[i]) / (t - s);
            let c = ((s / t) * ((T::one() - t) / (T::one() - s))).sqrt();
            let rhs = c * z[i].abs() * z[j].abs() / l2;
            two.record(lhs - rhs, || json!({ "s": to_f64(s), "t": to_f64(t) }));
        }
    }
    Ok(ZProfile {
        times: trace.times.clone(),
        z,
        length: ell,
        l_factor,
        concavity: conc.finish(),
        two_point: two.finish(),
    })
}
