//! Discrete quadratic optimal transport: exact plans with Kantorovich duals,
//! displacement interpolation, and the entropy and density inequalities of
//! the curvature-dimension condition along the computed plan.
//!
//! The general solver is a transportation simplex on the supports. On a
//! segment, [`solve_w2`] uses the quantile (north-west staircase) coupling
//! instead, and the entropy check uses the exact piecewise-uniform model of
//! [`line`], where every sample weight is spread over its Voronoi cell.

pub mod line;
pub mod simplex;

use crate::coefficients::{sigma, tau, CurvatureParams, Dim};
use crate::error::{domain, Error, Result};
use crate::hopflax::{build_trace, c_transform, GeodesicTrace, SampleEngine};
use crate::report::{Check, SlackAccumulator};
use crate::scalar::{cnt, lit, to_f64, total_cmp, Real};
use crate::spaces::{Coords, DiscreteMeasure, Potential, SampledSpace, SpaceKind};
use line::{CellMeasure1d, MonotoneMap1d, SmoothDensity1d, SmoothMonotone1d};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use std::io::{Read, Write};
use std::time::Instant;

/// Relative mismatch of total masses that is silently rescaled away.
pub const MASS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<T> {
    /// `(i, j, mass)` with `i` a source and `j` a target sample index.
    pub support: Vec<(usize, usize, T)>,
    pub source: DiscreteMeasure<T>,
    pub target: DiscreteMeasure<T>,
    /// `sum mass * d(i, j)^2 / 2`.
    pub cost: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPair<T> {
    pub phi: Potential<T>,
    pub phi_c: Potential<T>,
    /// `|cost - int phi dmu_0 - int phi^c dmu_1|`.
    pub duality_gap: T,
}

fn half_sq<T: Real>(space: &SampledSpace<T>, i: usize, j: usize) -> T {
    let d = space.dist(i, j);
    d * d / lit(2.0)
}

impl<T: Real> TransportPlan<T> {
    pub fn w2(&self) -> T {
        (lit::<T>(2.0) * self.cost).sqrt()
    }

    /// Largest absolute deviation of the plan marginals from source and target.
    pub fn marginal_defect(&self) -> T {
        let mut a = vec![T::zero(); self.source.len()];
        let mut b = vec![T::zero(); self.target.len()];
        for &(i, j, m) in &self.support {
            a[i] = a[i] + m;
            b[j] = b[j] + m;
        }
        let da = a.iter().zip(&self.source.weights).map(|(x, y)| (*x - *y).abs());
        let db = b.iter().zip(&self.target.weights).map(|(x, y)| (*x - *y).abs());
        da.chain(db).fold(T::zero(), T::max)
    }

    /// Largest gain `sum c(x_k, y_k) - sum c(x_k, y_{k+1})` over `samples`
    /// random support cycles of length 2 to 4; nonpositive for a
    /// cyclically monotone support.
    pub fn cyclic_monotonicity_defect(&self, space: &SampledSpace<T>, samples: usize, seed: u64) -> T {
        let supp: Vec<(usize, usize)> = self.support.iter().filter(|s| s.2 > T::zero()).map(|s| (s.0, s.1)).collect();
        if supp.len() < 2 {
            return T::zero();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = T::neg_infinity();
        for k in 0..samples {
            let len = (2 + k % 3).min(supp.len());
            let cyc: Vec<&(usize, usize)> = supp.choose_multiple(&mut rng, len).collect();
            let mut gain = T::zero();
            for (a, pair) in cyc.iter().enumerate() {
                let next = cyc[(a + 1) % cyc.len()];
                gain = gain + half_sq(space, pair.0, pair.1) - half_sq(space, pair.0, next.1);
            }
            worst = worst.max(gain);
        }
        worst
    }

    /// Plan dump with header `i,j,mass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "mass"])?;
        for &(i, j, m) in &self.support {
            wr.write_record([i.to_string(), j.to_string(), format!("{m:.16e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `(i, j, mass)` triples written by [`TransportPlan::write_csv`].
    pub fn read_support_csv<R: Read>(r: R) -> Result<Vec<(usize, usize, T)>> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse(format!("missing column {k}")));
            let i = field(0)?.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
            let j = field(1)?.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
            let m = field(2)?.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?;
            out.push((i, j, lit(m)));
        }
        Ok(out)
    }
}

impl<T: Real> DualPair<T> {
    /// `max (phi(x) + phi^c(y) - d(x,y)^2/2)` over all pairs; nonpositive when feasible.
    pub fn feasibility_defect(&self, space: &SampledSpace<T>) -> T {
        (0..space.len())
            .into_par_iter()
            .map(|i| (0..space.len()).map(|j| self.phi[i] + self.phi_c[j] - half_sq(space, i, j)).fold(T::neg_infinity(), T::max))
            .reduce(|| T::neg_infinity(), T::max)
    }

    /// `max |phi(x) + phi^c(y) - d(x,y)^2/2|` over the support of a plan.
    pub fn support_defect(&self, space: &SampledSpace<T>, plan: &TransportPlan<T>) -> T {
        plan.support
            .iter()
            .filter(|s| s.2 > T::zero())
            .map(|&(i, j, _)| (self.phi[i] + self.phi_c[j] - half_sq(space, i, j)).abs())
            .fold(T::zero(), T::max)
    }
}

/// Normalizes the target to the source mass; errors beyond [`MASS_TOL`] or the summation floor of `T`.
fn balanced<T: Real>(space: &SampledSpace<T>, mu0: &DiscreteMeasure<T>, mu1: &DiscreteMeasure<T>) -> Result<DiscreteMeasure<T>> {
    if mu0.len() != space.len() || mu1.len() != space.len() {
        return domain("measure length does not match the space");
    }
    let (a, b) = (mu0.total(), mu1.total());
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::Infeasible("both measures need positive mass".into()));
    }
    // Summation error grows with the support size; matters at f32.
    let tol = lit::<T>(MASS_TOL).max(lit::<T>(8.0) * cnt::<T>(space.len()) * T::epsilon());
    if (a - b).abs() > tol * a.max(b) {
        return Err(Error::Infeasible(format!("total masses differ: {a} vs {b}")));
    }
    Ok(DiscreteMeasure { weights: mu1.weights.iter().map(|&w| w * a / b).collect() })
}

/// Extends LP column potentials to a symmetrized c-concave pair on the whole sample.
fn extend_duals<T: Real>(space: &SampledSpace<T>, cols: &[usize], v: &[T]) -> (Potential<T>, Potential<T>) {
    let phi: Potential<T> = (0..space.len())
        .into_par_iter()
        .map(|x| cols.iter().zip(v).map(|(&j, &vj)| half_sq(space, x, j) - vj).fold(T::infinity(), T::min))
        .collect();
    let phi_c = c_transform(space, &phi);
    let phi = c_transform(space, &phi_c);
    let phi_c = c_transform(space, &phi);
    (phi, phi_c)
}

fn assemble<T: Real>(
    space: &SampledSpace<T>,
    mu0: &DiscreteMeasure<T>,
    mu1: DiscreteMeasure<T>,
    rows: &[usize],
    cols: &[usize],
    sol: simplex::LpSolution<T>,
) -> (TransportPlan<T>, DualPair<T>) {
    let mut support: Vec<(usize, usize, T)> = sol.basis.iter().filter(|c| c.2 > T::zero()).map(|&(i, j, m)| (rows[i], cols[j], m)).collect();
    support.sort_by_key(|s| (s.0, s.1));
    let cost: T = support.iter().map(|&(i, j, m)| m * half_sq(space, i, j)).sum();
    let (phi, phi_c) = extend_duals(space, cols, &sol.v);
    let dual: T = phi.iter().zip(&mu0.weights).map(|(p, w)| *p * *w).sum::<T>() + phi_c.iter().zip(&mu1.weights).map(|(p, w)| *p * *w).sum::<T>();
    let duality_gap = (cost - dual).abs();
    (TransportPlan { support, source: mu0.clone(), target: mu1, cost }, DualPair { phi, phi_c, duality_gap })
}

fn cost_matrix<T: Real>(space: &SampledSpace<T>, rows: &[usize], cols: &[usize]) -> Vec<T> {
    rows.par_iter().flat_map_iter(|&i| cols.iter().map(move |&j| half_sq(space, i, j))).collect()
}

/// Exact optimal plan by the transportation simplex, on any space.
pub fn solve_w2_lp<T: Real>(space: &SampledSpace<T>, mu0: &DiscreteMeasure<T>, mu1: &DiscreteMeasure<T>) -> Result<(TransportPlan<T>, DualPair<T>)> {
    let mu1 = balanced(space, mu0, mu1)?;
    let (rows, cols) = (mu0.support(), mu1.support());
    let cost = cost_matrix(space, &rows, &cols);
    let a: Vec<T> = rows.iter().map(|&i| mu0.weights[i]).collect();
    let b: Vec<T> = cols.iter().map(|&j| mu1.weights[j]).collect();
    let sol = simplex::solve(&cost, &a, &b, simplex::Init::LeastCost)?;
    Ok(assemble(space, mu0, mu1, &rows, &cols, sol))
}

/// Monotone (quantile) coupling of two weighted point sets on a line, with
/// both sides sorted by position: the north-west staircase.
pub fn quantile_coupling<T: Real>(a: &[T], b: &[T]) -> Vec<(usize, usize, T)> {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().copied().unwrap_or(T::zero()), b.first().copied().unwrap_or(T::zero()));
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let q = ra.min(rb);
        if q > T::zero() {
            out.push((i, j, q));
        }
        ra = ra - q;
        rb = rb - q;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i];
            }
        } else {
            j += 1;
            if j < b.len() {
                rb = b[j];
            }
        }
    }
    out
}

/// Segment fast path: quantile coupling with staircase duals. The staircase
/// basis is dual feasible for the Monge cost `|x - y|^2 / 2`; the simplex
/// pricing pass confirms this and repairs it if rounding says otherwise.
pub fn solve_w2_quantile<T: Real>(space: &SampledSpace<T>, mu0: &DiscreteMeasure<T>, mu1: &DiscreteMeasure<T>) -> Result<(TransportPlan<T>, DualPair<T>)> {
    if !matches!(space.kind, SpaceKind::Segment { .. }) {
        return domain("the quantile fast path needs a segment");
    }
    let mu1 = balanced(space, mu0, mu1)?;
    let by_pos = |s: Vec<usize>| {
        let mut s = s;
        s.sort_by(|&x, &y| total_cmp(&space.points[x][0], &space.points[y][0]));
        s
    };
    let (rows, cols) = (by_pos(mu0.support()), by_pos(mu1.support()));
    let cost = cost_matrix(space, &rows, &cols);
    let a: Vec<T> = rows.iter().map(|&i| mu0.weights[i]).collect();
    let b: Vec<T> = cols.iter().map(|&j| mu1.weights[j]).collect();
    let sol = simplex::solve(&cost, &a, &b, simplex::Init::NorthWest)?;
    Ok(assemble(space, mu0, mu1, &rows, &cols, sol))
}

/// Optimal plan and duals; dispatches to the quantile path on segments.
pub fn solve_w2<T: Real>(space: &SampledSpace<T>, mu0: &DiscreteMeasure<T>, mu1: &DiscreteMeasure<T>) -> Result<(TransportPlan<T>, DualPair<T>)> {
    match space.kind {
        SpaceKind::Segment { .. } => solve_w2_quantile(space, mu0, mu1),
        _ => solve_w2_lp(space, mu0, mu1),
    }
}

/// `rho_t(gamma_t)` sampled along one geodesic of a transport.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTrace<T> {
    pub length: T,
    /// Mass carried by the geodesic (plan weight or quadrature weight).
    pub mass: T,
    pub times: Vec<T>,
    pub rho: Vec<T>,
}

/// Output of [`displacement_interpolate`].
#[derive(Clone, Debug)]
pub struct Interpolation<T> {
    pub times: Vec<T>,
    pub measures: Vec<DiscreteMeasure<T>>,
    /// One trace per support triple, aligned with `plan.support`.
    pub traces: Vec<DensityTrace<T>>,
}

/// Deposits mass at `p`: linear split between the two neighbours on a
/// segment or circle, nearest sample elsewhere.
fn deposit<T: Real>(space: &SampledSpace<T>, p: &Coords<T>, mass: T, out: &mut [T]) {
    let n = space.len();
    let split = |u: T, out: &mut [T], wrap: bool| {
        let k = u.floor();
        let w = u - k;
        let k = k.to_usize().unwrap_or(0);
        let (k0, k1) = if wrap { (k % n, (k + 1) % n) } else { (k.min(n - 1), (k + 1).min(n - 1)) };
        out[k0] = out[k0] + mass * (T::one() - w);
        out[k1] = out[k1] + mass * w;
    };
    match space.kind {
        SpaceKind::Segment { a, b } => {
            let h = (b - a) / cnt(n - 1);
            split(((p[0] - a) / h).max(T::zero()).min(cnt(n - 1)), out, false);
        }
        SpaceKind::Circle { circumference } => {
            let h = circumference / cnt(n);
            let x = crate::spaces::wrap_signed(p[0], circumference);
            let x = if x < T::zero() { x + circumference } else { x };
            split(x / h, out, true);
        }
        _ => {
            let k = space.snap(p);
            out[k] = out[k] + mass;
        }
    }
}

/// `(e_t)_# nu` on the sample for each `t`, with per-trace density estimates
/// `mu_t(cell) / reference(cell)` at the snap cell of `gamma_t`.
pub fn displacement_interpolate<T: Real>(
    space: &SampledSpace<T>,
    plan: &TransportPlan<T>,
    reference: &DiscreteMeasure<T>,
    t_grid: &[T],
) -> Result<Interpolation<T>> {
    if t_grid.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return domain("interpolation times must lie in [0, 1]");
    }
    let mut positions: Vec<Vec<Coords<T>>> = Vec::with_capacity(plan.support.len());
    for &(i, j, _) in &plan.support {
        let row: Result<Vec<Coords<T>>> = t_grid.iter().map(|&t| space.geodesic_unique(i, j, t)).collect();
        positions.push(row?);
    }
    let measures: Vec<DiscreteMeasure<T>> = t_grid
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            if t == T::zero() {
                return plan.source.clone();
            }
            if t == T::one() {
                return plan.target.clone();
            }
            let mut w = vec![T::zero(); space.len()];
            for (s, &(_, _, m)) in plan.support.iter().enumerate() {
                deposit(space, &positions[s][k], m, &mut w);
            }
            DiscreteMeasure { weights: w }
        })
        .collect();
    let traces = plan
        .support
        .iter()
        .enumerate()
        .map(|(s, &(i, j, m))| {
            let rho = t_grid
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let cell = if t == T::zero() {
                        i
                    } else if t == T::one() {
                        j
                    } else {
                        space.snap(&positions[s][k])
                    };
                    let r = reference.weights[cell];
                    if r > T::zero() {
                        measures[k].weights[cell] / r
                    } else {
                        T::nan()
                    }
                })
                .collect();
            DensityTrace { length: space.dist(i, j), mass: m, times: t_grid.to_vec(), rho }
        })
        .collect();
    Ok(Interpolation { times: t_grid.to_vec(), measures, traces })
}

/// Hopf-Lax traces of every positive-mass support pair at interior `times`.
pub fn plan_traces<T: Real>(engine: &SampleEngine<'_, T>, plan: &TransportPlan<T>, times: &[T]) -> Result<Vec<GeodesicTrace<T>>> {
    plan.support
        .par_iter()
        .filter(|s| s.2 > T::zero())
        .map(|&(i, j, _)| {
            let mut tr = build_trace(engine, engine.space.points[i], engine.space.points[j], times)?;
            tr.endpoints = Some((i, j));
            Ok(tr)
        })
        .collect()
}

/// Which distortion coefficient enters the entropy inequality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropyVariant {
    /// `tau_{K,N}`.
    Cd,
    /// `sigma_{K,N}` (reduced condition).
    CdStar,
}

impl std::str::FromStr for EntropyVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(Self::Cd),
            "cdstar" | "cd*" => Ok(Self::CdStar),
            _ => domain(format!("unknown entropy variant {s:?}")),
        }
    }
}

fn finite_n<T: Real>(params: &CurvatureParams<T>) -> Result<T> {
    params.require_above_one()?;
    match params.n {
        Dim::Finite(n) => Ok(n),
        Dim::Infinite => domain("entropy and density inequalities need finite N"),
    }
}

fn coefficient<T: Real>(params: &CurvatureParams<T>, variant: EntropyVariant, t: T, theta: T) -> Result<T> {
    let c = match variant {
        EntropyVariant::Cd => tau(*params, t, theta)?,
        EntropyVariant::CdStar => sigma(params.k, params.n, t, theta)?,
    };
    Ok(c.to_real())
}

/// Renyi-type entropy `E_N(mu) = sum rho^{1 - 1/N} m` with `rho = mu / m` cellwise.
pub fn entropy<T: Real>(mu: &[T], reference: &[T], n: T) -> T {
    mu.iter()
        .zip(reference)
        .filter(|(w, _)| **w > T::zero())
        .map(|(&w, &r)| r * (w / r).powf(T::one() - T::one() / n))
        .sum()
}

fn check_absolute_continuity<T: Real>(reference: &DiscreteMeasure<T>, mus: [&DiscreteMeasure<T>; 2]) -> Result<()> {
    for mu in mus {
        if mu.len() != reference.len() {
            return domain("measure length does not match the reference");
        }
        if let Some(i) = (0..mu.len()).find(|&i| mu.weights[i] > T::zero() && !(reference.weights[i] > T::zero())) {
            return domain(format!("division by zero reference weight at point {i}"));
        }
    }
    Ok(())
}

/// Total variation of a sequence.
fn total_variation<T: Real>(xs: &[T]) -> T {
    xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Binning budget of the piecewise-uniform model on a segment: mesh size
/// times the total variation of the reference Lebesgue density and of the
/// two entropy densities `rho^{1-1/N}`.
pub fn segment_binning_budget<T: Real>(reference: &CellMeasure1d<T>, mu0: &CellMeasure1d<T>, mu1: &CellMeasure1d<T>, n: T) -> T {
    let h = (0..reference.len()).map(|k| reference.width(k)).fold(T::zero(), T::max);
    let e = T::one() - T::one() / n;
    let dens: Vec<T> = (0..reference.len()).map(|k| reference.density(k)).collect();
    let ent = |mu: &CellMeasure1d<T>| -> Vec<T> { (0..mu.len()).map(|k| (mu.masses[k] / reference.masses[k]).max(T::zero()).powf(e)).collect() };
    h * (total_variation(&dens) + total_variation(&ent(mu0)) + total_variation(&ent(mu1)))
}

/// Entropy inequality along the computed optimal plan:
/// `E_N(mu_t) >= int [c^{(1-t)}(d) rho_0^{-1/N}(x) + c^{(t)}(d) rho_1^{-1/N}(y)] dpi`
/// with `c = tau_{K,N}` (CD) or `sigma_{K,N}` (CD*). Slack is LHS - RHS per
/// `t`. Without an explicit `tol`, segments use [`segment_binning_budget`]
/// and other spaces `|reference| * 2 fill / diam`.
///
/// The condition asks for some good plan; this checks the computed one,
/// which is the unique optimal plan on the non-branching model spaces.
#[allow(clippy::too_many_arguments)]
pub fn check_cd_entropy<T: Real>(
    space: &SampledSpace<T>,
    reference: &DiscreteMeasure<T>,
    mu0: &DiscreteMeasure<T>,
    mu1: &DiscreteMeasure<T>,
    params: &CurvatureParams<T>,
    variant: EntropyVariant,
    t_grid: &[T],
    tol: Option<T>,
) -> Result<Check> {
    let start = Instant::now();
    let n = finite_n(params)?;
    check_absolute_continuity(reference, [mu0, mu1])?;
    let name = match variant {
        EntropyVariant::Cd => "cd_entropy",
        EntropyVariant::CdStar => "cdstar_entropy",
    };
    let inv = T::one() / n;
    let mut notes = vec!["tests the computed optimal plan".to_string()];
    let mut rows = Vec::with_capacity(t_grid.len());
    let budget = if let SpaceKind::Segment { .. } = space.kind {
        let cref = CellMeasure1d::from_segment(space, reference)?;
        let c0 = CellMeasure1d::from_segment(space, &mu0.normalized()?)?;
        let c1 = CellMeasure1d::from_segment(space, &mu1.normalized()?)?;
        let map = MonotoneMap1d::new(c0.clone(), c1.clone())?;
        let budget = segment_binning_budget(&cref, &c0, &c1, n);
        notes.push(format!("piecewise-uniform model, binning budget {:e}", to_f64(budget)));
        for &t in t_grid {
            let mt = map.interpolate(t, &cref.edges);
            let lhs = entropy(&mt, &cref.masses, n);
            let err = std::cell::Cell::new(None);
            let rhs = map.integrate(|p, x, y| {
                let d = (y - x).abs();
                let r0 = c0.masses[p.src] / cref.masses[p.src];
                let r1 = map.target.masses[p.dst] / cref.masses[p.dst];
                let a = coefficient(params, variant, T::one() - t, d);
                let b = coefficient(params, variant, t, d);
                match (a, b) {
                    (Ok(a), Ok(b)) => a * r0.powf(-inv) + b * r1.powf(-inv),
                    (Err(e), _) | (_, Err(e)) => {
                        err.set(Some(e));
                        T::nan()
                    }
                }
            });
            if let Some(e) = err.into_inner() {
                return Err(e);
            }
            rows.push((t, lhs, rhs));
        }
        budget
    } else {
        let mu0n = mu0.normalized()?;
        let mu1n = mu1.normalized()?;
        let (plan, _) = solve_w2(space, &mu0n, &mu1n)?;
        let interp = displacement_interpolate(space, &plan, reference, t_grid)?;
        for (k, &t) in t_grid.iter().enumerate() {
            let lhs = entropy(&interp.measures[k].weights, &reference.weights, n);
            let mut rhs = T::zero();
            for &(i, j, m) in &plan.support {
                let d = space.dist(i, j);
                let r0 = mu0n.weights[i] / reference.weights[i];
                let r1 = plan.target.weights[j] / reference.weights[j];
                rhs = rhs + m * r0.powf(-inv) * coefficient(params, variant, T::one() - t, d)? + m * r1.powf(-inv) * coefficient(params, variant, t, d)?;
            }
            rows.push((t, lhs, rhs));
        }
        let budget = reference.total() * lit::<T>(2.0) * space.fill_radius() / space.diameter();
        notes.push(format!("snapped interpolation, binning budget {:e}", to_f64(budget)));
        budget
    };
    let mut acc = SlackAccumulator::new(name, tol.unwrap_or(budget));
    for (t, lhs, rhs) in rows {
        acc.record(lhs - rhs, || json!({ "t": to_f64(t), "lhs": to_f64(lhs), "rhs": to_f64(rhs) }));
    }
    for n in notes {
        acc.note(n);
    }
    Ok(acc.finish().with_runtime(start.elapsed().as_secs_f64() * 1e3))
}

/// Density traces of the exact 1D monotone transport between two
/// piecewise-uniform measures with respect to a piecewise-uniform reference:
/// one trace per map piece, started at the piece midpoint.
pub fn segment_density_traces<T: Real>(reference: &CellMeasure1d<T>, map: &MonotoneMap1d<T>, times: &[T]) -> Vec<DensityTrace<T>> {
    let dens = |x: T| {
        let k = reference.edges.partition_point(|&e| e <= x).saturating_sub(1).min(reference.len() - 1);
        reference.density(k)
    };
    map.pieces
        .iter()
        .map(|p| {
            let x = (p.x0 + p.x1) / lit(2.0);
            let y = p.map(x);
            let f0 = p.mass / (p.x1 - p.x0);
            let slope = (p.y1 - p.y0) / (p.x1 - p.x0);
            let rho = times
                .iter()
                .map(|&t| {
                    let jac = (T::one() - t) + t * slope;
                    let z = (T::one() - t) * x + t * y;
                    f0 / jac / dens(z)
                })
                .collect();
            DensityTrace { length: (y - x).abs(), mass: p.mass, times: times.to_vec(), rho }
        })
        .collect()
}

/// Density traces of a smooth monotone transport with respect to a smooth
/// reference density, started at `starts`.
pub fn smooth_density_traces<T: Real>(reference: &SmoothDensity1d<T>, map: &SmoothMonotone1d<T>, starts: &[T], times: &[T]) -> Vec<DensityTrace<T>> {
    starts
        .iter()
        .map(|&x| {
            let y = map.map(x);
            let rho = times
                .iter()
                .map(|&t| map.density_along(x, t) / reference.eval((T::one() - t) * x + t * y))
                .collect();
            DensityTrace { length: (y - x).abs(), mass: T::one() / cnt(starts.len()), times: times.to_vec(), rho }
        })
        .collect()
}

/// Default relative tolerance of [`check_density_inequalities`].
pub const DENSITY_TOL: f64 = 1e-9;

/// Pointwise density inequalities along traces:
/// `cdkn_enb`: `rho_t^{-1/N} >= tau^{(1-t)}(d) rho_0^{-1/N} + tau^{(t)}(d) rho_1^{-1/N}`;
/// `mcp_density`: the same without the `rho_1` term;
/// `regularity_lower` / `regularity_upper`: for `s < t < 1`,
/// `tau^{(s/t)}(t d)^N <= rho_t / rho_s <= tau^{((1-t)/(1-s))}((1-s) d)^{-N}`;
/// `rho_lipschitz`: largest difference quotient of `t -> rho_t` on `[delta, 1 - delta]`.
///
/// Traces must include `t = 0` and `t = 1` for the first two families.
/// Slacks are relative: differences are divided by the larger side.
pub fn check_density_inequalities<T: Real>(traces: &[DensityTrace<T>], params: &CurvatureParams<T>, tol: Option<T>, delta: T) -> Result<Vec<Check>> {
    let start = Instant::now();
    let n = finite_n(params)?;
    let inv = T::one() / n;
    let tol = tol.unwrap_or(lit(DENSITY_TOL));
    let tau_r = |t: T, th: T| tau(*params, t, th).map(|c| c.to_real());
    let mut enb = SlackAccumulator::new("cdkn_enb", tol);
    let mut mcp = SlackAccumulator::new("mcp_density", tol);
    let mut lower = SlackAccumulator::new("regularity_lower", tol);
    let mut upper = SlackAccumulator::new("regularity_upper", tol);
    let mut lip = SlackAccumulator::new("rho_lipschitz", T::zero());
    let mut lip_max = T::zero();
    for (id, tr) in traces.iter().enumerate() {
        if tr.rho.iter().any(|r| !(*r > T::zero() && r.is_finite())) {
            return domain(format!("trace {id} has a nonpositive or undefined density"));
        }
        let d = tr.length;
        let i0 = tr.times.iter().position(|&t| t == T::zero());
        let i1 = tr.times.iter().position(|&t| t == T::one());
        for (k, &t) in tr.times.iter().enumerate() {
            if !(t > T::zero() && t < T::one()) {
                continue;
            }
            let lhs = tr.rho[k].powf(-inv);
            if let Some(i0) = i0 {
                let a = tau_r(T::one() - t, d)? * tr.rho[i0].powf(-inv);
                mcp.record((lhs - a) / lhs.max(a), || json!({ "trace": id, "t": to_f64(t) }));
                if let Some(i1) = i1 {
                    let b = tau_r(t, d)? * tr.rho[i1].powf(-inv);
                    enb.record((lhs - a - b) / lhs.max(a + b), || json!({ "trace": id, "t": to_f64(t) }));
                }
            }
        }
        for (ks, &s) in tr.times.iter().enumerate() {
            for (kt, &t) in tr.times.iter().enumerate() {
                if !(s < t && t < T::one()) {
                    continue;
                }
                let ratio = tr.rho[kt] / tr.rho[ks];
                let lo = tau_r(s / t, t * d)?.powf(n);
                lower.record((ratio - lo) / ratio.max(lo), || json!({ "trace": id, "s": to_f64(s), "t": to_f64(t), "ratio": to_f64(ratio) }));
                let up = tau_r((T::one() - t) / (T::one() - s), (T::one() - s) * d)?.powf(n);
                let prod = ratio * up;
                upper.record(T::one() - prod, || json!({ "trace": id, "s": to_f64(s), "t": to_f64(t), "ratio": to_f64(ratio) }));
                if s >= delta && t <= T::one() - delta {
                    let q = (tr.rho[kt] - tr.rho[ks]).abs() / (t - s);
                    lip_max = lip_max.max(q);
                }
            }
        }
    }
    lip.record(if lip_max.is_finite() { T::zero() } else { T::neg_infinity() }, || json!({ "max_difference_quotient": to_f64(lip_max) }));
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok([enb, mcp, lower, upper, lip].into_iter().map(|a| a.finish().with_runtime(ms)).collect())
}

/// Discrete `W_2` between two measures (solves a plan).
pub fn w2_distance<T: Real>(space: &SampledSpace<T>, mu0: &DiscreteMeasure<T>, mu1: &DiscreteMeasure<T>) -> Result<T> {
    Ok(solve_w2(space, mu0, mu1)?.0.w2())
}

/// `max |(phi^c)^c - phi|` of a dual pair's potential, for certification.
pub fn dual_c_concavity_defect<T: Real>(space: &SampledSpace<T>, dual: &DualPair<T>) -> T {
    crate::hopflax::c_concavity_defect(space, &dual.phi)
}

/// Whether every plan trace sits in the midpoint set of the dual potential:
/// worst `phibar_t - phi_t` over traces and interior times.
pub fn plan_midpoint_gap<T: Real>(engine: &SampleEngine<'_, T>, plan: &TransportPlan<T>, times: &[T]) -> Result<T> {
    let traces = plan_traces(engine, plan, times)?;
    Ok(traces.iter().flat_map(|tr| tr.midpoint_gaps()).fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::make_space;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn segment(n: usize) -> SampledSpace<f64> {
        make_space(SpaceKind::Segment { a: 0.0, b: 1.0 }, n).unwrap()
    }

    fn random_measure(n: usize, rng: &mut ChaCha8Rng, sparsity: f64) -> DiscreteMeasure<f64> {
        let mut w: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < sparsity { 0.0 } else { rng.gen::<f64>() }).collect();
        w[rng.gen_range(0..n)] = 1.0;
        DiscreteMeasure::new(w).unwrap().normalized().unwrap()
    }

    /// Exact cell masses of the sin measure on `[0, pi]`.
    fn sin_reference(space: &SampledSpace<f64>) -> DiscreteMeasure<f64> {
        let e = line::voronoi_edges(space).unwrap();
        DiscreteMeasure::new((0..space.len()).map(|k| (e[k].cos() - e[k + 1].cos()) / 2.0).collect()).unwrap()
    }

    fn tilted(reference: &DiscreteMeasure<f64>, space: &SampledSpace<f64>, a: f64, k: f64, p: f64) -> DiscreteMeasure<f64> {
        let w = (0..space.len()).map(|i| reference.weights[i] * (a * (k * space.points[i][0] + p).sin()).exp()).collect();
        DiscreteMeasure::new(w).unwrap().normalized().unwrap()
    }

    #[test]
    fn identity_plan_has_zero_cost() {
        let space = segment(20);
        let mu = DiscreteMeasure::uniform(20);
        for solve in [solve_w2_lp::<f64>, solve_w2_quantile::<f64>] {
            let (plan, dual) = solve(&space, &mu, &mu).unwrap();
            assert_eq!(plan.cost, 0.0);
            assert!(plan.support.iter().all(|&(i, j, _)| i == j));
            assert!(dual.duality_gap < 1e-15);
        }
    }

    #[test]
    fn two_point_transport_costs_half_theta_squared() {
        let space = make_space(SpaceKind::Circle { circumference: 2.0 * PI }, 16).unwrap();
        let theta = space.dist(0, 5);
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        a[0] = 1.0;
        b[5] = 1.0;
        let (plan, dual) = solve_w2(&space, &DiscreteMeasure::new(a).unwrap(), &DiscreteMeasure::new(b).unwrap()).unwrap();
        assert!((plan.cost - theta * theta / 2.0).abs() < 1e-15);
        assert!(dual.duality_gap < 1e-14);
    }

    #[test]
    fn unequal_masses_are_infeasible() {
        let space = segment(16);
        let a = DiscreteMeasure::uniform(16);
        let b = DiscreteMeasure::new(vec![0.2; 16]).unwrap();
        assert!(matches!(solve_w2(&space, &a, &b), Err(Error::Infeasible(_))));
    }

    #[test]
    fn quantile_coupling_matches_hand_computation() {
        let c = quantile_coupling(&[0.5, 0.5], &[0.25, 0.25, 0.5]);
        assert_eq!(c, vec![(0, 0, 0.25), (0, 1, 0.25), (1, 2, 0.5)]);
    }

    #[test]
    fn lp_and_quantile_agree_on_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let space = segment(40);
            let (a, b) = (random_measure(40, &mut rng, 0.4), random_measure(40, &mut rng, 0.4));
            let (p_lp, d_lp) = solve_w2_lp(&space, &a, &b).unwrap();
            let (p_q, d_q) = solve_w2_quantile(&space, &a, &b).unwrap();
            assert!((p_lp.cost - p_q.cost).abs() <= 1e-12 * (1.0 + p_q.cost));
            // Independent oracle: the staircase on sorted supports.
            let (ra, rb) = (a.support(), b.support());
            let wa: Vec<f64> = ra.iter().map(|&i| a.weights[i]).collect();
            let wb: Vec<f64> = rb.iter().map(|&j| b.weights[j]).collect();
            let stair: f64 = quantile_coupling(&wa, &wb).iter().map(|&(i, j, m)| m * half_sq(&space, ra[i], rb[j])).sum();
            assert!((p_lp.cost - stair).abs() <= 1e-12 * (1.0 + stair));
            for (p, d) in [(&p_lp, &d_lp), (&p_q, &d_q)] {
                assert!(p.marginal_defect() < 1e-12);
                assert!(d.feasibility_defect(&space) < 1e-12);
                assert!(d.support_defect(&space, p) < 1e-12);
                assert!(d.duality_gap < 1e-10 * (1.0 + p.cost));
            }
        }
    }

    #[test]
    fn duals_on_the_sphere_are_c_concave_and_tight() {
        let space = make_space(SpaceKind::Sphere { radius: 1.0 }, 120).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random_measure(space.len(), &mut rng, 0.7), random_measure(space.len(), &mut rng, 0.7));
        let (plan, dual) = solve_w2_lp(&space, &a, &b).unwrap();
        assert!(plan.marginal_defect() < 1e-12);
        assert!(dual.duality_gap <= 1e-8 * plan.cost);
        assert!(dual.feasibility_defect(&space) < 1e-12);
        assert!(dual.support_defect(&space, &plan) < 1e-12);
        assert!(dual_c_concavity_defect(&space, &dual) <= crate::hopflax::c_concavity_tol(&dual.phi));
        assert!(plan.cyclic_monotonicity_defect(&space, 2000, 1) <= 1e-12);
    }

    #[test]
    fn plan_traces_lie_in_the_midpoint_set() {
        let space = make_space(SpaceKind::Circle { circumference: 1.0 }, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = (random_measure(64, &mut rng, 0.5), random_measure(64, &mut rng, 0.5));
        let (plan, dual) = solve_w2(&space, &a, &b).unwrap();
        let engine = SampleEngine::new(&space, dual.phi.clone()).unwrap();
        let gap = plan_midpoint_gap(&engine, &plan, &[0.25, 0.5, 0.75]).unwrap();
        assert!(gap < 1e-12, "gap {gap}");
    }

    #[test]
    fn endpoints_of_the_interpolation_are_exact() {
        let space = segment(30);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_measure(30, &mut rng, 0.3), random_measure(30, &mut rng, 0.3));
        let (plan, _) = solve_w2(&space, &a, &b).unwrap();
        let it = displacement_interpolate(&space, &plan, &DiscreteMeasure::uniform(30), &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(it.measures[0], a);
        assert_eq!(it.measures[2], plan.target);
        assert!((it.measures[1].total() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_shift_interpolates_to_a_translated_uniform() {
        let space = segment(101);
        let w0: Vec<f64> = (0..101).map(|i| if i < 40 { 1.0 } else { 0.0 }).collect();
        let w1: Vec<f64> = (0..101).map(|i| if (60..100).contains(&i) { 1.0 } else { 0.0 }).collect();
        let mu0 = DiscreteMeasure::new(w0).unwrap().normalized().unwrap();
        let mu1 = DiscreteMeasure::new(w1).unwrap().normalized().unwrap();
        let (plan, _) = solve_w2(&space, &mu0, &mu1).unwrap();
        assert!((plan.w2() - 0.6).abs() < 1e-12);
        let it = displacement_interpolate(&space, &plan, &DiscreteMeasure::uniform(101), &[0.5]).unwrap();
        for (i, w) in it.measures[0].weights.iter().enumerate() {
            let expect = if (30..70).contains(&i) { 1.0 / 40.0 } else { 0.0 };
            assert!((w - expect).abs() < 1e-12, "point {i}: {w}");
        }
        let ratios: Vec<f64> = it.traces.iter().map(|tr| tr.rho[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-9));
    }

    #[test]
    fn sin_quantile_rescaling_matches_cdf_inversion() {
        // mu_0 = sin measure, mu_1 = uniform on [0, pi]; T(x) = pi (1 - cos x) / 2.
        let space = make_space(SpaceKind::Segment { a: 0.0, b: PI }, 401).unwrap();
        let reference = sin_reference(&space);
        let e = line::voronoi_edges(&space).unwrap();
        let flat = DiscreteMeasure::new((0..401).map(|k| (e[k + 1] - e[k]) / PI).collect()).unwrap();
        let c0 = CellMeasure1d::from_segment(&space, &reference).unwrap();
        let c1 = CellMeasure1d::from_segment(&space, &flat).unwrap();
        let map = MonotoneMap1d::new(c0, c1).unwrap();
        for k in 1..40 {
            let x = k as f64 * PI / 40.0;
            assert!((map.map(x) - PI * (1.0 - x.cos()) / 2.0).abs() < 1e-3);
        }
        // Oracle for mu_{1/2}: F_t(y) = F_0(T_t^{-1}(y)), inverted by bisection.
        let tt = |x: f64| 0.5 * x + 0.5 * PI * (1.0 - x.cos()) / 2.0;
        let inv = |y: f64| {
            let (mut lo, mut hi) = (0.0, PI);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if tt(mid) < y {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * PI / 50.0).collect();
        let got = map.interpolate(0.5, &grid);
        for k in 0..50 {
            let expect = (inv(grid[k]).cos() - inv(grid[k + 1]).cos()) / 2.0;
            assert!((got[k] - expect).abs() < 1e-4, "bin {k}: {} vs {expect}", got[k]);
        }
    }

    #[test]
    fn entropy_check_on_the_model_passes_and_flat_fails() {
        let space = make_space(SpaceKind::Segment { a: 0.0, b: PI }, 401).unwrap();
        let params = CurvatureParams::finite(1.0, 2.0).unwrap();
        let t: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let reference = sin_reference(&space);
        let mu0 = tilted(&reference, &space, 1.0, 2.0, 0.3);
        let mu1 = tilted(&reference, &space, 0.8, 3.0, 2.0);
        let cd = check_cd_entropy(&space, &reference, &mu0, &mu1, &params, EntropyVariant::Cd, &t, None).unwrap();
        assert!(cd.pass && cd.tolerance <= 0.05, "{cd:?}");
        let star = check_cd_entropy(&space, &reference, &mu0, &mu1, &params, EntropyVariant::CdStar, &t, None).unwrap();
        assert!(star.pass && star.slack >= cd.slack - 1e-12);

        let flat = DiscreteMeasure::uniform(401);
        let left = DiscreteMeasure::new((0..401).map(|i| if i < 120 { 1.0 } else { 0.0 }).collect()).unwrap().normalized().unwrap();
        let right = DiscreteMeasure::new((0..401).map(|i| if i > 280 { 1.0 } else { 0.0 }).collect()).unwrap().normalized().unwrap();
        let bad = check_cd_entropy(&space, &flat, &left, &right, &params, EntropyVariant::Cd, &t, None).unwrap();
        assert!(!bad.pass && bad.slack < 0.0 && !bad.witnesses.is_empty());
        let k0 = CurvatureParams::finite(0.0, 2.0).unwrap();
        assert!(check_cd_entropy(&space, &flat, &left, &right, &k0, EntropyVariant::Cd, &t, None).unwrap().pass);
    }

    #[test]
    fn entropy_check_requires_absolute_continuity() {
        let space = segment(16);
        let mut r = vec![1.0; 16];
        r[3] = 0.0;
        let reference = DiscreteMeasure::new(r).unwrap();
        let mu = DiscreteMeasure::uniform(16);
        let params = CurvatureParams::finite(0.0, 2.0).unwrap();
        assert!(check_cd_entropy(&space, &reference, &mu, &mu, &params, EntropyVariant::Cd, &[0.5], None).is_err());
    }

    #[test]
    fn entropy_check_on_a_sphere_sample_runs_through_the_plan() {
        let space = make_space(SpaceKind::Sphere { radius: 1.0 }, 200).unwrap();
        let reference = DiscreteMeasure::uniform(space.len());
        let cap = |c: [f64; 3]| {
            let w = space.points.iter().map(|p| {
                let dot = p[0] * c[0] + p[1] * c[1] + p[2] * c[2];
                if dot > 0.8 { 1.0 } else { 0.0 }
            });
            DiscreteMeasure::new(w.collect()).unwrap().normalized().unwrap()
        };
        let (mu0, mu1) = (cap([0.0, 0.0, 1.0]), cap([1.0, 0.0, 0.0]));
        let params = CurvatureParams::finite(0.0, 3.0).unwrap();
        let c = check_cd_entropy(&space, &reference, &mu0, &mu1, &params, EntropyVariant::Cd, &[0.25, 0.5, 0.75], None).unwrap();
        assert!(c.slack.is_finite());
        assert!(c.notes.iter().any(|n| n.contains("snapped")));
    }

    #[test]
    fn null_trace_reduces_to_affine_mixture() {
        let params = CurvatureParams::finite(1.0, 3.0).unwrap();
        let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let tr = DensityTrace { length: 0.0, mass: 1.0, times, rho: vec![2.0; 5] };
        let checks = check_density_inequalities(&[tr], &params, None, 0.1).unwrap();
        for c in &checks {
            assert!(c.pass, "{c:?}");
        }
        let enb = checks.iter().find(|c| c.name == "cdkn_enb").unwrap();
        assert!(enb.slack.abs() < 1e-12);
    }

    #[test]
    fn density_inequalities_hold_on_the_model_and_fail_flat() {
        let params = CurvatureParams::finite(1.0, 2.0).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let reference = SmoothDensity1d::from_fn(0.0, PI, 1 << 14, |x: f64| x.sin() / 2.0).unwrap();
        let f0 = SmoothDensity1d::from_fn(0.0, PI, 1 << 14, |x: f64| x.sin() * (0.5 * x.sin()).exp()).unwrap();
        let f1 = SmoothDensity1d::from_fn(0.0, PI, 1 << 14, |x: f64| x.sin() * (0.7 * (2.0 * x + 1.0).sin()).exp()).unwrap();
        let map = SmoothMonotone1d::new(&f0, &f1).unwrap();
        let starts: Vec<f64> = (1..40).map(|k| k as f64 * PI / 40.0).collect();
        let traces = smooth_density_traces(&reference, &map, &starts, &times);
        for c in check_density_inequalities(&traces, &params, Some(1e-6), 0.1).unwrap() {
            assert!(c.pass, "{c:?}");
        }

        let flat = SmoothDensity1d::from_fn(0.0, PI, 1 << 12, |_| 1.0 / PI).unwrap();
        let left = SmoothDensity1d::from_fn(0.0, PI, 1 << 12, |x: f64| (1.0 - x).max(0.0)).unwrap();
        let right = SmoothDensity1d::from_fn(0.0, PI, 1 << 12, |x: f64| (x - PI + 1.0).max(0.0)).unwrap();
        let shift = SmoothMonotone1d::new(&left, &right).unwrap();
        let starts: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let traces = smooth_density_traces(&flat, &shift, &starts, &times);
        let checks = check_density_inequalities(&traces, &params, Some(1e-6), 0.1).unwrap();
        let enb = checks.iter().find(|c| c.name == "cdkn_enb").unwrap();
        assert!(!enb.pass && !enb.witnesses.is_empty());
    }

    #[test]
    fn piecewise_uniform_traces_are_exact_for_translations() {
        let edges: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let cell = |lo: usize, hi: usize| CellMeasure1d::new(edges.clone(), (0..100).map(|i| if (lo..hi).contains(&i) { 0.05 } else { 0.0 }).collect()).unwrap();
        let reference = CellMeasure1d::new(edges.clone(), vec![0.01; 100]).unwrap();
        let map = MonotoneMap1d::new(cell(0, 20), cell(70, 90)).unwrap();
        let traces = segment_density_traces(&reference, &map, &[0.0, 0.5, 1.0]);
        for tr in &traces {
            assert!((tr.length - 0.7).abs() < 1e-12);
            assert!(tr.rho.iter().all(|r| (r - 5.0).abs() < 1e-9));
        }
    }

    #[test]
    fn plan_csv_round_trip() {
        let space = segment(16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (plan, _) = solve_w2(&space, &random_measure(16, &mut rng, 0.2), &random_measure(16, &mut rng, 0.2)).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"i,j,mass\n"));
        assert_eq!(TransportPlan::<f64>::read_support_csv(&buf[..]).unwrap(), plan.support);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn geodesic_property_of_interpolants(seed in 0u64..10_000) {
            let space = segment(60);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_measure(60, &mut rng, 0.5), random_measure(60, &mut rng, 0.5));
            let (plan, _) = solve_w2(&space, &a, &b).unwrap();
            let it = displacement_interpolate(&space, &plan, &DiscreteMeasure::uniform(60), &[0.0, 0.3, 0.7, 1.0]).unwrap();
            let w = plan.w2();
            let d = w2_distance(&space, &it.measures[1], &it.measures[2]).unwrap();
            // Linear deposition moves mass by at most half a cell.
            let h = 1.0 / 59.0;
            prop_assert!((d - 0.4 * w).abs() <= h + 1e-12);
            let d01 = w2_distance(&space, &it.measures[0], &it.measures[1]).unwrap();
            let d13 = w2_distance(&space, &it.measures[1], &it.measures[3]).unwrap();
            prop_assert!(w <= d01 + d13 + 1e-12);
        }

        #[test]
        fn cd_pass_implies_cdstar_pass(seed in 0u64..10_000, k in -1.0f64..1.0) {
            let space = make_space(SpaceKind::Segment { a: 0.0, b: PI }, 101).unwrap();
            let reference = sin_reference(&space);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu0 = tilted(&reference, &space, rng.gen_range(0.0..1.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..6.0));
            let mu1 = tilted(&reference, &space, rng.gen_range(0.0..1.0), rng.gen_range(1.0..3.0), rng.gen_range(0.0..6.0));
            let params = CurvatureParams::finite(k, 2.0).unwrap();
            let t = [0.2, 0.5, 0.8];
            let cd = check_cd_entropy(&space, &reference, &mu0, &mu1, &params, EntropyVariant::Cd, &t, None).unwrap();
            let star = check_cd_entropy(&space, &reference, &mu0, &mu1, &params, EntropyVariant::CdStar, &t, None).unwrap();
            prop_assert!(star.slack >= cd.slack - 1e-12);
            if cd.pass {
                prop_assert!(star.pass);
            }
        }
    }
}
