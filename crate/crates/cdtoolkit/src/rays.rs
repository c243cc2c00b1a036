//! Transport rays of a 1-Lipschitz guide on a sample: the relation
//! `u(x) - u(y) = d(x, y)`, the transport set, forward and backward
//! branching points, greedy ray extraction, disintegration of a measure
//! along the rays, and the needle-wise CD and MCP checks.

use crate::cd1d::{check_three_point, GridDensity};
use crate::coefficients::{tau, CurvatureParams, Dim};
use crate::error::{domain, Error, Result};
use crate::report::{Check, SlackAccumulator};
use crate::scalar::{cnt, lit, simpson, to_f64, total_cmp, Real};
use crate::spaces::{lipschitz_defect, metric_tolerance, signed_distance, DiscreteMeasure, Potential, SampledSpace, SpaceKind};
use crate::w2::line::{voronoi_edges, CellMeasure1d};
use crate::w2::{check_density_inequalities, entropy, DensityTrace};
use rayon::prelude::*;
use serde_json::json;
use std::io::Write;
use std::time::Instant;

/// Default relative ray tolerance: `ray_tol = RAY_TOL_REL * (1 + diam)`.
pub const RAY_TOL_REL: f64 = 1e-9;

/// Number of three-point triples per ray conditional.
pub const RAY_TRIPLES: usize = 2000;

pub fn default_ray_tol<T: Real>(space: &SampledSpace<T>) -> T {
    lit::<T>(RAY_TOL_REL) * (T::one() + space.diameter())
}

/// A maximal unit-slope chain, ordered by decreasing `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray<T> {
    pub points: Vec<usize>,
    /// Arclength from the first point, `u(first) - u(p)`.
    pub arclength: Vec<T>,
}

impl<T: Real> Ray<T> {
    pub fn length(&self) -> T {
        self.arclength[self.arclength.len() - 1]
    }

    pub fn interior(&self) -> &[usize] {
        &self.points[1..self.points.len() - 1]
    }
}

#[derive(Clone, Debug)]
pub struct TransportStructure<T> {
    /// `below[x]`: points `y != x` with `u(x) - u(y) >= d(x, y) - ray_tol`,
    /// sorted by distance from `x`.
    pub below: Vec<Vec<usize>>,
    pub transport_set: Vec<bool>,
    pub branch_plus: Vec<bool>,
    pub branch_minus: Vec<bool>,
    pub rays: Vec<Ray<T>>,
    pub ray_tol: T,
    pub u: Potential<T>,
}

impl<T: Real> TransportStructure<T> {
    /// Ordered pairs `(x, y)` of the relation with `x != y`.
    pub fn gamma_pairs(&self) -> Vec<(usize, usize)> {
        self.below.iter().enumerate().flat_map(|(x, ys)| ys.iter().map(move |&y| (x, y))).collect()
    }

    pub fn is_branch(&self, x: usize) -> bool {
        self.branch_plus[x] || self.branch_minus[x]
    }

    /// `(ray, position)` memberships of each point.
    pub fn memberships(&self, n: usize) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); n];
        for (r, ray) in self.rays.iter().enumerate() {
            for (k, &p) in ray.points.iter().enumerate() {
                out[p].push((r, k));
            }
        }
        out
    }

    /// Ray dump: `ray_id, order, point_index, arclength, u_value, conditional_density`.
    pub fn write_csv<W: Write>(&self, w: W, conditionals: Option<&[GridDensity<T>]>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["ray_id", "order", "point_index", "arclength", "u_value", "conditional_density"])?;
        for (r, ray) in self.rays.iter().enumerate() {
            for (k, (&p, &s)) in ray.points.iter().zip(&ray.arclength).enumerate() {
                let dens = conditionals.map(|c| format!("{:.16e}", c[r].eval(s))).unwrap_or_default();
                wr.write_record([r.to_string(), k.to_string(), p.to_string(), format!("{s:.16e}"), format!("{:.16e}", self.u[p]), dens])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn related<T: Real>(space: &SampledSpace<T>, u: &[T], x: usize, y: usize, tol: T) -> bool {
    (u[x] - u[y]).abs() >= space.dist(x, y) - tol
}

/// Consecutive elements (by `u`) of `set` that are unrelated; `None` for a chain.
fn unrelated_pair<T: Real>(space: &SampledSpace<T>, u: &[T], set: &[usize], tol: T) -> Option<(usize, usize)> {
    let mut s = set.to_vec();
    s.sort_by(|&a, &b| total_cmp(&u[b], &u[a]));
    s.windows(2).find(|w| !related(space, u, w[0], w[1], tol)).map(|w| (w[0], w[1]))
}

/// Builds the transport relation, branching sets and rays. `ray_tol`
/// defaults to [`default_ray_tol`].
pub fn build_transport_structure<T: Real>(space: &SampledSpace<T>, u: &[T], ray_tol: Option<T>) -> Result<TransportStructure<T>> {
    let n = space.len();
    if u.len() != n {
        return domain("guide length does not match the space");
    }
    let tol = ray_tol.unwrap_or_else(|| default_ray_tol(space));
    let (defect, i, j) = lipschitz_defect(space, u);
    if defect > tol.max(metric_tolerance(space)) {
        return Err(Error::NotLipschitz { defect: to_f64(defect), i, j });
    }
    let below: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut ys: Vec<usize> = (0..n).filter(|&y| y != x && u[x] - u[y] >= space.dist(x, y) - tol && u[x] > u[y]).collect();
            ys.sort_by(|&a, &b| total_cmp(&space.dist(x, a), &space.dist(x, b)).then(a.cmp(&b)));
            ys
        })
        .collect();
    let mut above: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (x, ys) in below.iter().enumerate() {
        for &y in ys {
            above[y].push(x);
        }
    }
    for (y, xs) in above.iter_mut().enumerate() {
        xs.sort_by(|&a, &b| total_cmp(&space.dist(y, a), &space.dist(y, b)).then(a.cmp(&b)));
    }
    let transport_set: Vec<bool> = (0..n).map(|x| !below[x].is_empty() || !above[x].is_empty()).collect();
    let branch_plus: Vec<bool> = (0..n).into_par_iter().map(|x| unrelated_pair(space, u, &below[x], tol).is_some()).collect();
    let branch_minus: Vec<bool> = (0..n).into_par_iter().map(|x| unrelated_pair(space, u, &above[x], tol).is_some()).collect();
    let mut st = TransportStructure { below, transport_set, branch_plus, branch_minus, rays: Vec::new(), ray_tol: tol, u: u.to_vec() };
    st.rays = extract_rays(space, &st, &above)?;
    Ok(st)
}

/// Collinear continuation test for a chain `.. prev, last` with candidate `y`.
fn continues<T: Real>(space: &SampledSpace<T>, chain: &[usize], y: usize, tol: T) -> bool {
    let last = chain[chain.len() - 1];
    if chain.len() >= 2 {
        let prev = chain[chain.len() - 2];
        if space.dist(prev, last) + space.dist(last, y) - space.dist(prev, y) > tol {
            return false;
        }
    }
    true
}

fn extract_rays<T: Real>(space: &SampledSpace<T>, st: &TransportStructure<T>, above: &[Vec<usize>]) -> Result<Vec<Ray<T>>> {
    let n = space.len();
    let u = &st.u;
    let tol = st.ray_tol;
    // owner[p]: ray holding p in its interior; endpoint[p]: p ends some ray.
    let mut owner = vec![usize::MAX; n];
    let mut endpoint = vec![false; n];
    let mut order: Vec<usize> = (0..n).filter(|&x| st.transport_set[x]).collect();
    order.sort_by(|&a, &b| total_cmp(&u[b], &u[a]).then(a.cmp(&b)));
    let mut rays: Vec<Ray<T>> = Vec::new();
    let mut used_edges = std::collections::HashSet::new();
    let mut member: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &start in &order {
        if owner[start] != usize::MAX || (endpoint[start] && !st.is_branch(start)) {
            continue;
        }
        // A start that is already an endpoint may still open further rays
        // along unused edges (shared endpoints at branch points).
        loop {
            let rid = rays.len();
            let mut chain = vec![start];
            let top_ok = |c: &[usize], y: usize| u[c[0]] - u[y] >= space.dist(c[0], y) - tol;
            // Downward growth.
            loop {
                let last = chain[chain.len() - 1];
                if chain.len() > 1 && (st.is_branch(last) || endpoint[last]) {
                    break;
                }
                let next = st.below[last]
                    .iter()
                    .copied()
                    .find(|&y| {
                        !chain.contains(&y)
                            && !used_edges.contains(&(last, y))
                            && !member[y].iter().any(|r| member[last].contains(r))
                            && top_ok(&chain, y)
                            && continues(space, &chain, y, tol)
                    });
                let Some(y) = next else { break };
                if owner[y] != usize::MAX {
                    return Err(Error::OverlappingRays(owner[y], rid, y));
                }
                chain.push(y);
            }
            // Upward growth when the start is not itself a branch point.
            if !st.is_branch(start) {
                loop {
                    let first = chain[0];
                    if chain.len() > 1 && first != start && (st.is_branch(first) || endpoint[first]) {
                        break;
                    }
                    let bottom = chain[chain.len() - 1];
                    let next = above[first].iter().copied().find(|&z| {
                        !chain.contains(&z)
                            && !used_edges.contains(&(z, first))
                            && !member[z].iter().any(|r| member[first].contains(r))
                            && u[z] - u[bottom] >= space.dist(z, bottom) - tol
                            && (chain.len() < 2 || space.dist(z, first) + space.dist(first, chain[1]) - space.dist(z, chain[1]) <= tol)
                    });
                    let Some(z) = next else { break };
                    if owner[z] != usize::MAX {
                        return Err(Error::OverlappingRays(owner[z], rid, z));
                    }
                    chain.insert(0, z);
                }
            }
            if chain.len() < 2 {
                break;
            }
            for w in chain.windows(2) {
                used_edges.insert((w[0], w[1]));
            }
            for &p in &chain[1..chain.len() - 1] {
                if endpoint[p] {
                    let other = rays.iter().position(|r: &Ray<T>| r.points[0] == p || r.points[r.points.len() - 1] == p).unwrap_or(usize::MAX);
                    return Err(Error::OverlappingRays(other, rid, p));
                }
                owner[p] = rid;
            }
            for &p in &chain {
                member[p].push(rid);
            }
            endpoint[chain[0]] = true;
            endpoint[chain[chain.len() - 1]] = true;
            let top = u[chain[0]];
            let arclength = chain.iter().map(|&p| top - u[p]).collect();
            rays.push(Ray { points: chain, arclength });
            if !st.is_branch(start) {
                break;
            }
        }
    }
    Ok(rays)
}

/// Per-ray conditional densities and the atomic quotient measure.
#[derive(Clone, Debug)]
pub struct Disintegration<T> {
    /// Normalized conditional density on `[0, ray length]`.
    pub conditionals: Vec<GridDensity<T>>,
    /// Mass carried by each ray.
    pub quotient: Vec<T>,
    /// Mass of the ray-endpoint points that had to be split between rays.
    pub split_endpoint_mass: T,
    /// Total variation between the reassembled rays and `m` restricted to the rays.
    pub reconstruction_error: T,
}

/// Minimum number of nodes of a conditional density.
const MIN_NODES: usize = 9;

/// Disintegrates `measure` along the rays. Interior points belong to one
/// ray; endpoints shared by `k` rays give `1/k` of their mass to each.
/// Masses are deposited linearly onto a uniform arclength grid with one
/// node per ray point, read as cell averages (mass / spacing), and
/// linearly upsampled to at least nine nodes.
pub fn disintegrate<T: Real>(space: &SampledSpace<T>, measure: &DiscreteMeasure<T>, st: &TransportStructure<T>) -> Result<Disintegration<T>> {
    if measure.len() != space.len() {
        return domain("measure length does not match the space");
    }
    let members = st.memberships(space.len());
    let mut split = T::zero();
    for (p, m) in members.iter().enumerate() {
        if m.len() > 1 {
            split = split + measure.weights[p];
        }
    }
    let mut assigned = vec![T::zero(); space.len()];
    let mut conditionals = Vec::with_capacity(st.rays.len());
    let mut quotient = Vec::with_capacity(st.rays.len());
    for ray in &st.rays {
        let k = ray.points.len();
        let len = ray.length();
        let mut nodes = vec![T::zero(); k];
        let mut total = T::zero();
        for (&p, &s) in ray.points.iter().zip(&ray.arclength) {
            let share = measure.weights[p] / cnt(members[p].len());
            assigned[p] = assigned[p] + share;
            total = total + share;
            let pos = if len > T::zero() { (s / len * cnt(k - 1)).max(T::zero()).min(cnt(k - 1)) } else { T::zero() };
            let i = pos.floor().to_usize().unwrap_or(0).min(k - 1);
            let w = pos - cnt(i);
            nodes[i] = nodes[i] + share * (T::one() - w);
            if w > T::zero() {
                nodes[i + 1] = nodes[i + 1] + share * w;
            }
        }
        let spacing = len / cnt(k - 1);
        let values: Vec<T> = nodes.iter().map(|&m| m / spacing).collect();
        let coarse = if k >= MIN_NODES {
            GridDensity::new(T::zero(), len, values)?
        } else {
            let edge = GridDensity { a: T::zero(), b: len, values };
            GridDensity::from_fn(T::zero(), len, MIN_NODES, |x| edge.eval(x))?
        };
        let cond = if coarse.mass() > T::zero() { coarse.normalized()? } else { coarse };
        conditionals.push(cond);
        quotient.push(total);
    }
    let reconstruction_error = (0..space.len())
        .filter(|&p| !members[p].is_empty())
        .map(|p| (assigned[p] - measure.weights[p]).abs())
        .sum();
    Ok(Disintegration { conditionals, quotient, split_endpoint_mass: split, reconstruction_error })
}

/// Brute-force restriction of `measure` to a ray's points (after endpoint splitting).
pub fn restriction<T: Real>(measure: &DiscreteMeasure<T>, st: &TransportStructure<T>, ray: usize, n: usize) -> Vec<T> {
    let members = st.memberships(n);
    st.rays[ray].points.iter().map(|&p| measure.weights[p] / cnt(members[p].len())).collect()
}

/// Guide of a CD^1 check.
#[derive(Clone, Debug)]
pub enum Guide<T> {
    /// A 1-Lipschitz function used directly.
    Lipschitz(Potential<T>),
    /// A function whose signed distance to its zero set is the guide.
    Function(Vec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayVerdict {
    pub ray: usize,
    pub mass: f64,
    pub length: f64,
    pub passed: bool,
    pub worst_violation: f64,
}

#[derive(Clone, Debug)]
pub struct Cd1Report<T> {
    pub verdicts: Vec<RayVerdict>,
    /// Fraction of ray mass whose conditional passes.
    pub passing_fraction: f64,
    pub check: Check,
    pub structure: TransportStructure<T>,
    pub disintegration: Disintegration<T>,
}

/// Needle-wise curvature-dimension check: each ray conditional must be a
/// CD(K, N) density on its arclength interval.
pub fn cd1_check<T: Real>(space: &SampledSpace<T>, measure: &DiscreteMeasure<T>, guide: &Guide<T>, params: &CurvatureParams<T>, ray_tol: Option<T>) -> Result<Cd1Report<T>> {
    let start = Instant::now();
    params.require_above_one()?;
    let u = match guide {
        Guide::Lipschitz(u) => u.clone(),
        Guide::Function(f) => signed_distance(space, f, None)?,
    };
    let st = build_transport_structure(space, &u, ray_tol)?;
    let dis = disintegrate(space, measure, &st)?;
    let results: Vec<Result<(bool, T)>> = dis
        .conditionals
        .par_iter()
        .map(|h| check_three_point(h, *params, RAY_TRIPLES, None).map(|r| (r.passed, r.worst_violation)))
        .collect();
    let mut verdicts = Vec::with_capacity(results.len());
    let mut acc = SlackAccumulator::new("cd1_ray_conditionals", T::zero());
    let total: T = dis.quotient.iter().copied().sum();
    let mut passing = T::zero();
    for (r, res) in results.into_iter().enumerate() {
        let (passed, worst) = res?;
        let v = RayVerdict { ray: r, mass: to_f64(dis.quotient[r]), length: to_f64(st.rays[r].length()), passed, worst_violation: to_f64(worst) };
        if passed {
            passing = passing + dis.quotient[r];
        }
        let slack = if passed { T::zero() } else { -worst };
        acc.record(slack, || json!({ "ray": r, "mass": v.mass, "length": v.length, "worst_violation": v.worst_violation }));
        verdicts.push(v);
    }
    let passing_fraction = if total > T::zero() { to_f64(passing / total) } else { 1.0 };
    acc.note(format!("passing measure-fraction {passing_fraction}"));
    acc.note(format!("split endpoint mass {:e}", to_f64(dis.split_endpoint_mass)));
    acc.note(format!("{} rays", st.rays.len()));
    let check = acc.finish().with_runtime(start.elapsed().as_secs_f64() * 1e3);
    Ok(Cd1Report { verdicts, passing_fraction, check, structure: st, disintegration: dis })
}

/// Default tolerance of the MCP checks on segments (exact cell model).
pub const MCP_TOL: f64 = 1e-3;

fn tau_real<T: Real>(params: &CurvatureParams<T>, t: T, theta: T) -> Result<T> {
    Ok(tau(*params, t, theta)?.to_real())
}

/// Measure contraction toward the sample point `o`: with `mu_0` the
/// normalized restriction of `measure` to its support `A`, for each `t`
/// checks per bin `m(B) / m(A) >= int_{gamma_t in B} tau^{(1-t)}(d(x, o))^N dmu_0`
/// and the entropy bound `E_N(mu_t) >= int tau^{(1-t)}(d(x, o)) rho_0^{1-1/N} dm`,
/// both as relative slacks. On a segment every sample weight is spread
/// over its Voronoi cell and contracted exactly, and the two-sided density
/// bounds are checked along the contraction traces; other spaces snap
/// `gamma_t` to the nearest sample.
pub fn mcp_check<T: Real>(space: &SampledSpace<T>, measure: &DiscreteMeasure<T>, o: usize, params: &CurvatureParams<T>, t_grid: &[T], tol: Option<T>) -> Result<Vec<Check>> {
    let start = Instant::now();
    params.require_above_one()?;
    let n_dim = match params.n {
        Dim::Finite(n) => n,
        Dim::Infinite => return domain("MCP checks need finite N"),
    };
    if measure.len() != space.len() || o >= space.len() {
        return domain("measure or centre does not match the space");
    }
    if t_grid.iter().any(|&t| !(t >= T::zero() && t < T::one())) {
        return domain("contraction times must lie in [0, 1)");
    }
    let support = measure.support();
    if support.is_empty() {
        return domain("measure has empty support");
    }
    if params.k > T::zero() {
        let limit = T::PI() * ((n_dim - T::one()) / params.k).sqrt();
        let r = support.iter().map(|&i| space.dist(i, o)).fold(T::zero(), T::max);
        if r > limit {
            return domain(format!("support radius {r} exceeds pi sqrt((N-1)/K) = {limit}"));
        }
    }
    let m_a: T = support.iter().map(|&i| measure.weights[i]).sum();
    let inv = T::one() / n_dim;
    let tol = tol.unwrap_or(lit(MCP_TOL));
    let mut per_bin = SlackAccumulator::new("mcp_per_bin", tol);
    let mut mcpe = SlackAccumulator::new("mcpe_entropy", tol);
    let mut extra = Vec::new();
    if let SpaceKind::Segment { .. } = space.kind {
        let cells = CellMeasure1d::from_segment(space, measure)?;
        let edges = voronoi_edges(space)?;
        let x_o = space.points[o][0];
        let src: Vec<usize> = (0..cells.len()).filter(|&k| cells.masses[k] > T::zero()).collect();
        for &t in t_grid {
            let s = T::one() - t;
            let image = |x: T| s * x + t * x_o;
            // Per-bin right-hand side, integrated exactly over the preimage of each bin.
            let mut rhs = vec![T::zero(); cells.len()];
            let mut mu_t = vec![T::zero(); cells.len()];
            let mut rhs_entropy = T::zero();
            for &k in &src {
                let (x0, x1) = (edges[k], edges[k + 1]);
                let dens0 = cells.masses[k] / m_a / (x1 - x0);
                let rho0 = cells.masses[k] / m_a / cells.masses[k];
                let (q0, q1) = { let (a, b) = (image(x0), image(x1)); if a <= b { (a, b) } else { (b, a) } };
                let first = edges.partition_point(|&e| e <= q0).saturating_sub(1).min(cells.len() - 1);
                for b in first..cells.len() {
                    if edges[b] >= q1 && b > first {
                        break;
                    }
                    let lo = q0.max(edges[b]);
                    let hi = q1.min(edges[b + 1]);
                    let frac_mass = if q1 > q0 { cells.masses[k] / m_a * (hi - lo).max(T::zero()) / (q1 - q0) } else { cells.masses[k] / m_a };
                    if !(frac_mass > T::zero()) {
                        continue;
                    }
                    mu_t[b] = mu_t[b] + frac_mass;
                    // Preimage of [lo, hi] in [x0, x1].
                    let pre = |y: T| if s > T::zero() { (y - t * x_o) / s } else { x0 };
                    let (p0, p1) = { let (a, b) = (pre(lo), pre(hi)); if a <= b { (a, b) } else { (b, a) } };
                    let f = |x: T| tau_real(params, s, (x - x_o).abs()).map(|c| c.powf(n_dim)).unwrap_or(T::nan());
                    let part = if p1 > p0 { simpson(f, p0, p1, 9) * dens0 } else { f(p0) * frac_mass };
                    rhs[b] = rhs[b] + part;
                }
                let g = |x: T| tau_real(params, s, (x - x_o).abs()).unwrap_or(T::nan());
                rhs_entropy = rhs_entropy + simpson(g, x0, x1, 9) * dens0 * rho0.powf(-inv);
            }
            if rhs.iter().any(|v| v.is_nan()) || rhs_entropy.is_nan() {
                return domain("coefficient evaluation failed on the support");
            }
            for b in 0..cells.len() {
                if rhs[b] > T::zero() || mu_t[b] > T::zero() {
                    let lhs = measure.weights[b] / m_a;
                    let slack = if lhs > T::zero() { (lhs - rhs[b]) / lhs } else { T::neg_infinity() };
                    per_bin.record(slack, || json!({ "t": to_f64(t), "bin": b, "lhs": to_f64(lhs), "rhs": to_f64(rhs[b]) }));
                }
            }
            let e_t = entropy(&mu_t, &measure.weights, n_dim);
            mcpe.record((e_t - rhs_entropy) / e_t.max(rhs_entropy), || json!({ "t": to_f64(t), "lhs": to_f64(e_t), "rhs": to_f64(rhs_entropy) }));
        }
        // Contraction traces from each support sample, with the reference
        // density read at the nodes (weight / cell width) and interpolated.
        let node_density: Vec<T> = (0..cells.len()).map(|k| cells.density(k)).collect();
        let a0 = space.points[0][0];
        let step = space.points[1][0] - a0;
        let dens = |z: T| crate::cd1d::interp_linear(&node_density, a0, step, z);
        let times: Vec<T> = t_grid.to_vec();
        let traces: Vec<DensityTrace<T>> = src
            .iter()
            .map(|&k| {
                let x = space.points[k][0];
                let f0 = dens(x) / m_a;
                let rho = times.iter().map(|&t| f0 / (T::one() - t) / dens((T::one() - t) * x + t * x_o)).collect();
                DensityTrace { length: (x - x_o).abs(), mass: cells.masses[k] / m_a, times: times.clone(), rho }
            })
            .collect();
        for c in check_density_inequalities(&traces, params, Some(tol), lit(0.1))? {
            if c.name.starts_with("regularity") || c.name == "mcp_density" {
                extra.push(c);
            }
        }
    } else {
        for &t in t_grid {
            let mut mu_t = vec![T::zero(); space.len()];
            let mut rhs = vec![T::zero(); space.len()];
            let mut rhs_entropy = T::zero();
            for &x in &support {
                let w = measure.weights[x] / m_a;
                let d = space.dist(x, o);
                let c = tau_real(params, T::one() - t, d)?;
                let b = if t == T::zero() { x } else { space.snap(&space.geodesic_unique(x, o, t)?) };
                mu_t[b] = mu_t[b] + w;
                rhs[b] = rhs[b] + c.powf(n_dim) * w;
                let rho0 = w / measure.weights[x];
                rhs_entropy = rhs_entropy + c * rho0.powf(-inv) * w;
            }
            let reference: Vec<T> = measure.weights.iter().map(|&w| w / m_a).collect();
            for b in 0..space.len() {
                if rhs[b] > T::zero() {
                    let lhs = reference[b];
                    let slack = if lhs > T::zero() { (lhs - rhs[b]) / lhs } else { T::neg_infinity() };
                    per_bin.record(slack, || json!({ "t": to_f64(t), "bin": b, "lhs": to_f64(lhs), "rhs": to_f64(rhs[b]) }));
                }
            }
            let e_t = entropy(&mu_t, &measure.weights, n_dim);
            mcpe.record((e_t - rhs_entropy) / e_t.max(rhs_entropy), || json!({ "t": to_f64(t), "lhs": to_f64(e_t), "rhs": to_f64(rhs_entropy) }));
        }
        per_bin.note("snapped contraction");
        mcpe.note("snapped contraction");
    }
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut out = vec![per_bin.finish().with_runtime(ms), mcpe.finish().with_runtime(ms)];
    out.extend(extra);
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{make_space, DiskLayout};
    use proptest::prelude::*;

    fn segment(n: usize, len: f64) -> SampledSpace<f64> {
        make_space(SpaceKind::Segment { a: 0.0, b: len }, n).unwrap()
    }

    fn disk(res: usize) -> SampledSpace<f64> {
        make_space(SpaceKind::Disk { radius: 1.0, layout: DiskLayout::Cartesian }, res).unwrap()
    }

    /// Branching straight from the definition over all pairs of the relation.
    fn brute_branch(space: &SampledSpace<f64>, u: &[f64], tol: f64, forward: bool) -> Vec<bool> {
        let n = space.len();
        let rel = |x: usize, y: usize| x != y && u[x] - u[y] >= space.dist(x, y) - tol && u[x] > u[y];
        (0..n)
            .map(|x| {
                let set: Vec<usize> = (0..n).filter(|&y| if forward { rel(x, y) } else { rel(y, x) }).collect();
                set.iter().any(|&z| set.iter().any(|&w| z != w && (u[z] - u[w]).abs() < space.dist(z, w) - tol))
            })
            .collect()
    }

    #[test]
    fn identity_guide_on_segment_is_one_ray() {
        let space = segment(33, 2.0);
        let u: Vec<f64> = space.points.iter().map(|p| p[0]).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        assert_eq!(st.rays.len(), 1);
        assert_eq!(st.rays[0].points, (0..33).rev().collect::<Vec<_>>());
        assert!((st.rays[0].length() - 2.0).abs() < 1e-12);
        assert!(st.branch_plus.iter().chain(&st.branch_minus).all(|b| !b));
    }

    #[test]
    fn non_lipschitz_guide_is_rejected() {
        let space = segment(17, 1.0);
        let u: Vec<f64> = space.points.iter().map(|p| 2.0 * p[0]).collect();
        assert!(matches!(build_transport_structure(&space, &u, None), Err(Error::NotLipschitz { .. })));
    }

    #[test]
    fn disk_height_guide_gives_vertical_chords() {
        let space = disk(400);
        let u: Vec<f64> = space.points.iter().map(|p| p[1]).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        let mut xs: Vec<f64> = space.points.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let multi = xs.iter().filter(|&&x| space.points.iter().filter(|p| p[0] == x).count() > 1).count();
        assert_eq!(st.rays.len(), multi);
        for ray in &st.rays {
            let x = space.points[ray.points[0]][0];
            assert!(ray.points.iter().all(|&p| space.points[p][0] == x));
            assert_eq!(ray.points.len(), space.points.iter().filter(|p| p[0] == x).count());
        }
        assert!(!st.branch_plus.iter().any(|&b| b) && !st.branch_minus.iter().any(|&b| b));
    }

    #[test]
    fn radial_guide_puts_centre_in_backward_branching() {
        let space = disk(120);
        let centre = space.points.iter().position(|p| p[0] == 0.0 && p[1] == 0.0).unwrap();
        let u: Vec<f64> = space.points.iter().map(|p| p[0].hypot(p[1])).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        assert!(st.branch_minus[centre]);
        assert_eq!(st.branch_plus, brute_branch(&space, &u, st.ray_tol, true));
        assert_eq!(st.branch_minus, brute_branch(&space, &u, st.ray_tol, false));
        // Every ray ends at the centre.
        assert!(st.rays.iter().all(|r| *r.points.last().unwrap() == centre));
    }

    #[test]
    fn disintegration_reassembles_the_measure() {
        let space = disk(400);
        let u: Vec<f64> = space.points.iter().map(|p| p[1]).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        let m = DiscreteMeasure::from_fn(&space, |p| 1.0 + p[0] * p[0]).unwrap();
        let dis = disintegrate(&space, &m, &st).unwrap();
        assert!(dis.reconstruction_error <= 1e-9);
        for (r, ray) in st.rays.iter().enumerate() {
            let direct: f64 = restriction(&m, &st, r, space.len()).iter().sum();
            assert!((dis.quotient[r] - direct).abs() < 1e-14);
            assert!(dis.conditionals[r].len() >= 9);
            assert!((dis.conditionals[r].mass() - 1.0).abs() < 1e-12);
            // Uniform along a vertical chord, so the conditional is flat.
            let v = &dis.conditionals[r].values;
            assert!(v.iter().all(|&x| (x - v[0]).abs() < 1e-9 * v[0]), "ray {r} of length {}", ray.length());
        }
    }

    #[test]
    fn shared_endpoint_mass_is_split() {
        let space = disk(120);
        let u: Vec<f64> = space.points.iter().map(|p| p[0].hypot(p[1])).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        let m = DiscreteMeasure::uniform(space.len());
        let dis = disintegrate(&space, &m, &st).unwrap();
        assert!(dis.split_endpoint_mass > 0.0);
        assert!(dis.reconstruction_error <= 1e-9);
    }

    #[test]
    fn cd1_on_disk_passes_flat_and_fails_positive_curvature() {
        let space = disk(400);
        let m = DiscreteMeasure::uniform(space.len());
        let guide = Guide::Function(space.points.iter().map(|p| p[1]).collect());
        let flat = cd1_check(&space, &m, &guide, &CurvatureParams::finite(0.0, 2.0).unwrap(), None).unwrap();
        assert!(flat.check.pass, "{:?}", flat.check);
        assert_eq!(flat.passing_fraction, 1.0);
        let curved = cd1_check(&space, &m, &guide, &CurvatureParams::finite(1.0, 2.0).unwrap(), None).unwrap();
        assert!(!curved.check.pass);
        assert!(curved.passing_fraction < 0.5, "{}", curved.passing_fraction);
    }

    #[test]
    fn csv_dump_has_one_row_per_ray_point() {
        let space = segment(17, 1.0);
        let u: Vec<f64> = space.points.iter().map(|p| p[0]).collect();
        let st = build_transport_structure(&space, &u, None).unwrap();
        let dis = disintegrate(&space, &DiscreteMeasure::uniform(17), &st).unwrap();
        let mut buf = Vec::new();
        st.write_csv(&mut buf, Some(&dis.conditionals)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 18);
        assert!(text.starts_with("ray_id,order,point_index,arclength,u_value,conditional_density"));
    }

    /// Sample weights equal to Voronoi cell lengths.
    fn lebesgue(space: &SampledSpace<f64>) -> DiscreteMeasure<f64> {
        let e = voronoi_edges(space).unwrap();
        DiscreteMeasure::new(e.windows(2).map(|w| w[1] - w[0]).collect()).unwrap()
    }

    fn mcp_pass(len: f64, k: f64, n: f64) -> bool {
        let space = segment(201, len);
        let m = lebesgue(&space);
        let params = CurvatureParams::finite(k, n).unwrap();
        let ts: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let checks = mcp_check(&space, &m, 0, &params, &ts, None).unwrap();
        checks.iter().all(|c| c.pass)
    }

    // Contracting a flat segment to an endpoint needs sigma^{(s)}_{K,N-1}(L) <= 1
    // for all s, i.e. sin(s a) <= sin(a) with a = L sqrt(K / (N - 1)), which
    // holds iff a <= pi / 2.
    #[test]
    fn flat_segment_mcp_threshold() {
        for n in [1.5, 2.0, 4.0] {
            assert!(mcp_pass(1.0, 0.0, n), "K=0 N={n}");
        }
        assert!(mcp_pass(1.4, 1.0, 2.0));
        assert!(!mcp_pass(1.8, 1.0, 2.0));
        assert!(!mcp_pass(3.0, 1.0, 2.0));
    }

    #[test]
    fn mcp_rejects_support_beyond_the_model_radius() {
        let space = segment(65, 4.0);
        let params = CurvatureParams::finite(1.0, 2.0).unwrap();
        assert!(mcp_check(&space, &DiscreteMeasure::uniform(65), 0, &params, &[0.0, 0.5], None).is_err());
    }

    #[test]
    fn mcp_on_sphere_cap_entropy() {
        let space = make_space(SpaceKind::Sphere { radius: 1.0 }, 400).unwrap();
        let o = 0;
        let cap = DiscreteMeasure::new(
            (0..space.len()).map(|i| if space.dist(i, o) <= 1.0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let params = CurvatureParams::finite(1.0, 3.0).unwrap();
        let checks = mcp_check(&space, &cap, o, &params, &[0.0, 0.25, 0.5], Some(0.05)).unwrap();
        let mcpe = checks.iter().find(|c| c.name == "mcpe_entropy").unwrap();
        assert!(mcpe.pass, "{mcpe:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn affine_guides_on_segment(slope in prop::sample::select(vec![-1.0f64, 1.0]), c in -3.0f64..3.0, n in 17usize..60) {
            let space = segment(n, 1.5);
            let u: Vec<f64> = space.points.iter().map(|p| slope * p[0] + c).collect();
            let st = build_transport_structure(&space, &u, None).unwrap();
            prop_assert_eq!(st.rays.len(), 1);
            prop_assert_eq!(st.rays[0].points.len(), n);
            let dis = disintegrate(&space, &DiscreteMeasure::uniform(n), &st).unwrap();
            prop_assert!(dis.reconstruction_error <= 1e-9);
        }

        #[test]
        fn rays_have_disjoint_interiors(res in 60usize..200, radial in any::<bool>()) {
            let space = disk(res);
            let u: Vec<f64> = space.points.iter().map(|p| if radial { p[0].hypot(p[1]) } else { p[1] }).collect();
            let st = build_transport_structure(&space, &u, None).unwrap();
            let mut seen = vec![false; space.len()];
            for r in &st.rays {
                for &p in r.interior() {
                    prop_assert!(!seen[p]);
                    seen[p] = true;
                }
                for w in r.points.windows(2) {
                    prop_assert!((u[w[0]] - u[w[1]] - space.dist(w[0], w[1])).abs() <= st.ray_tol);
                }
            }
        }
    }
}
