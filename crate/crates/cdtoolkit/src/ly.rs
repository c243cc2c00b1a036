//! Change-of-variables rigidity along one geodesic: recover `z(t)` from
//! `rho(s) / rho(t) = h_s(t) / (1 + (t - s) z(t))`, split
//! `1 / rho = L * Y` into a concave factor and a CD(K ell^2, N) factor, and
//! recombine them into the tau-inequality by Hölder.

use crate::cd1d::{check_three_point, log_mollify, GridDensity, MollifierSpec};
use crate::coefficients::{tau, CurvatureParams};
use crate::error::{domain, Error, Result};
use crate::rays::{build_transport_structure, disintegrate};
use crate::report::{Check, SlackAccumulator};
use crate::scalar::{cnt, lit, max_of, median, to_f64, Real};
use crate::spaces::{signed_distance, DiscreteMeasure, SampledSpace, SpaceKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::io::Write;

/// Cells excluded at each end of the time grid by every check.
pub const DELTA_CELLS: usize = 3;
/// Default bound on the change-of-variables residual `|t - s| |z_s(t) - z(t)|`.
pub const Z_TOL: f64 = 1e-8;
/// Default bound on `|1/rho - L Y| rho`.
pub const FACTOR_TOL: f64 = 1e-5;
/// Default tolerance of the `z` certificates.
pub const Z_CHECK_TOL: f64 = 1e-6;
/// Default tolerance of [`holder_combine`].
pub const HOLDER_TOL: f64 = 1e-9;
/// Three-point triples per CD certificate.
const TRIPLES: usize = 4000;

/// Change-of-variables data along one geodesic on a uniform time grid.
#[derive(Clone, Debug)]
pub struct CovData<T> {
    pub times: Vec<T>,
    /// `rho(t_k) > 0`.
    pub rho: Vec<T>,
    /// `h[s][t] = h_s(t_t)`, with `h_s(s) = 1`.
    pub h: Vec<Vec<T>>,
    pub ell: T,
    pub params: CurvatureParams<T>,
}

impl<T: Real> CovData<T> {
    pub fn new(times: Vec<T>, rho: Vec<T>, h: Vec<Vec<T>>, ell: T, params: CurvatureParams<T>) -> Result<Self> {
        let n = times.len();
        if n < 2 * DELTA_CELLS + 9 {
            return domain(format!("need at least {} time nodes", 2 * DELTA_CELLS + 9));
        }
        if rho.len() != n || h.len() != n || h.iter().any(|r| r.len() != n) {
            return domain("rho and h must be aligned with the time grid");
        }
        if !(times[0] >= T::zero() && times[n - 1] <= T::one()) {
            return domain("times must lie in [0, 1]");
        }
        let step = (times[n - 1] - times[0]) / cnt(n - 1);
        if !(step > T::zero()) || times.iter().enumerate().any(|(k, &t)| (t - times[0] - cnt::<T>(k) * step).abs() > lit::<T>(1e-9) * step) {
            return domain("times must form an increasing uniform grid");
        }
        if rho.iter().any(|&r| !(r > T::zero() && r.is_finite())) {
            return domain("rho must be finite and positive");
        }
        if h.iter().flatten().any(|&v| !(v > T::zero() && v.is_finite())) {
            return domain("h must be finite and positive");
        }
        if let Some(s) = (0..n).find(|&s| (h[s][s] - T::one()).abs() > lit(1e-9)) {
            return domain(format!("h_s(s) = {} at s = {}", h[s][s], times[s]));
        }
        if !(ell > T::zero()) {
            return domain("geodesic length must be positive");
        }
        params.require_above_one()?;
        Ok(Self { times, rho, h, ell, params })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> T {
        self.times[1] - self.times[0]
    }

    /// Needle parameters `(K ell^2, N)` in the time variable.
    pub fn k0_params(&self) -> CurvatureParams<T> {
        self.params.scaled(self.ell * self.ell)
    }

    /// Indices of `[delta, 1 - delta]`.
    pub fn interior(&self) -> std::ops::RangeInclusive<usize> {
        DELTA_CELLS..=self.len() - 1 - DELTA_CELLS
    }

    /// Certifies that the rows `h_s`, for every `stride`-th interior `s`, are CD(K ell^2, N) densities.
    pub fn check_rows(&self, stride: usize) -> Result<Check> {
        check_rows(&self.times, &self.h, self.k0_params(), stride, "h_rows_cd")
    }
}

fn check_rows<T: Real>(times: &[T], h: &[Vec<T>], params: CurvatureParams<T>, stride: usize, name: &str) -> Result<Check> {
    let n = times.len();
    let mut acc = SlackAccumulator::new(name, T::zero());
    for s in (DELTA_CELLS..n - DELTA_CELLS).step_by(stride.max(1)) {
        let row = GridDensity::new(times[0], times[n - 1], h[s].clone())?;
        let r = check_three_point(&row, params, TRIPLES, None)?;
        let slack = if r.passed { T::zero() } else { r.tolerance_used - r.worst_violation };
        acc.record(slack, || json!({ "s": to_f64(times[s]), "worst_violation": to_f64(r.worst_violation) }));
    }
    Ok(acc.finish())
}

/// Output of [`extract_z`].
#[derive(Clone, Debug)]
pub struct ZExtraction<T> {
    pub z: Vec<T>,
    /// Per `t`: `max_s |t - s| |z_s(t) - z(t)|` over interior rows.
    pub dispersion: Vec<T>,
    pub max_dispersion: T,
}

/// `z(t)` as the median over rows `s != t` of
/// `z_s(t) = (h_s(t) rho(t) / rho(s) - 1) / (t - s)`. The family is
/// rejected when the change-of-variables residual `|t - s| |z_s(t) - z(t)|`
/// exceeds `z_tol` on the interior.
pub fn extract_z<T: Real>(data: &CovData<T>, z_tol: Option<T>) -> Result<ZExtraction<T>> {
    let n = data.len();
    let tol = z_tol.unwrap_or(lit(Z_TOL));
    let t = &data.times;
    let zs = |s: usize, k: usize| (data.h[s][k] * data.rho[k] / data.rho[s] - T::one()) / (t[k] - t[s]);
    let mut z = Vec::with_capacity(n);
    let mut dispersion = Vec::with_capacity(n);
    for k in 0..n {
        let vals: Vec<T> = (0..n).filter(|&s| s != k).map(|s| zs(s, k)).collect();
        let zk = median(&vals);
        z.push(zk);
        let disp = data
            .interior()
            .filter(|&s| s != k)
            .map(|s| (t[k] - t[s]).abs() * (zs(s, k) - zk).abs())
            .fold(T::zero(), T::max);
        dispersion.push(disp);
    }
    let (mut worst, mut at) = (T::zero(), 0);
    for k in data.interior() {
        if dispersion[k] > worst {
            worst = dispersion[k];
            at = k;
        }
    }
    if worst > tol {
        return Err(Error::InconsistentFamily { dispersion: to_f64(worst), t: to_f64(t[at]) });
    }
    Ok(ZExtraction { z, dispersion, max_dispersion: worst })
}

/// `log h~_s(t)` with `h~_s(t) = (rho(s) / rho(t)) (1 + (t - s) z(t))`.
fn log_h_tilde<T: Real>(data: &CovData<T>, z: &[T], s: usize, k: usize) -> T {
    let t = &data.times;
    (data.rho[s] / data.rho[k]).ln() + (T::one() + (t[k] - t[s]) * z[k]).ln()
}

/// Rows `h~_s(t)` rebuilt from `(rho, z)`.
pub fn rebuild_rows<T: Real>(data: &CovData<T>, z: &[T]) -> Vec<Vec<T>> {
    let n = data.len();
    (0..n).map(|s| (0..n).map(|k| log_h_tilde(data, z, s, k).exp()).collect()).collect()
}

/// Certifies the rebuilt rows `h~_s` as CD(K ell^2, N) densities.
pub fn check_rebuilt_rows<T: Real>(data: &CovData<T>, z: &[T], stride: usize) -> Result<Check> {
    check_rows(&data.times, &rebuild_rows(data, z), data.k0_params(), stride, "h_tilde_rows_cd")
}

#[derive(Clone, Debug)]
pub struct LyFactorization<T> {
    pub times: Vec<T>,
    pub rho: Vec<T>,
    pub z: Vec<T>,
    pub l: Vec<T>,
    /// `Y` on the full time grid (not normalized).
    pub y: GridDensity<T>,
    pub r0: usize,
    /// `max |1/rho - L Y| rho` on the interior.
    pub residual: T,
}

fn cumulative_trapezoid<T: Real>(f: &[T], step: T, r0: usize) -> Vec<T> {
    let n = f.len();
    let mut out = vec![T::zero(); n];
    let half = lit::<T>(0.5) * step;
    for k in r0 + 1..n {
        out[k] = out[k - 1] + half * (f[k - 1] + f[k]);
    }
    for k in (0..r0).rev() {
        out[k] = out[k + 1] - half * (f[k] + f[k + 1]);
    }
    out
}

/// `log L(r) = -int_{r0}^r z` and `log Y(r) = int_{r0}^r d_t log h~_s(t)|_{t=s} ds`,
/// anchored at `L(r0) = 1`, `Y(r0) = 1 / rho(r0)`. The diagonal derivative
/// uses a symmetric difference of one cell (second-order one-sided at the
/// ends); integrals are trapezoidal.
pub fn factorize<T: Real>(data: &CovData<T>, z: &ZExtraction<T>, r0: usize, factor_tol: Option<T>) -> Result<LyFactorization<T>> {
    let n = data.len();
    if r0 >= n {
        return domain("anchor index outside the time grid");
    }
    let step = data.step();
    let two = lit::<T>(2.0);
    let lh = |s: usize, k: usize| log_h_tilde(data, &z.z, s, k);
    let diag: Vec<T> = (0..n)
        .map(|s| {
            if s == 0 {
                (lit::<T>(4.0) * lh(0, 1) - lh(0, 2)) / (two * step)
            } else if s == n - 1 {
                -(lit::<T>(4.0) * lh(s, s - 1) - lh(s, s - 2)) / (two * step)
            } else {
                (lh(s, s + 1) - lh(s, s - 1)) / (two * step)
            }
        })
        .collect();
    let neg_z: Vec<T> = z.z.iter().map(|&v| -v).collect();
    let log_l = cumulative_trapezoid(&neg_z, step, r0);
    let log_y = cumulative_trapezoid(&diag, step, r0);
    let l: Vec<T> = log_l.iter().map(|v| v.exp()).collect();
    let y0 = T::one() / data.rho[r0];
    let y_vals: Vec<T> = log_y.iter().map(|v| y0 * v.exp()).collect();
    let (mut residual, mut at) = (T::zero(), r0);
    for k in data.interior() {
        let r = (T::one() / data.rho[k] - l[k] * y_vals[k]).abs() * data.rho[k];
        if r > residual {
            residual = r;
            at = k;
        }
    }
    let tol = factor_tol.unwrap_or(lit(FACTOR_TOL));
    if residual > tol {
        return Err(Error::FactorResidual { residual: to_f64(residual), tolerance: to_f64(tol), t: to_f64(data.times[at]) });
    }
    let y = GridDensity::new(data.times[0], data.times[n - 1], y_vals)?;
    Ok(LyFactorization { times: data.times.clone(), rho: data.rho.clone(), z: z.z.clone(), l, y, r0, residual })
}

impl<T: Real> LyFactorization<T> {
    /// Dump with columns `t, rho, z, L, Y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "rho", "z", "L", "Y"])?;
        for k in 0..self.times.len() {
            wr.write_record([self.times[k], self.rho[k], self.z[k], self.l[k], self.y.values[k]].map(|v| format!("{v:.16e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    fn interior_y(&self) -> Result<GridDensity<T>> {
        let n = self.times.len();
        let (lo, hi) = (DELTA_CELLS, n - 1 - DELTA_CELLS);
        GridDensity::new(self.times[lo], self.times[hi], self.y.values[lo..=hi].to_vec())
    }
}

/// Midpoint concavity of `L` on the interior, tolerance `50 h^2 max L`.
pub fn check_l_concavity<T: Real>(fact: &LyFactorization<T>) -> Check {
    let n = fact.l.len();
    let step = fact.times[1] - fact.times[0];
    let tol = lit::<T>(50.0) * step * step * max_of(&fact.l);
    let mut acc = SlackAccumulator::new("l_concavity", tol);
    let (lo, hi) = (DELTA_CELLS, n - 1 - DELTA_CELLS);
    for i in lo + 1..hi {
        let reach = (i - lo).min(hi - i);
        let worst = (1..=reach)
            .map(|k| (fact.l[i] - lit::<T>(0.5) * (fact.l[i - k] + fact.l[i + k]), k))
            .fold((T::infinity(), 0), |a, b| if b.0 < a.0 { b } else { a });
        acc.record(worst.0, || json!({ "t": to_f64(fact.times[i]), "half_width": worst.1 }));
    }
    acc.finish()
}

/// `Y` on the interior as a CD(K ell^2, N) density. A failure within ten
/// tolerances is re-tested after log-mollification at three cells.
pub fn check_y_cd<T: Real>(fact: &LyFactorization<T>, params: &CurvatureParams<T>, ell: T) -> Result<Check> {
    let k0 = params.scaled(ell * ell);
    let y = fact.interior_y()?;
    let r = check_three_point(&y, k0, TRIPLES, None)?;
    let mut note = None;
    let mut report = r;
    if !r.passed && r.worst_violation <= lit::<T>(10.0) * r.tolerance_used {
        let eps = lit::<T>(3.0) * y.step();
        let smooth = log_mollify(&y, eps, MollifierSpec::Triweight)?;
        report = check_three_point(&smooth, k0, TRIPLES, None)?;
        note = Some(format!("borderline raw check (violation {:e}); log-mollified at eps = {}", to_f64(r.worst_violation), to_f64(eps)));
    }
    let (x0, x1, t) = report.worst_witness;
    let mut check = Check::scalar(
        "y_cd",
        -report.worst_violation,
        report.tolerance_used,
        json!({ "x0": to_f64(x0), "x1": to_f64(x1), "t": to_f64(t), "verdict": format!("{:?}", report.verdict) }),
    );
    if let Some(n) = note {
        check = check.with_note(n);
    }
    Ok(check)
}

/// `-1/t <= z(t) <= 1/(1 - t)` on the interior.
pub fn check_z_bounds<T: Real>(times: &[T], z: &[T], tol: Option<T>) -> Check {
    let mut acc = SlackAccumulator::new("z_bounds", tol.unwrap_or(lit(Z_CHECK_TOL)));
    for k in DELTA_CELLS..times.len() - DELTA_CELLS {
        let t = times[k];
        let slack = (z[k] + T::one() / t).min(T::one() / (T::one() - t) - z[k]);
        acc.record(slack, || json!({ "t": to_f64(t), "z": to_f64(z[k]) }));
    }
    acc.finish()
}

/// `(z(t) - z(s)) / (t - s) >= sqrt((s/t)(1-t)/(1-s)) |z(s)| |z(t)|` for interior `s < t`.
pub fn check_z_two_point<T: Real>(times: &[T], z: &[T], tol: Option<T>) -> Check {
    let mut acc = SlackAccumulator::new("z_two_point", tol.unwrap_or(lit(Z_CHECK_TOL)));
    let (lo, hi) = (DELTA_CELLS, times.len() - 1 - DELTA_CELLS);
    for i in lo..=hi {
        for j in i + 1..=hi {
            let (s, t) = (times[i], times[j]);
            let w = (s / t * (T::one() - t) / (T::one() - s)).sqrt();
            let slack = (z[j] - z[i]) / (t - s) - w * z[i].abs() * z[j].abs();
            acc.record(slack, || json!({ "s": to_f64(s), "t": to_f64(t) }));
        }
    }
    acc.finish()
}

/// Second-difference form of `d_s d_t log h~_s(t) |_{s=t=r} = -z'(r) + z(r)^2 <= 0`.
pub fn check_mixed_partial<T: Real>(data: &CovData<T>, z: &[T], tol: Option<T>) -> Check {
    let step = data.step();
    let mut acc = SlackAccumulator::new("mixed_partial", tol.unwrap_or(lit(Z_CHECK_TOL)));
    for r in data.interior() {
        let m = -(log_h_tilde(data, z, r + 1, r - 1) + log_h_tilde(data, z, r - 1, r + 1)) / (lit::<T>(4.0) * step * step);
        acc.record(-m, || json!({ "r": to_f64(data.times[r]), "mixed": to_f64(m) }));
    }
    acc.finish()
}

/// `L` concavity, `Y` CD, and the three `z` certificates.
pub fn certify<T: Real>(data: &CovData<T>, fact: &LyFactorization<T>, z_tol: Option<T>) -> Result<Vec<Check>> {
    Ok(vec![
        check_l_concavity(fact),
        check_y_cd(fact, &data.params, data.ell)?,
        check_z_bounds(&fact.times, &fact.z, z_tol),
        check_z_two_point(&fact.times, &fact.z, z_tol),
        check_mixed_partial(data, &fact.z, z_tol),
    ])
}

/// Node triples `(i0, i1, im)` with `i0 < i1` and `i0 <= im <= i1`; `alpha = (im - i0) / (i1 - i0)`.
pub fn holder_triples(n: usize, samples: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let i0 = rng.gen_range(0..n - 1);
            let i1 = rng.gen_range(i0 + 1..n);
            (i0, i1, rng.gen_range(i0..=i1))
        })
        .collect()
}

/// `(L Y)^{1/N}(t_alpha) >= tau^{(alpha)}(|t1 - t0| ell) (L Y)^{1/N}(t1) + tau^{(1-alpha)}(|t1 - t0| ell) (L Y)^{1/N}(t0)`
/// at node triples; `l` and `y` share the node grid of `y`.
pub fn holder_combine<T: Real>(l: &[T], y: &GridDensity<T>, params: &CurvatureParams<T>, ell: T, triples: &[(usize, usize, usize)], tol: Option<T>) -> Result<Check> {
    let n_dim = params.n.value().ok_or_else(|| Error::Domain("the Hölder recombination needs finite N".into()))?;
    if l.len() != y.len() {
        return domain("L and Y must share the grid");
    }
    let inv = T::one() / n_dim;
    let f = |k: usize| (l[k] * y.values[k]).powf(inv);
    let mut acc = SlackAccumulator::new("holder_combine", tol.unwrap_or(lit(HOLDER_TOL)));
    for &(i0, i1, im) in triples {
        if !(i0 < i1 && i0 <= im && im <= i1 && i1 < l.len()) {
            return domain("invalid Hölder triple");
        }
        let alpha = cnt::<T>(im - i0) / cnt(i1 - i0);
        let theta = (y.x(i1) - y.x(i0)).abs() * ell;
        let rhs = tau(*params, alpha, theta)?.to_real() * f(i1) + tau(*params, T::one() - alpha, theta)?.to_real() * f(i0);
        acc.record(f(im) - rhs, || json!({ "t0": to_f64(y.x(i0)), "t1": to_f64(y.x(i1)), "alpha": to_f64(alpha) }));
    }
    Ok(acc.finish())
}

/// Known generators behind [`synthesize`].
#[derive(Clone, Debug)]
pub struct SyntheticPair<T> {
    /// Concave quadratic `L(t) = a + b t - c t^2` normalized to `L(r0) = 1`.
    pub l: Vec<T>,
    /// `Y = g^{N-1}` with `g'' = -(K0/(N-1)) g`, scaled so that `L Y = 1 / rho`.
    pub y: Vec<T>,
    pub z: Vec<T>,
}

/// Forward-builds change-of-variables data from a smooth concave `L` and
/// a smooth CD(K ell^2, N) density `Y`: `1/rho = L Y`, `z = -L'/L` and
/// `h_s(t) = (rho(s) / rho(t)) (1 + (t - s) z(t))`.
pub fn synthesize<T: Real, R: Rng>(params: CurvatureParams<T>, ell: T, n: usize, r0: usize, rng: &mut R) -> Result<(CovData<T>, SyntheticPair<T>)> {
    let nn = params.n.value().ok_or_else(|| Error::Domain("synthetic data needs finite N".into()))?;
    params.require_above_one()?;
    let times: Vec<T> = (0..n).map(|k| cnt::<T>(k) / cnt(n - 1)).collect();
    let a = rng.gen_range(0.5..2.0);
    let b = rng.gen_range(-0.4..0.4) * a;
    let c = rng.gen_range(0.0..0.3) * a;
    let lf = |t: f64| a + b * t - c * t * t;
    let dlf = |t: f64| b - 2.0 * c * t;
    let m = to_f64(nn) - 1.0;
    let kk = to_f64(params.k) * to_f64(ell).powi(2) / m;
    let gf: Box<dyn Fn(f64) -> f64> = if kk > 0.0 {
        let w = kk.sqrt() * rng.gen_range(1.0..1.2);
        if w >= std::f64::consts::PI {
            return Err(Error::IntervalTooLong { length: 1.0, limit: std::f64::consts::PI / kk.sqrt() });
        }
        let room = std::f64::consts::PI / w - 1.0;
        let start = -room * rng.gen_range(0.2..0.8);
        Box::new(move |t: f64| (w * (t - start)).sin())
    } else if kk < 0.0 {
        let w = (-kk).sqrt();
        let centre = rng.gen_range(-0.5..1.5);
        Box::new(move |t: f64| (w * (t - centre)).cosh())
    } else {
        let slope = rng.gen_range(-0.5..0.5);
        Box::new(move |t: f64| 1.0 + slope * (t - 0.5))
    };
    let tr0 = to_f64(times[r0]);
    let l: Vec<T> = times.iter().map(|&t| lit(lf(to_f64(t)) / lf(tr0))).collect();
    let z: Vec<T> = times.iter().map(|&t| lit(-dlf(to_f64(t)) / lf(to_f64(t)))).collect();
    let scale = rng.gen_range(0.5..2.0);
    let y: Vec<T> = times.iter().map(|&t| lit(scale * gf(to_f64(t)).powf(m))).collect();
    let rho: Vec<T> = (0..n).map(|k| T::one() / (l[k] * y[k])).collect();
    let h: Vec<Vec<T>> = (0..n)
        .map(|s| (0..n).map(|k| if k == s { T::one() } else { rho[s] / rho[k] * (T::one() + (times[k] - times[s]) * z[k]) }).collect())
        .collect();
    let data = CovData::new(times, rho, h, ell, params)?;
    Ok((data, SyntheticPair { l, y, z }))
}

/// Assembles change-of-variables data for one geodesic of a segment
/// transport: `rho` comes from the density trace, and `h_s` from the
/// disintegration of `reference` along the rays of the signed distance to
/// `gamma_s`, read at `gamma_t` and normalized at `gamma_s`.
pub fn assemble_segment<T: Real>(
    space: &SampledSpace<T>,
    reference: &DiscreteMeasure<T>,
    positions: &[T],
    rho: &[T],
    times: Vec<T>,
    params: CurvatureParams<T>,
) -> Result<CovData<T>> {
    if !matches!(space.kind, SpaceKind::Segment { .. }) {
        return domain("segment assembly needs a segment space");
    }
    let n = times.len();
    if positions.len() != n || rho.len() != n {
        return domain("positions and rho must be aligned with the times");
    }
    let ell = (positions[n - 1] - positions[0]).abs() / (times[n - 1] - times[0]);
    let sign = if positions[n - 1] >= positions[0] { T::one() } else { -T::one() };
    let mut h = Vec::with_capacity(n);
    for s in 0..n {
        let f: Vec<T> = space.points.iter().map(|p| sign * (p[0] - positions[s])).collect();
        let u = signed_distance(space, &f, None)?;
        let st = build_transport_structure(space, &u, None)?;
        let dis = disintegrate(space, reference, &st)?;
        let (top, cond) = st
            .rays
            .iter()
            .zip(&dis.conditionals)
            .max_by(|a, b| crate::scalar::total_cmp(&a.0.length(), &b.0.length()))
            .map(|(r, c)| (r.points[0], c))
            .ok_or_else(|| Error::Domain("no transport ray through the geodesic".into()))?;
        let top_u = u[top];
        // Arclength from the top of the ray to gamma_t.
        let arc = |k: usize| top_u - sign * (positions[k] - positions[s]);
        let base = cond.eval(arc(s));
        if !(base > T::zero()) {
            return domain(format!("vanishing conditional density at t = {}", times[s]));
        }
        h.push((0..n).map(|k| if k == s { T::one() } else { cond.eval(arc(k)) / base }).collect());
    }
    CovData::new(times, rho.to_vec(), h, ell, params)
}

/// Output of [`segment_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutput<T> {
    pub data: CovData<T>,
    pub z: ZExtraction<T>,
    pub factorization: LyFactorization<T>,
    /// Factor residual, `L` concavity and `Y` as a CD(K ell^2, N) density.
    pub checks: Vec<Check>,
}

/// End-to-end rigidity along the geodesic of a smooth monotone transport on
/// a segment starting at `start`. The family residual is held to the
/// binning budget `(h / ell)^2`, `h` the sample spacing.
#[allow(clippy::too_many_arguments)]
pub fn segment_pipeline<T: Real>(
    space: &SampledSpace<T>,
    reference: &DiscreteMeasure<T>,
    reference_density: &crate::w2::line::SmoothDensity1d<T>,
    map: &crate::w2::line::SmoothMonotone1d<T>,
    start: T,
    times: Vec<T>,
    params: CurvatureParams<T>,
) -> Result<PipelineOutput<T>> {
    let end = map.map(start);
    let trace = &crate::w2::smooth_density_traces(reference_density, map, &[start], &times)[0];
    let positions: Vec<T> = times.iter().map(|&t| (T::one() - t) * start + t * end).collect();
    let data = assemble_segment(space, reference, &positions, &trace.rho, times, params)?;
    let spacing = space.points[1][0] - space.points[0][0];
    let budget = (spacing / data.ell).powi(2);
    let z = extract_z(&data, Some(budget))?;
    let r0 = data.len() / 2;
    let factorization = factorize(&data, &z, r0, None)?;
    let residual = Check::scalar("factor_residual", lit::<T>(FACTOR_TOL) - factorization.residual, T::zero(), json!({ "residual": to_f64(factorization.residual) }))
        .with_note(format!("family residual {:e} within budget {:e}", to_f64(z.max_dispersion), to_f64(budget)));
    let checks = vec![residual, check_l_concavity(&factorization), check_y_cd(&factorization, &params, data.ell)?];
    Ok(PipelineOutput { data, z, factorization, checks })
}
