//! One-dimensional CD(K,N) densities on a uniform grid: the defining
//! three-point inequality, its differential form, a-priori bounds,
//! log-mollification and the model equality-case densities.

use crate::coefficients::{d_max, sigma, CurvatureParams, Dim, ExtReal};
use crate::error::{domain, Error, Result};
use crate::scalar::{cnt, lit, max_of, simpson, to_f64, trapezoid_weights, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Seed used for the random part of the three-point triple set.
pub const DEFAULT_SEED: u64 = 0x5eed_cd1d;

/// Nodes of the Simpson rule inside [`apriori_sup_bound`].
pub const SIMPSON_NODES: usize = 1025;

/// A density sampled at `x_i = a + i h`, `h = (b - a) / (n - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity<T> {
    pub a: T,
    pub b: T,
    pub values: Vec<T>,
}

impl<T: Real> GridDensity<T> {
    pub fn new(a: T, b: T, values: Vec<T>) -> Result<Self> {
        if !(a < b) {
            return domain("interval endpoints must satisfy a < b");
        }
        if values.len() < 9 {
            return domain(format!("a grid density needs at least 9 nodes, got {}", values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return domain(format!("density values must be finite and nonnegative, got {v}"));
        }
        Ok(Self { a, b, values })
    }

    pub fn from_fn<F: Fn(T) -> T>(a: T, b: T, n: usize, f: F) -> Result<Self> {
        let h = (b - a) / cnt(n.max(2) - 1);
        let values = (0..n)
            .map(|i| if i + 1 == n { f(b) } else { f(a + cnt::<T>(i) * h) })
            .collect();
        Self::new(a, b, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> T {
        (self.b - self.a) / cnt(self.values.len() - 1)
    }

    pub fn x(&self, i: usize) -> T {
        if i + 1 == self.values.len() {
            self.b
        } else {
            self.a + cnt::<T>(i) * self.step()
        }
    }

    pub fn grid(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    /// Trapezoid mass.
    pub fn mass(&self) -> T {
        let w = trapezoid_weights(self.len(), self.step());
        self.values.iter().zip(&w).map(|(&v, &w)| v * w).sum()
    }

    /// Copy rescaled to unit trapezoid mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > T::zero()) {
            return domain("cannot normalize a density with zero mass");
        }
        Ok(Self { a: self.a, b: self.b, values: self.values.iter().map(|&v| v / m).collect() })
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { a: self.a, b: self.b, values: self.values.iter().map(|&v| v * c).collect() }
    }

    /// Linear interpolation of `values` at `x`, clamped to `[a, b]`.
    pub fn eval(&self, x: T) -> T {
        interp_linear(&self.values, self.a, self.step(), x)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "value"])?;
        for i in 0..self.len() {
            wr.write_record([format!("{:.16e}", self.x(i)), format!("{:.16e}", self.values[i])])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `x,value` format; the grid must be uniform.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<T> {
                s.trim()
                    .parse::<f64>()
                    .map(lit)
                    .map_err(|e| Error::Parse(format!("{s}: {e}")))
            };
            xs.push(parse(rec.get(0).unwrap_or(""))?);
            vs.push(parse(rec.get(1).unwrap_or(""))?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("density csv needs at least two rows".into()));
        }
        let g = Self::new(xs[0], xs[xs.len() - 1], vs)?;
        let h = g.step();
        for (i, &x) in xs.iter().enumerate() {
            if (x - g.x(i)).abs() > lit::<T>(1e-9) * (h + x.abs()) {
                return Err(Error::Parse(format!("grid is not uniform at row {i}")));
            }
        }
        Ok(g)
    }
}

pub(crate) fn interp_linear<T: Real>(vals: &[T], a: T, h: T, x: T) -> T {
    let n = vals.len();
    let u = ((x - a) / h).max(T::zero()).min(cnt(n - 1));
    let i = u.floor().to_usize().unwrap_or(0).min(n - 2);
    let f = u - cnt(i);
    if f == T::zero() {
        return vals[i];
    }
    if f == T::one() {
        return vals[i + 1];
    }
    vals[i] * (T::one() - f) + vals[i + 1] * f
}

/// How a check ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Checked,
    /// `K > 0` and the interval is longer than `D_{K,N-1}`.
    IntervalTooLong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdCheckReport<T> {
    pub passed: bool,
    /// Largest signed violation; negative values mean strict slack.
    pub worst_violation: T,
    /// `(x0, x1, t)` at the worst violation.
    pub worst_witness: (T, T, T),
    pub tolerance_used: T,
    pub verdict: Verdict,
    /// Number of evaluated inequality instances.
    pub evaluated: usize,
}

impl<T: Real> CdCheckReport<T> {
    fn finish(worst: T, witness: (T, T, T), tol: T, evaluated: usize) -> Self {
        Self {
            passed: worst <= tol,
            worst_violation: worst,
            worst_witness: witness,
            tolerance_used: tol,
            verdict: Verdict::Checked,
            evaluated,
        }
    }
}

fn finite_n<T: Real>(params: &CurvatureParams<T>) -> Result<Option<T>> {
    params.require_above_one()?;
    Ok(params.n.value())
}

/// Interval-length precondition for `K > 0`: returns the failing report if violated.
fn length_gate<T: Real>(h: &GridDensity<T>, params: &CurvatureParams<T>) -> Result<Option<CdCheckReport<T>>> {
    if let (Some(n), true) = (params.n.value(), params.k > T::zero()) {
        if let ExtReal::Finite(d) = d_max(params.k, Dim::Finite(n - T::one()))? {
            let len = h.b - h.a;
            if len > d * (T::one() + lit(1e-12)) {
                return Ok(Some(CdCheckReport {
                    passed: false,
                    worst_violation: len - d,
                    worst_witness: (h.a, h.b, lit(0.5)),
                    tolerance_used: T::zero(),
                    verdict: Verdict::IntervalTooLong,
                    evaluated: 0,
                }));
            }
        }
    }
    Ok(None)
}

/// Default tolerance for [`check_three_point`]: `50 h^2` in the concavity coordinate.
pub fn default_three_point_tol<T: Real>(h: &GridDensity<T>, params: &CurvatureParams<T>) -> T {
    let step = h.step();
    let scale = match params.n.value() {
        Some(n) if n > T::one() => max_of(&h.values).powf(T::one() / (n - T::one())),
        _ => T::one(),
    };
    lit::<T>(50.0) * step * step * scale
}

/// Default tolerance for [`check_differential`]: `50 h^2 max|values|`.
pub fn default_differential_tol<T: Real>(h: &GridDensity<T>) -> T {
    let step = h.step();
    lit::<T>(50.0) * step * step * max_of(&h.values)
}

/// Checks the three-point inequality over `samples` triples with the default seed.
pub fn check_three_point<T: Real>(
    h: &GridDensity<T>,
    params: CurvatureParams<T>,
    samples: usize,
    tol: Option<T>,
) -> Result<CdCheckReport<T>> {
    check_three_point_seeded(h, params, samples, tol, DEFAULT_SEED)
}

/// Triples `(i, j, t)` with node indices `i != j`: a coarse lattice with
/// `t in {1/4, 1/2, 3/4}` followed by seeded uniform draws.
pub fn triple_set<T: Real>(n: usize, samples: usize, seed: u64) -> Vec<(usize, usize, T)> {
    let lattice_budget = samples / 2;
    let pairs = (lattice_budget / 3).max(1);
    let stride = ((cnt::<f64>(n) / (2.0 * cnt::<f64>(pairs)).sqrt()).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(samples);
    let ts = [lit::<T>(0.25), lit(0.5), lit(0.75)];
    'lattice: for i in (0..n).step_by(stride) {
        for j in ((i + stride)..n).step_by(stride) {
            for &t in &ts {
                if out.len() >= lattice_budget {
                    break 'lattice;
                }
                out.push((i, j, t));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < samples {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let t: f64 = rng.gen_range(0.0..1.0);
        if t == 0.0 {
            continue;
        }
        out.push((i, j, lit(t)));
    }
    out
}

pub fn check_three_point_seeded<T: Real>(
    h: &GridDensity<T>,
    params: CurvatureParams<T>,
    samples: usize,
    tol: Option<T>,
    seed: u64,
) -> Result<CdCheckReport<T>> {
    let n_opt = finite_n(&params)?;
    if let Some(rep) = length_gate(h, &params)? {
        return Ok(rep);
    }
    let tol = tol.unwrap_or_else(|| default_three_point_tol(h, &params));
    let step = h.step();
    let n = h.len();
    let triples = triple_set::<T>(n, samples, seed);
    let mut worst = T::neg_infinity();
    let mut witness = (h.a, h.b, lit(0.5));
    let mut evaluated = 0usize;
    match n_opt {
        Some(nn) => {
            let p = T::one() / (nn - T::one());
            let caln = Dim::Finite(nn - T::one());
            let g: Vec<T> = h.values.iter().map(|&v| v.powf(p)).collect();
            for (i, j, t) in triples {
                let (x0, x1) = (h.x(i), h.x(j));
                let theta = (x1 - x0).abs();
                let (s1, s0) = match (sigma(params.k, caln, t, theta)?, sigma(params.k, caln, T::one() - t, theta)?) {
                    (ExtReal::Finite(a), ExtReal::Finite(b)) => (a, b),
                    _ => continue,
                };
                let xt = t * x1 + (T::one() - t) * x0;
                let lhs = interp_linear(&g, h.a, step, xt);
                let v = s1 * g[j] + s0 * g[i] - lhs;
                evaluated += 1;
                if v > worst {
                    worst = v;
                    witness = (x0, x1, t);
                }
            }
        }
        None => {
            let lg: Vec<T> = h.values.iter().map(|&v| v.ln()).collect();
            let half = lit::<T>(0.5);
            for (i, j, t) in triples {
                let (x0, x1) = (h.x(i), h.x(j));
                if lg[i] == T::neg_infinity() || lg[j] == T::neg_infinity() {
                    continue;
                }
                let d = x1 - x0;
                let rhs = t * lg[j] + (T::one() - t) * lg[i] + half * params.k * t * (T::one() - t) * d * d;
                let xt = t * x1 + (T::one() - t) * x0;
                let lhs = interp_linear(&lg, h.a, step, xt);
                let v = if lhs == T::neg_infinity() { T::infinity() } else { rhs - lhs };
                evaluated += 1;
                if v > worst {
                    worst = v;
                    witness = (x0, x1, t);
                }
            }
        }
    }
    if evaluated == 0 {
        worst = T::zero();
    }
    Ok(CdCheckReport::finish(worst, witness, tol, evaluated))
}

/// Checks `(log h)'' + ((log h)')^2 / (N - 1) + K <= tol` at interior nodes
/// `2..=n-3`, evaluated as `(N - 1) g'' / g` with `g = h^{1/(N-1)}`
/// (the same quantity, with a stencil that stays accurate near vanishing endpoints).
pub fn check_differential<T: Real>(h: &GridDensity<T>, params: CurvatureParams<T>, tol: Option<T>) -> Result<CdCheckReport<T>> {
    let n_opt = finite_n(&params)?;
    let n = h.len();
    for i in 2..=n - 3 {
        if !(h.values[i] > T::zero()) {
            return domain(format!("nonpositive interior value at index {i}"));
        }
    }
    let tol = tol.unwrap_or_else(|| default_differential_tol(h));
    let step = h.step();
    let h2 = step * step;
    let two = lit::<T>(2.0);
    let coord: Vec<T> = match n_opt {
        Some(nn) => h.values.iter().map(|&v| v.powf(T::one() / (nn - T::one()))).collect(),
        None => h.values.iter().map(|&v| v.ln()).collect(),
    };
    let mut worst = T::neg_infinity();
    let mut witness = (h.a, h.b, lit(0.5));
    for i in 2..=n - 3 {
        let d2 = (coord[i + 1] - two * coord[i] + coord[i - 1]) / h2;
        let lhs = match n_opt {
            Some(nn) => (nn - T::one()) * d2 / coord[i],
            None => d2,
        };
        let v = lhs + params.k;
        if v > worst {
            worst = v;
            witness = (h.x(i - 1), h.x(i + 1), lit(0.5));
        }
    }
    Ok(CdCheckReport::finish(worst, witness, tol, n - 4))
}

/// Upper bound on `sup h` for unit-mass CD(K,N) densities on `(a, b)`.
pub fn apriori_sup_bound<T: Real>(params: CurvatureParams<T>, a: T, b: T) -> Result<T> {
    if !(b > a) {
        return domain("apriori_sup_bound requires b > a");
    }
    let n = params.n.value().ok_or_else(|| Error::Domain("apriori_sup_bound needs finite N".into()))?;
    params.require_above_one()?;
    let len = b - a;
    if params.k >= T::zero() {
        return Ok(n / len);
    }
    let caln = Dim::Finite(n - T::one());
    let integrand = |t: T| -> T {
        sigma(params.k, caln, t, len)
            .map(|s| s.to_real().powf(n - T::one()))
            .unwrap_or(T::nan())
    };
    let integral = simpson(integrand, T::zero(), T::one(), SIMPSON_NODES);
    Ok(T::one() / (len * integral))
}

/// Two-sided bound on `(log h)'(x)` for CD(K,N) densities on `(a, b)`.
/// For `K <= 0` the cotangent is continued to `coth` and to `(N-1)/d` at `K = 0`.
pub fn apriori_log_derivative_bounds<T: Real>(params: CurvatureParams<T>, a: T, b: T, x: T) -> Result<(T, T)> {
    if !(x > a && x < b) {
        return domain("x must lie in the open interval (a, b)");
    }
    let n = params.n.value().ok_or_else(|| Error::Domain("log-derivative bounds need finite N".into()))?;
    params.require_above_one()?;
    let m = n - T::one();
    let (dl, dr) = (x - a, b - x);
    let k = params.k;
    if k > T::zero() {
        let c = (k / m).sqrt();
        let d = T::PI() / c;
        if dl >= d || dr >= d {
            return domain("distance to an endpoint reaches the maximal length");
        }
        let amp = (k * m).sqrt();
        Ok((-amp / (dr * c).tan(), amp / (dl * c).tan()))
    } else if k == T::zero() {
        Ok((-m / dr, m / dl))
    } else {
        let c = (-k / m).sqrt();
        let amp = (-k * m).sqrt();
        Ok((-amp / (dr * c).tanh(), amp / (dl * c).tanh()))
    }
}

/// Mollifier used by [`log_mollify`], supported on `[-eps, eps]`.
#[derive(Clone, Copy, Debug, Default)]
pub enum MollifierSpec<T> {
    /// `(1 - (x/eps)^2)^3`, normalized.
    #[default]
    Triweight,
    /// A user kernel on `u = x / eps in [-1, 1]`, normalized by the quadrature.
    Custom(fn(T) -> T),
}

impl<T: Real> MollifierSpec<T> {
    fn profile(&self, u: T) -> T {
        if u.abs() >= T::one() {
            return T::zero();
        }
        match self {
            MollifierSpec::Triweight => {
                let w = T::one() - u * u;
                w * w * w
            }
            MollifierSpec::Custom(f) => f(u),
        }
    }
}

/// `exp(log h * psi_eps)` on the grid nodes inside `[a + eps, b - eps]`.
pub fn log_mollify<T: Real>(h: &GridDensity<T>, eps: T, kernel: MollifierSpec<T>) -> Result<GridDensity<T>> {
    if !(eps > T::zero() && eps < (h.b - h.a) / lit(2.0)) {
        return domain("eps must lie in (0, (b - a) / 2)");
    }
    let step = h.step();
    let slack = lit::<T>(1e-9) * step;
    let n = h.len();
    let lo = ((eps - slack) / step).ceil().to_usize().unwrap_or(0);
    let hi = n - 1 - ((eps - slack) / step).ceil().to_usize().unwrap_or(0);
    if hi < lo || hi - lo + 1 < 9 {
        return domain("eps leaves fewer than 9 grid nodes");
    }
    let w = trapezoid_weights(n, step);
    let reach = (eps / step).ceil().to_usize().unwrap_or(0) + 1;
    let mut out = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let xi = h.x(i);
        let (mut acc, mut norm) = (T::zero(), T::zero());
        for j in i.saturating_sub(reach)..=(i + reach).min(n - 1) {
            let k = kernel.profile((xi - h.x(j)) / eps);
            if k == T::zero() {
                continue;
            }
            let v = h.values[j];
            if !(v > T::zero()) {
                return domain(format!("interior zero of h at x = {}", h.x(j)));
            }
            acc = acc + k * w[j] * v.ln();
            norm = norm + k * w[j];
        }
        out.push((acc / norm).exp());
    }
    GridDensity::new(h.x(lo), h.x(hi), out)
}

/// Equality-case densities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sphere,
    Euclidean,
    Hyperbolic,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ModelKind::Sphere),
            "euclidean" => Ok(ModelKind::Euclidean),
            "hyperbolic" => Ok(ModelKind::Hyperbolic),
            other => Err(Error::Parse(format!("unknown model kind {other}"))),
        }
    }
}

/// Unnormalized model profile for `kind`, e.g. `sin^{N-1}(x sqrt(K/(N-1)))`.
pub fn model_profile<T: Real>(kind: ModelKind, params: CurvatureParams<T>) -> Result<impl Fn(T) -> T> {
    let n = params.n.value().ok_or_else(|| Error::Domain("model densities need finite N".into()))?;
    params.require_above_one()?;
    let m = n - T::one();
    let k = params.k;
    let c = match kind {
        ModelKind::Sphere if k > T::zero() => (k / m).sqrt(),
        ModelKind::Euclidean if k == T::zero() => T::one(),
        ModelKind::Hyperbolic if k < T::zero() => (-k / m).sqrt(),
        _ => return domain(format!("model {kind:?} does not match the sign of K = {k}")),
    };
    Ok(move |x: T| -> T {
        let base = match kind {
            ModelKind::Sphere => (x * c).sin(),
            ModelKind::Euclidean => x,
            ModelKind::Hyperbolic => (x * c).sinh(),
        };
        base.max(T::zero()).powf(m)
    })
}

/// Model density on `[a, b]` with `n` nodes, normalized to unit mass.
pub fn model_density<T: Real>(kind: ModelKind, params: CurvatureParams<T>, a: T, b: T, n: usize) -> Result<GridDensity<T>> {
    if !(a >= T::zero() && b > a) {
        return domain("model densities live on 0 <= a < b");
    }
    if kind == ModelKind::Sphere {
        let nn = params.n.value().ok_or_else(|| Error::Domain("model densities need finite N".into()))?;
        if let ExtReal::Finite(d) = d_max(params.k, Dim::Finite(nn - T::one()))? {
            if b > d * (T::one() + lit(1e-12)) {
                return domain("sphere model requires (a, b) inside (0, D_{K,N-1})");
            }
        }
    }
    let f = model_profile(kind, params)?;
    let mass = match kind {
        ModelKind::Euclidean => {
            let nn = params.n.value().unwrap_or(T::one());
            (b.powf(nn) - a.powf(nn)) / nn
        }
        _ => simpson(&f, a, b, (1 << 16) + 1),
    };
    if !(mass > T::zero()) {
        return domain("model density has zero mass");
    }
    GridDensity::from_fn(a, b, n, |x| f(x) / mass)
}

/// A random CD(K,N) density on `[a, b]`: `h = g^{N-1}` with `g` the minimum
/// of a few positive solutions of `g'' = -c g`, `c >= K/(N-1)`, normalized to unit mass.
pub fn random_cd_density<T: Real, R: Rng>(
    params: CurvatureParams<T>,
    a: T,
    b: T,
    n: usize,
    rng: &mut R,
) -> Result<GridDensity<T>> {
    let nn = params.n.value().ok_or_else(|| Error::Domain("random densities need finite N".into()))?;
    params.require_above_one()?;
    let m = to_f64(nn - T::one());
    let (af, bf) = (to_f64(a), to_f64(b));
    let len = bf - af;
    let kk = to_f64(params.k) / m;
    if kk > 0.0 && len * kk.sqrt() >= std::f64::consts::PI {
        return Err(Error::IntervalTooLong { length: len, limit: std::f64::consts::PI / kk.sqrt() });
    }
    let pieces = rng.gen_range(1..=4usize);
    let mut fns: Vec<Box<dyn Fn(f64) -> f64>> = Vec::new();
    for _ in 0..pieces {
        let amp = rng.gen_range(0.5..2.0);
        if kk > 0.0 {
            let c = kk.sqrt() * rng.gen_range(1.0..1.3);
            let room = std::f64::consts::PI / c - len;
            let start = af - room * rng.gen_range(0.02..0.98);
            fns.push(Box::new(move |x: f64| amp * (c * (x - start)).sin()));
        } else {
            let slope = rng.gen_range(-1.0..1.0) / len;
            let mid = 0.5 * (af + bf);
            let base = slope.abs() * len * 0.5 + rng.gen_range(0.05..1.0);
            if kk < 0.0 && rng.gen_bool(0.5) {
                let c = (-kk).sqrt();
                let centre = rng.gen_range(af..bf);
                fns.push(Box::new(move |x: f64| amp * (c * (x - centre)).cosh()));
            } else {
                fns.push(Box::new(move |x: f64| amp * (base + slope * (x - mid))));
            }
        }
    }
    let g = |x: f64| fns.iter().map(|f| f(x)).fold(f64::INFINITY, f64::min);
    let prof = |x: f64| g(x).max(0.0).powf(m);
    let mass = simpson(prof, af, bf, (1 << 14) + 1);
    GridDensity::from_fn(a, b, n, |x| lit(prof(to_f64(x)) / mass))
}
