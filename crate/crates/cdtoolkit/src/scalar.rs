use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Relative rounding unit, used to size tie and equality tolerances.
    fn unit_roundoff() -> Self {
        Self::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

/// Converts a count into `T`.
#[inline]
pub fn cnt<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Maximum of a slice, ignoring NaN; `-inf` when empty.
pub fn max_of<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m })
}

/// Minimum of a slice, ignoring NaN; `+inf` when empty.
pub fn min_of<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::infinity(), |m, &x| if x < m { x } else { m })
}

/// Composite Simpson rule over `[a, b]` with `nodes` (odd, at least 3) nodes.
pub fn simpson<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, nodes: usize) -> T {
    let nodes = if nodes.is_multiple_of(2) { nodes + 1 } else { nodes.max(3) };
    let m = nodes - 1;
    let h = (b - a) / cnt(m);
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w: T = if i % 2 == 1 { lit(4.0) } else { lit(2.0) };
        acc = acc + w * f(a + cnt::<T>(i) * h);
    }
    acc * h / lit(3.0)
}

/// Trapezoid weights for `n` uniformly spaced nodes with step `h`.
pub fn trapezoid_weights<T: Real>(n: usize, h: T) -> Vec<T> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = h / lit(2.0);
        w[n - 1] = h / lit(2.0);
    }
    w
}

/// Total order on floats (NaN sorts last via the `f64` total order).
pub fn total_cmp<T: Real>(a: &T, b: &T) -> std::cmp::Ordering {
    to_f64(*a).total_cmp(&to_f64(*b))
}

/// Median of a non-empty slice (average of the middle pair for even lengths).
pub fn median<T: Real>(xs: &[T]) -> T {
    let mut v: Vec<T> = xs.to_vec();
    v.sort_by(total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / lit(2.0)
    }
}
