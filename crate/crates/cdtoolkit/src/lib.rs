//! Numerical toolkit for curvature-dimension conditions, Hopf-Lax
//! interpolants, transport rays and the L/Y factorization.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); `*F64` aliases
//! cover the common case.

// `!(x > y)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cd1d;
pub mod coefficients;
pub mod error;
pub mod hopflax;
pub mod ly;
pub mod rays;
pub mod report;
pub mod scalar;
pub mod spaces;
pub mod w2;

pub use coefficients::{CurvatureParams, Dim, ExtReal};
pub use error::{Error, Result};
pub use scalar::Real;

pub type CurvatureParamsF64 = CurvatureParams<f64>;
pub type GridDensityF64 = cd1d::GridDensity<f64>;
pub type SampledSpaceF64 = spaces::SampledSpace<f64>;
pub type DiscreteMeasureF64 = spaces::DiscreteMeasure<f64>;
pub type TransportPlanF64 = w2::TransportPlan<f64>;
pub type DualPairF64 = w2::DualPair<f64>;
pub type TransportStructureF64 = rays::TransportStructure<f64>;
pub type CovDataF64 = ly::CovData<f64>;
pub type LyFactorizationF64 = ly::LyFactorization<f64>;
