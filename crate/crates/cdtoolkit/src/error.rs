use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("interval too long: length {length} exceeds the maximal length {limit}")]
    IntervalTooLong { length: f64, limit: f64 },
    #[error("no level set: the zero set of the guide is empty")]
    NoLevelSet,
    #[error("guide is not 1-Lipschitz: defect {defect} at pair ({i}, {j})")]
    NotLipschitz { defect: f64, i: usize, j: usize },
    #[error("overlapping ray interiors: rays {0} and {1} share interior point {2}")]
    OverlappingRays(usize, usize, usize),
    #[error("family inconsistent with change-of-variables rigidity: dispersion {dispersion} at t = {t}")]
    InconsistentFamily { dispersion: f64, t: f64 },
    #[error("factorization residual {residual} exceeds tolerance {tolerance} at t = {t}")]
    FactorResidual { residual: f64, tolerance: f64, t: f64 },
    #[error("infeasible transport problem: {0}")]
    Infeasible(String),
    #[error("null geodesic: length function vanishes")]
    NullGeodesic,
    #[error("antipodal pair ({0}, {1}) has no unique geodesic")]
    Antipodal(usize, usize),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
