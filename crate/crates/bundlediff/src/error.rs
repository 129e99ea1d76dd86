use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("orbit metric gamma is not positive definite (min eigen/pivot {0:e})")]
    SingularOrbitMetric(f64),
    #[error("gauge is not transversal to the orbits: Faddeev-Popov condition number {0:e}")]
    GaugeNotTransversal(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("finite-difference stencil leaves the chart domain at {0:?}")]
    DerivativeFailure(Vec<f64>),
    #[error("group element outside the exponential chart (|a| = {0})")]
    ChartOverflow(f64),
    #[error("point left every chart: {0:?}")]
    ChartExit(Vec<f64>),
    #[error("projection onto the gauge surface failed (residual {0:e})")]
    ProjectionFailure(f64),
    #[error("multiplicative integral overflow (|M| = {0:e}); step size too large")]
    MatrixOverflow(f64),
    #[error("stencil leaves the grid at node {0}")]
    StencilOutOfDomain(usize),
    #[error("explicit time stepping is unstable (dt = {dt}, limit {limit})")]
    Instability { dt: f64, limit: f64 },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
