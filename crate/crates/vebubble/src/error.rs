use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("function undefined at eigenvalue {0}")]
    DomainError(f64),
    #[error("regularization parameter must lie in (0,1), got {0}")]
    InvalidDelta(f64),
    #[error("matrix not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),
    #[error("interface segments {0} and {1} intersect")]
    SelfIntersectingInterface(usize, usize),
    #[error("interface segment {0} is degenerate")]
    DegenerateSegment(usize),
    #[error("interface vertex {0} left the domain")]
    InterfaceLeftDomain(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("point ({0}, {1}) outside the mesh")]
    PointOutsideMesh(f64, f64),
    #[error("vertex normals span a space of dimension {0} < 2")]
    SpanDeficient(usize),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("fixed-point iteration did not converge after {iters} sweeps (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),
    #[error("type mismatch in configuration: {0}")]
    TypeMismatch(String),
    #[error("missing required configuration value: {0}")]
    MissingRequired(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
