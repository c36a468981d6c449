use thiserror::Error;

/// Errors produced by the graph, transport and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("no vertex of the graph lies in the box")]
    EmptyGraphInBox,
    #[error("rescaling factor must be positive, got {0}")]
    NonpositiveEps(f64),
    #[error("degenerate edge: endpoints coincide")]
    DegenerateEdge,
    #[error("negative input to mean function: ({0}, {1})")]
    NegativeInput(f64, f64),
    #[error("value vector has length {got}, graph expects {expected}")]
    GraphMismatch { expected: usize, got: usize },
    #[error("vertex {0} has degree zero but carries mass on an incident term")]
    IsolatedVertexInSupport(usize),
    #[error("curve violates the continuity equation: residual {residual:e} > tolerance {tolerance:e}")]
    ContinuityViolation { residual: f64, tolerance: f64 },
    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("no graph vertex within distance {radius} of lattice point {point:?}")]
    NoVertexInBall { point: Vec<f64>, radius: f64 },
    #[error("path between mapped lattice neighbours too long: {length} > {bound}")]
    PathTooLong { length: f64, bound: f64 },
    #[error("path step {0} -> {1} is not an edge of the graph")]
    NonadjacentStep(usize, usize),
    #[error("lattice pair is not covered by the lattice map")]
    UnmappedPair,
    #[error("divergence does not sum to zero: {0:e}")]
    UnbalancedDivergence(f64),
    #[error("no path from vertex {0} to vertex {1} inside the search tube")]
    NoTubePath(usize, usize),
    #[error("Delaunay triangulation of the perturbed lattice is degenerate")]
    DegenerateTriangulation,
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("cell problem is infeasible: {0}")]
    Infeasible(String),
    #[error("solver reached {iterations} iterations without converging")]
    MaxIterations { iterations: usize },
    #[error("density must be nonnegative, got {0}")]
    NegativeDensity(f64),
    #[error("supports of the endpoint measures are not connected")]
    DisconnectedSupports,
    #[error("continuity residual before balancing too large: {0:e}")]
    CEResidualTooLarge(f64),
    #[error("negative depot mass {0:e}; alpha is below h*(n/2)*Lip(j)")]
    NegativeDepot(f64),
    #[error("cell boundary values disagree with the backbone by {0:e}")]
    SeamMismatch(f64),
    #[error("gap transport infeasible: {0}")]
    GapInfeasible(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
