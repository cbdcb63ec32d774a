use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids do not match: {0}")]
    GridMismatch(String),
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("invalid basis request: {0}")]
    InvalidBasis(String),
    #[error("CFL condition violated: dt = {dt} exceeds the limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("forward solver produced non-finite values at time step {step}")]
    ForwardBlowup { step: usize },
    #[error("no arrival in trace of node {node}")]
    NoArrival { node: usize },
    #[error("time shift {shift} + window {window} exceeds the recording length {length}")]
    ShiftOutOfRange { shift: f64, window: f64, length: f64 },
    #[error("a trace needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("amplitude {amplitude} at node {node} is below the feasibility floor {floor}")]
    Infeasible {
        node: usize,
        amplitude: f64,
        floor: f64,
    },
    #[error("component {comp} at boundary node {node} disagrees with the Dirichlet data")]
    DirichletMismatch { node: usize, comp: usize },
    #[error("no descent after {halvings} step halvings at iteration {iteration}")]
    Stall { iteration: usize, halvings: usize },
    #[error("eikonal sweeps did not converge: last update {residual}")]
    NonConvergence { residual: f64 },
    #[error("unknown phantom `{name}`; valid names: {valid}")]
    UnknownPhantom { name: String, valid: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}
