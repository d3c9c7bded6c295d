use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no connected Erdos-Renyi graph after {attempts} attempts (J={nodes}, p={p})")]
    ConnectivityCap { attempts: usize, nodes: usize, p: f64 },

    #[error("invalid mixing matrix: {0}")]
    InvalidMixing(String),

    #[error(
        "omega = {omega} >= 1/2 admits no stepsize; apply lazy_fix ((W + I)/2) to the mixing matrix"
    )]
    OmegaTooLarge { omega: f64 },

    #[error("degenerate factor pair: rank(UV^T) = {rank} < r = {r}; balancing needs a non-degenerate pair")]
    DegenerateFactors { rank: usize, r: usize },

    #[error("critical point is neither a global minimum nor a strict saddle (gap = {gap}, min quadform = {min_quadform})")]
    ClassificationFailure { gap: f64, min_quadform: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(op: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
