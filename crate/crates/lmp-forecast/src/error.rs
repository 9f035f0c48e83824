use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the layer that raises them; the CLI maps them to
/// exit codes (usage/format -> 1, infeasible or empty results -> 2,
/// numerical failures -> 3).
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent case/scenario input.
    #[error("case format error: {0}")]
    CaseFormat(String),

    /// The in-service line graph does not connect all buses.
    #[error("disconnected network: {0}")]
    Disconnected(String),

    /// The program has no feasible point at the queried parameter.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The objective is unbounded below over the feasible set.
    #[error("unbounded objective: {0}")]
    Unbounded(String),

    /// An iterative solver failed to converge or hit an internal limit.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// A computation hit a degenerate configuration it could not resolve.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A constructed critical region has empty interior.
    #[error("empty critical region: {0}")]
    EmptyRegion(String),

    /// The declared parameter box is empty.
    #[error("empty parameter box")]
    EmptyBox,

    /// A region store required for the operation is empty or missing.
    #[error("empty or missing region store: {0}")]
    EmptyStore(String),

    /// A located point falls outside every stored region.
    #[error("point lies outside every stored region")]
    OutsideStore,

    /// Vector/matrix dimensions disagree with the owning problem.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Quadratic cost matrix is not positive definite.
    #[error("cost Hessian is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Invalid probability data (negative, or mass exceeding one).
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),

    /// Requested horizon runs past the end of the scenario trajectory.
    #[error("horizon out of range: issuance {t} + horizon {horizon} exceeds trajectory length {len}")]
    HorizonOutOfRange { t: usize, horizon: usize, len: usize },

    /// Invalid argument to an evaluation routine.
    #[error("invalid evaluation input: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
