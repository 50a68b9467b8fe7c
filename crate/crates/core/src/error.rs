use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("transition matrix has more than one stationary distribution")]
    NonUniqueStationary,
    #[error("symbol {symbol} at position {position} is outside the alphabet of size {alphabet}")]
    SymbolOutOfRange {
        symbol: usize,
        position: usize,
        alphabet: usize,
    },
    #[error("sequence of length {len} is too short (need at least {needed})")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("adaptive quadrature did not converge within depth {0}")]
    QuadratureNotConverged(usize),
    #[error("QP is infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),
    #[error("QP objective is unbounded below on the feasible set")]
    Unbounded,
    #[error("QP solver hit the iteration cap of {0}")]
    MaxIterations(usize),
    #[error("QP terminated with KKT residual {0:.3e} above tolerance")]
    KktNotSatisfied(f64),
    #[error("normal-equation matrix is singular (condition estimate {0:.3e})")]
    SingularW(f64),
    #[error("perturbation bound inapplicable: epsilon {epsilon:.3e} >= lambda_min {lambda:.3e}")]
    BoundInapplicable { epsilon: f64, lambda: f64 },
    #[error("emission matrix B is rank deficient (sigma_min/sigma_max = {0:.3e})")]
    RankDeficientB(f64),
    #[error("kernel matrix is rank deficient (sigma_min/sigma_max = {0:.3e})")]
    RankDeficientK(f64),
    #[error("effective observation matrix F is rank deficient (sigma_min/sigma_max = {0:.3e})")]
    RankDeficientF(f64),
    #[error("every EM restart collapsed a component onto the variance floor")]
    DegenerateComponent,
    #[error("forward-backward scaling failed at t = {0}")]
    NumericalUnderflow(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
