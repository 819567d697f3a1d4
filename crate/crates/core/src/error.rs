use thiserror::Error;

/// Errors raised across the renormalization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("permutation pair is reducible")]
    ReduciblePermutation,
    #[error("length vector must be strictly positive")]
    NonPositiveLength,
    #[error("point {0} outside the domain of the map")]
    OutOfDomain(f64),
    #[error("degenerate induction step: last-interval lengths coincide")]
    DegenerateStep,
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("tower heights exceed the orbit budget at level {level}")]
    HeightOverflowBudget { level: usize },
    #[error("replica spread {spread:.3e} exceeds {factor} standard errors")]
    InsufficientConvergence { spread: f64, factor: f64 },
    #[error("ill-conditioned subspace extraction: gap {gap:.3e}")]
    IllConditioned { gap: f64 },
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("singularity exponent must lie in [0,1)")]
    ExponentOutOfRange,
    #[error("interval [{0}, {1}] crosses a division point")]
    CrossesDivision(f64, f64),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("endpoint orbit passes within tolerance of two division points (step {step})")]
    AmbiguousHit { step: usize },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("tail diverges: homogeneity degree {beta} requires 2a - beta > 1 (a = {a})")]
    DivergentTail { a: f64, beta: f64 },
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("branch search failed: all candidate sums below noise floor")]
    SearchFailed { values: Vec<f64> },
    #[error("flow integration step-size failure: {0}")]
    StepSizeFailure(String),
    #[error("observable has no nonzero edge constant")]
    NoNonzeroEdgeConstant,
    #[error("sampled lengths rejected by Keane pre-check {0} times")]
    KeaneRejected(usize),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
