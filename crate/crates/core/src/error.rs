use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Every failure surfaced by the toolkit core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("label {value} out of range for {kind} attribute `{name}` (row {row})")]
    LabelOutOfRange { name: String, kind: &'static str, row: usize, value: f64 },
    #[error("attribute `{name}` must be {expected}")]
    WrongAttributeKind { name: String, expected: &'static str },
    #[error("target `{0}` cannot also be a covariate")]
    TargetAsCovariate(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("target `{0}` has a single class")]
    SingleClass(String),
    #[error("linear system is singular or not positive definite")]
    Singular,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("direction `{0}` is degenerate")]
    DegenerateDirection(String),
    #[error("unknown direction `{0}`")]
    UnknownDirection(String),
    #[error("factor correlation matrix is not a symmetric PSD matrix with unit diagonal: {0}")]
    InvalidCorrelation(String),
    #[error("mixing matrix has rank below the factor count")]
    RankDeficient,
    #[error("drew {draws} candidates but accepted only {accepted} of {target} (acceptance rate {rate:.3e})")]
    DrawsExhausted { target: usize, accepted: usize, draws: usize, rate: f64 },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("row {row} is not neutral (attribute `{attribute}` = {value})")]
    NonNeutralRow { row: usize, attribute: String, value: f64 },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("score {reference} is unreachable: curve asymptote is {asymptote}")]
    Unreachable { reference: f64, asymptote: f64 },
    #[error("neutralization failed for {failed} of {attempted} samples (bound {bound})")]
    NeutralizationFailures { failed: usize, attempted: usize, bound: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to malformed inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Singular
                | Error::NotConverged { .. }
                | Error::NeutralizationFailures { .. }
        )
    }
}
