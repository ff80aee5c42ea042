//! Error type shared by every estimator in the crate.
//!
//! Variant names double as the typed error names printed by the CLI, so
//! they are kept stable.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // ---- ingestion / validation ----
    #[error("malformed row {row}, column `{column}`: {reason}")]
    MalformedRow {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("row {row}: treatment value `{value}` is not 0/1")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("row {row}: {reason}")]
    InconsistentStageEvents { row: usize, reason: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("arm {arm} has no usable records")]
    EmptyArm { arm: u8 },
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    // ---- numerics ----
    #[error("logistic fit diverged (complete or quasi-complete separation)")]
    Separation,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("statistic failed on bootstrap replicate {replicate}: {source}")]
    StatisticFailed {
        replicate: usize,
        source: Box<Error>,
    },
    #[error("all values are identical; density support is degenerate")]
    DegenerateSupport,

    // ---- estimation ----
    #[error("stratum cell is empty: {0}")]
    EmptyStratumCell(String),
    #[error("stratum is empty in the potential-outcome table: {0}")]
    EmptyStratum(String),
    #[error("positivity violated: {0}")]
    PositivityViolation(String),
    #[error("positivity warning: {0}")]
    PositivityWarning(String),
    #[error("probability out of range: {what} = {value}")]
    ProbabilityOutOfRange { what: String, value: f64 },
    #[error("pi01 = {pi01} outside feasible range [{lo}, {hi}]")]
    InfeasiblePi01 { pi01: f64, lo: f64, hi: f64 },
    #[error("monotonicity inconsistent with observed margins: {0}")]
    MonotonicityInconsistent(String),
    #[error("model fit failed: {0}")]
    ModelFitFailed(String),
    #[error("extreme weights: {0}")]
    ExtremeWeights(String),
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("all stratum probabilities are zero")]
    AllZeroProbabilities,
    #[error("EM did not converge after {iterations} iterations")]
    EMNotConverged { iterations: usize },
    #[error("Monte Carlo integration unstable: {0}")]
    IntegrationUnstable(String),
    #[error("staged data missing: {0}")]
    StageDataMissing(String),

    // ---- bayes ----
    #[error("prior support violation: {0}")]
    PriorSupportViolation(String),
    #[error("non-finite likelihood: {0}")]
    NonFiniteLikelihood(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    /// Stable type name, used on stderr by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::InconsistentStageEvents { .. } => "InconsistentStageEvents",
            Error::MissingColumn(_) => "MissingColumn",
            Error::InvalidDataset(_) => "InvalidDataset",
            Error::EmptyArm { .. } => "EmptyArm",
            Error::Io(_) => "Io",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownPreset(_) => "UnknownPreset",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::PreconditionFailed(_) => "PreconditionFailed",
            Error::Separation => "Separation",
            Error::RankDeficient => "RankDeficient",
            Error::NoBracket { .. } => "NoBracket",
            Error::StatisticFailed { .. } => "StatisticFailed",
            Error::DegenerateSupport => "DegenerateSupport",
            Error::EmptyStratumCell(_) => "EmptyStratumCell",
            Error::EmptyStratum(_) => "EmptyStratum",
            Error::PositivityViolation(_) => "PositivityViolation",
            Error::PositivityWarning(_) => "PositivityWarning",
            Error::ProbabilityOutOfRange { .. } => "ProbabilityOutOfRange",
            Error::InfeasiblePi01 { .. } => "InfeasiblePi01",
            Error::MonotonicityInconsistent(_) => "MonotonicityInconsistent",
            Error::ModelFitFailed(_) => "ModelFitFailed",
            Error::ExtremeWeights(_) => "ExtremeWeights",
            Error::DegenerateWeights(_) => "DegenerateWeights",
            Error::AllZeroProbabilities => "AllZeroProbabilities",
            Error::EMNotConverged { .. } => "EMNotConverged",
            Error::IntegrationUnstable(_) => "IntegrationUnstable",
            Error::StageDataMissing(_) => "StageDataMissing",
            Error::PriorSupportViolation(_) => "PriorSupportViolation",
            Error::NonFiniteLikelihood(_) => "NonFiniteLikelihood",
            Error::UnknownParameter(_) => "UnknownParameter",
        }
    }

    /// True for errors caused by malformed input or configuration rather
    /// than by an estimator failing on valid data.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRow { .. }
                | Error::NonBinaryTreatment { .. }
                | Error::InconsistentStageEvents { .. }
                | Error::MissingColumn(_)
                | Error::InvalidDataset(_)
                | Error::Io(_)
                | Error::InvalidConfig(_)
                | Error::UnknownPreset(_)
                | Error::DimensionMismatch { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
