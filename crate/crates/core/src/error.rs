use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cohort has no records")]
    EmptyCohort,
    #[error("record {index} has {found} covariates, expected {expected}")]
    InconsistentArity {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {index}: non-finite or out-of-range value in field `{field}`")]
    NonFiniteValue { index: usize, field: &'static str },
    #[error("record {index}: observed time {observed} does not exceed entry time {entry}")]
    TruncationViolation { index: usize, entry: f64, observed: f64 },
    #[error("zero at-risk mass at event time {time}")]
    ZeroRiskMass { time: f64 },
    #[error("{degenerate} of {total} bootstrap resamples were degenerate")]
    DegenerateResample { degenerate: usize, total: usize },
    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient:e})")]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("coefficient `{term}` diverged (|beta| > 20); monotone likelihood")]
    MonotoneLikelihood { term: String },
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("classes are separated: coefficient {index} exceeded 20 in absolute value")]
    SeparationDetected { index: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("covariate arity mismatch: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("truncation target {target} is unachievable (must lie in ({floor}, 1))")]
    UnachievableTarget { target: f64, floor: f64 },
    #[error("root bracket does not contain the target truncation probability")]
    BracketFailure,
    #[error("estimator `{0}` failed in every iteration")]
    AllFailed(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {reason}")]
    Validation { line: usize, reason: String },
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(String),
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::Precondition(_) | Error::UnknownCovariate(_) => ErrorClass::Usage,
            Error::EmptyCohort
            | Error::InconsistentArity { .. }
            | Error::NonFiniteValue { .. }
            | Error::TruncationViolation { .. }
            | Error::ArityMismatch { .. }
            | Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Io(_) => ErrorClass::Data,
            Error::ZeroRiskMass { .. }
            | Error::DegenerateResample { .. }
            | Error::NonConvergence { .. }
            | Error::MonotoneLikelihood { .. }
            | Error::RankDeficientDesign
            | Error::SeparationDetected { .. }
            | Error::SingleClass
            | Error::UnachievableTarget { .. }
            | Error::BracketFailure
            | Error::AllFailed(_) => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
