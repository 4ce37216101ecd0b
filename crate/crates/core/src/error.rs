use std::path::PathBuf;

use crate::soup::CompatibilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Compatibility,
    Evaluator,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("non-finite score at model {model:?}, category {category:?}")]
    NonFiniteScore { model: String, category: String },

    #[error("non-numeric score {value:?} at model {model:?}, category {category:?}")]
    NonNumericScore {
        model: String,
        category: String,
        value: String,
    },

    #[error("ragged row for model {model:?}: expected {expected} cells, found {found}")]
    RaggedRow {
        model: String,
        expected: usize,
        found: usize,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} {id:?}")]
    Unknown { kind: &'static str, id: String },

    #[error("no defined off-diagonal correlations")]
    NoDefinedCorrelations,

    #[error("no weakly-correlated categories")]
    EmptyLowCorrelationSet,

    #[error("infeasible weight grid: {0}")]
    InfeasibleGrid(String),

    #[error("incompatible checkpoints: {} mismatch(es)", .0.mismatches.len())]
    Incompatible(CompatibilityReport),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated buffer: {0}")]
    TruncatedBuffer(String),

    #[error("overlapping tensor extents: {first:?} and {second:?}")]
    OverlappingTensors { first: String, second: String },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("evaluation of recipe {recipe} failed: {source}")]
    RecipeEvaluation { recipe: String, source: Box<Error> },

    #[error("evaluation of coalition {coalition} failed: {source}")]
    CoalitionEvaluation {
        coalition: String,
        source: Box<Error>,
    },

    #[error("evaluator command exited with {status}: {stderr}")]
    EvaluatorExit { status: String, stderr: String },

    #[error("malformed evaluator output: {0}")]
    MalformedEvaluatorOutput(String),

    #[error("missing category {0}")]
    MissingCategory(String),

    #[error("non-finite score for category {0}")]
    NonFiniteCategoryScore(String),

    #[error("empty universe: {0}")]
    EmptyUniverse(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Incompatible(_) => ErrorClass::Compatibility,
            Error::RecipeEvaluation { .. }
            | Error::CoalitionEvaluation { .. }
            | Error::EvaluatorExit { .. }
            | Error::MalformedEvaluatorOutput(_)
            | Error::MissingCategory(_)
            | Error::NonFiniteCategoryScore(_) => ErrorClass::Evaluator,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
