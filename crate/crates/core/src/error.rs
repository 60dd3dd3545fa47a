use thiserror::Error;

use crate::evaluation::TrainingUnit;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseGenotypeError {
    #[error("expected 24 genes, got {0}")]
    WrongLength(usize),
    #[error("gene {index} has value {value}, outside its cardinality")]
    OutOfRange { index: usize, value: i64 },
    #[error("not an integer: {0:?}")]
    NotAnInteger(String),
}

/// Failures reported by a score source.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluatorError {
    #[error("no stored score for {0}")]
    MissingEntry(TrainingUnit),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("evaluator failure: {0}")]
    Failure(String),
    #[error("evaluator timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("worker i/o: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("budget exhausted: evaluation needs {needed} trainings, {remaining} remain")]
    BudgetExhausted { needed: usize, remaining: usize },
    #[error("evaluation call limit of {0} reached")]
    CallLimit(usize),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
}

impl EvaluationError {
    /// True for the conditions that end a search run normally.
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, EvaluationError::BudgetExhausted { .. } | EvaluationError::CallLimit(_))
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("seed pool too small: need {needed_seeds} seeds and {needed_partitionings} partitionings, have {seeds} and {partitionings}")]
    PoolExhausted {
        needed_seeds: usize,
        needed_partitionings: usize,
        seeds: usize,
        partitionings: usize,
    },
    #[error("holdout pool overlaps the search pool")]
    PoolOverlap,
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("statistic not defined: {0}")]
    NotDefined(&'static str),
}

#[derive(Debug, Error)]
pub enum NasError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path} line {line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{0}")]
    Pairing(String),
}

impl NasError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        NasError::Io { path: path.as_ref().display().to_string(), source }
    }
}
