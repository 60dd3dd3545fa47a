//! Budget-equalized, noise-aware neural architecture search.
//!
//! The crate covers the discrete architecture encoding ([`search_space`]),
//! budgeted fitness evaluation under single-split and cross-validation
//! setups ([`evaluation`]), score sources ([`evaluators`]), the search
//! algorithms ([`search`]), statistics ([`metrics_stats`]) and experiment
//! orchestration ([`experiments`]).

pub mod error;
pub mod evaluation;
pub mod evaluators;
pub mod experiments;
pub mod metrics_stats;
pub mod search;
pub mod search_space;

pub use error::{ConfigError, EvaluationError, EvaluatorError, NasError, ParseGenotypeError, StatsError};
pub use evaluation::{EvaluationSetup, Evaluator, TrainingUnit};
pub use search_space::Genotype;
