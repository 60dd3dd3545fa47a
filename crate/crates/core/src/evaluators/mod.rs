//! Score sources implementing [`Evaluator`](crate::evaluation::Evaluator).

pub mod external;
pub mod synthetic;
pub mod tabular;

pub use external::{Connection, ExternalEvaluator, InProcessTransport, ProcessTransport, Transport};
pub use synthetic::{SyntheticBenchmark, SyntheticBenchmarkParams};
pub use tabular::TabularBenchmark;
