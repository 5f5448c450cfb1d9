pub mod analysis;
pub mod dataio;
pub mod evaluator;
pub mod harness;
pub mod metrics;
pub mod optimizers;
pub mod pipeline;
pub mod scalar;
pub mod searchspace;

use num_rational::Ratio;

/// Default floating-point score type.
pub type Score = f64;
/// Exact rational scores, used to check aggregation without rounding.
pub type Exact = Ratio<i128>;

pub type Grid = dataio::GridTable<Score>;
pub type ExactGrid = dataio::GridTable<Exact>;
pub type History = optimizers::TrialHistory<Score>;
