//! Training: run configuration, the two loss terms, and the epoch loop.

pub mod config;
pub mod loss;
pub mod trainer;

pub use config::{Precision, TrainConfig};
pub use loss::{mvc_from_parts, mvc_loss, nll_from_probs, nll_loss, CoverageStep, LossBreakdown};
pub use trainer::{dataset_loss, train, BatchLog, EpochSummary, TrainOutcome};
