//! Evaluation: replicated accuracy, learning curves, inter-rater agreement,
//! viewing productivity, and the synthetic corpus used to exercise them.

pub mod accuracy;
pub mod kappa;
pub mod productivity;
pub mod report;
pub mod synth;

use thiserror::Error;

pub use accuracy::{accuracy, learning_curve, replicate, CurvePoint, ReplicationReport};
pub use kappa::{fleiss_kappa, AgreementTable};
pub use productivity::{
    productivity_simulate, productivity_theoretic, ProductivityParams, SimulationMode, SimulationReport,
    TheoreticProductivity,
};
pub use synth::{generate_synthetic_corpus, Concept, SyntheticSpec};

use crate::mil::MilError;
use crate::model::ModelError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} labeled bags, have {have}")]
    TooFewBags { needed: usize, have: usize },
    #[error("dataset contains a single class")]
    SingleClassDataset,
    #[error("training size {size} must be in [2, {limit})")]
    SizeTooLarge { size: usize, limit: usize },
    #[error("expected agreement is 1 but observed agreement is below 1")]
    DegenerateExpectedAgreement,
    #[error("invalid agreement table: {0}")]
    InvalidTable(String),
    #[error("classifier predicts no positives")]
    NoPredictedPositives,
    #[error("capacity {capacity} exceeds the {available} clips available")]
    CapacityExceedsSet { capacity: f64, available: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid synthetic corpus spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Mil(#[from] MilError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Arithmetic mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
