//! Training data, the native mini-trainer, FedAvg, and the synthetic loss
//! backend.

mod dataset;
pub mod idx;
mod model;
mod synthetic;

use serde::Serialize;
use thiserror::Error;

pub use dataset::{generate_synthetic, partition_label_skew, Dataset, Partition};
pub use idx::{load_idx, IdxError};
pub use model::{aggregate, evaluate, local_train, local_train_with_rng, Architecture, ModelParams, ModelShape};
pub use synthetic::{synthetic_loss, SyntheticProfile};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible partition: label {label} needs {needed} more samples, {available} left")]
    InfeasiblePartition { label: usize, needed: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at step {step} (loss {loss}); lower the learning rate")]
    Divergence { step: u32, loss: f64 },
    #[error("aggregation failed: {0}")]
    Aggregation(String),
}

/// Per-sample training losses and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub per_sample_losses: Vec<f64>,
    pub mean_loss: f64,
}

impl LossReport {
    pub fn from_losses(per_sample_losses: Vec<f64>) -> Self {
        let mean_loss = if per_sample_losses.is_empty() {
            0.0
        } else {
            model::pairwise_sum(&per_sample_losses) / per_sample_losses.len() as f64
        };
        LossReport { per_sample_losses, mean_loss }
    }
}
