//! Feature extractor, pose regressor and domain mixer as small MLPs, trained
//! by alternating a mixer stage with a confusion stage.

mod loss;
mod net;
mod toy;
mod train;

pub use loss::{
    loss_domain_stage1, loss_domain_stage2, loss_reg, sigmoid, stage1_logit_grad, stage2_logit_grad, total_loss,
    PROB_EPS,
};
pub use net::{column, rows, MlpNet, NetCheckpoint, Tensor, Trace, LEAKY_SLOPE};
pub use toy::{ToyConfig, ToyOutcome, ToyProblem};
pub use train::{
    probe_domain_accuracy, Batch, DaCheckpoint, DaNets, HistoryEntry, Momentum, NetShapes, Stage, TrainSchedule, Trainer,
    PROBE_MIN_SAMPLES,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("bad network shape: {0}")]
    BadShape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid batch: {0}")]
    BadBatch(String),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("need at least {needed} samples per domain, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
