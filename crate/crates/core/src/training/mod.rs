//! Losses, the staged training loop, configs and loss reports.

mod config;
mod losses;
mod report;
mod stage;

pub use config::{ProjectConfig, StageOverrides, TrainConfig};
pub use losses::{
    autovc_loss, autovc_loss_graph, decoder_loss, decoder_loss_graph, encoder_distill_loss, encoder_distill_loss_graph, LossMatrix,
    LossOperand,
};
pub use report::{EarlyStopping, StageReport, StopReason, ValidationCheck};
pub use stage::{fit_feature_scaler, fit_mag_scaler, run_training_stage, StageDeps};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::networks::{NetworkError, Stage};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("stage '{stage}' needs a trained '{required}' checkpoint")]
    MissingDependency { stage: Stage, required: Stage },
    #[error("shape mismatch in {what}: {left:?} vs {right:?}")]
    Shape { what: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("stage '{stage}' produced a non-finite loss at step {step}")]
    Diverged { stage: Stage, step: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
