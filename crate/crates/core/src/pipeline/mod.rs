//! Inference and evaluation: separating a mixture into a synthesized vocal
//! and scoring decoder output against clean references with MCD.

mod evaluate;
mod separate;

pub use evaluate::{evaluate_mcd, mean_feature_baseline, EvalModel, EvalReport, ModelAggregate, SkippedTrack, TrackScore};
pub use separate::{
    predict_features, separate, windowed_codes, SeparationMode, SeparationModels, SeparationResult, CODE_WINDOW_FRAMES, CODE_WINDOW_HOP,
};

use thiserror::Error;

use crate::audio::AudioError;
use crate::dataset::DatasetError;
use crate::networks::{NetworkError, Stage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("no '{stage}' checkpoint at {path}")]
    MissingCheckpoint { stage: Stage, path: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
