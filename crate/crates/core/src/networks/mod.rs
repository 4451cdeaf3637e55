//! The five networks: teacher encoder/decoder, student encoder, the
//! singer-dependent and singer-independent decoders, and the F0 predictor.
//!
//! Networks are generic over the scalar type so gradient checks can run in
//! f64; trained models and checkpoints use f32.

mod blocks;
mod checkpoint;
mod config;
mod embedding;
mod models;
mod scaler;

pub use blocks::{ContentEncoder, FeatureDecoder};
pub use checkpoint::{ModelCheckpoint, Stage, CHECKPOINT_VERSION};
pub use config::{F0Mode, NetworkConfig};
pub use embedding::ContentEmbedding;
pub use models::{
    f0_predict, sdn_decode, sin_decode, singer_frames, student_encode, teacher_forward, F0Predictor, SdnDecoder, SinDecoder, StageNetwork,
    StudentEncoder, Teacher,
};
pub use scaler::{mag_transform, Scaler};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("singer index {index} is out of range for {n_singers} singers")]
    SingerOutOfRange { index: usize, n_singers: usize },
    #[error("expected {expected} values per frame, got {found}")]
    BadWidth { expected: usize, found: usize },
    #[error("{frames} frames are not a multiple of the downsample factor {factor}")]
    NotMultiple { frames: usize, factor: usize },
    #[error("codes cover {codes} frames but the spectrogram has {frames}")]
    FrameMismatch { codes: usize, frames: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint config differs from the requested one: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint holds stage '{found}', expected '{expected}'")]
    WrongStage { found: Stage, expected: Stage },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
