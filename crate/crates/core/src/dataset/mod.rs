//! Corpus management: manifests and splits, gain-augmented mixing, excerpt
//! sampling and the synthetic desk-scale corpus.

mod batch;
mod corpus;
mod manifest;
mod mix;
pub mod synth;

pub use batch::{sample_training_batch, validation_batches, GainRange, SingerVector, TrainingBatch};
pub use corpus::{load_song, Corpus, SongData};
pub use manifest::{build_manifest, DatasetManifest, ManifestEntry, Split, LABELS_FILE};
pub use mix::{mix_waveforms, mix_with_gains, MixDomain};

use std::path::PathBuf;

use thiserror::Error;

use crate::audio::AudioError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus problems:\n  {}", .0.join("\n  "))]
    Rejected(Vec<String>),
    #[error("{path}:{line}: {reason}")]
    BadManifestLine { path: PathBuf, line: usize, reason: String },
    #[error("val_fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("gain range [{lo}, {hi}] is invalid; need 0 <= lo <= hi")]
    BadGainRange { lo: f64, hi: f64 },
    #[error("no usable {0} songs (each needs at least 640 ms of audio)")]
    NoSongs(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("audio error in {context}: {source}")]
    Audio { context: String, source: AudioError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub(crate) fn audio(context: impl Into<String>) -> impl FnOnce(AudioError) -> DatasetError {
        let context = context.into();
        move |source| DatasetError::Audio { context, source }
    }
}
