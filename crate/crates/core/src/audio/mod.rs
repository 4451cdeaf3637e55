//! Deterministic signal processing: STFT magnitudes, the parametric vocoder
//! and its compressed 64-dimensional feature layout, F0 representations and
//! the mel-cepstral distortion metric.
//!
//! Every function here is pure; nothing holds shared mutable state.

mod clip;
mod dump;
mod f0;
mod features;
mod mcd;
mod stft;
pub mod vocoder;
mod wav;

pub use clip::AudioClip;
pub use dump::{read_dump, write_dump, DumpLayout, FeatureDump, DUMP_VERSION};
pub use f0::{f0_normalize, f0_quantize, F0Contour, F0Quantizer, F0Scale, DEFAULT_F0_BINS};
pub use features::{vocoder_analyze, vocoder_analyze_with, vocoder_synthesize, vocoder_synthesize_with, FeatureCodec, VocoderFeatures};
pub use mcd::{mcd, mcd_frames, MCD_SCALE};
pub use stft::{hann_periodic, reflect_index, stft_magnitude, MagSpectrogram};
pub use wav::{read_wav, resample, write_wav};

use thiserror::Error;

/// Pipeline sample rate in Hz.
pub const SAMPLE_RATE: u32 = 32_000;
/// Frame hop in samples (5 ms).
pub const HOP: usize = 160;
/// STFT window length in samples.
pub const WINDOW: usize = 1024;
/// Magnitude bins per STFT frame.
pub const N_BINS: usize = WINDOW / 2 + 1;
/// Harmonic compressed-cepstrum coefficients per vocoder frame.
pub const N_CEPSTRUM: usize = 60;
/// Band aperiodicity coefficients per vocoder frame.
pub const N_BANDS: usize = 4;
/// Width of a vocoder feature frame.
pub const FEATURE_DIM: usize = N_CEPSTRUM + N_BANDS;
/// 640 ms training excerpt length in frames.
pub const EXCERPT_FRAMES: usize = 128;

/// Number of frames on the 5 ms grid for a clip of `n_samples`.
pub fn frame_count(n_samples: usize) -> usize {
    n_samples / HOP
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("clip is at {found} Hz but {expected} Hz is required; resample first")]
    WrongSampleRate { expected: u32, found: u32 },
    #[error("clip has {samples} samples, at least {min} are required")]
    TooShort { samples: usize, min: usize },
    #[error("audio contains non-finite samples")]
    NonFinite,
    #[error("frame count mismatch: {left} vs {right}")]
    FrameMismatch { left: usize, right: usize },
    #[error("expected {expected} values per frame, got {found}")]
    BadWidth { expected: usize, found: usize },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("vocoder backend '{backend}' failed: {reason}")]
    Analysis { backend: String, reason: String },
    #[error("invalid F0 range [{fmin}, {fmax}] Hz")]
    InvalidF0Range { fmin: f64, fmax: f64 },
    #[error("at least 2 quantization bins are required, got {0}")]
    TooFewBins(usize),
    #[error("resampling failed: {0}")]
    Resample(String),
    #[error("malformed feature dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
