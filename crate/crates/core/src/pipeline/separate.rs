use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::audio::{stft_magnitude, vocoder_synthesize, AudioClip, F0Contour, MagSpectrogram, VocoderFeatures};
use crate::dataset::SingerVector;
use crate::networks::{ContentEmbedding, F0Predictor, ModelCheckpoint, NetworkConfig, SdnDecoder, SinDecoder, Stage, StageNetwork, StudentEncoder};

/// Frames per encoder window for long inputs.
pub const CODE_WINDOW_FRAMES: usize = 128;
/// Window advance (50% overlap).
pub const CODE_WINDOW_HOP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeparationMode {
    /// Singer-independent decoder conditioned on the mixture.
    Sin,
    /// Singer-dependent decoder conditioned on a singer one-hot.
    Sdn,
}

impl SeparationMode {
    pub fn stage(self) -> Stage {
        match self {
            SeparationMode::Sin => Stage::Sin,
            SeparationMode::Sdn => Stage::Sdn,
        }
    }
}

impl fmt::Display for SeparationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeparationMode::Sin => "sin",
            SeparationMode::Sdn => "sdn",
        })
    }
}

impl FromStr for SeparationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sin" => Ok(SeparationMode::Sin),
            "sdn" => Ok(SeparationMode::Sdn),
            _ => Err(format!("unknown mode '{s}' (expected sin or sdn)")),
        }
    }
}

/// Trained networks used at inference time. Decoders and the F0 predictor
/// are optional so evaluation can load only what it needs.
pub struct SeparationModels {
    pub student: StudentEncoder<f32>,
    pub sin: Option<SinDecoder<f32>>,
    pub sdn: Option<SdnDecoder<f32>>,
    pub f0: Option<F0Predictor<f32>>,
}

fn load_stage<N: StageNetwork<f32>>(dir: &Path, cfg: Option<&NetworkConfig>) -> Result<N, PipelineError> {
    let path = dir.join(N::STAGE.file_name());
    if !path.exists() {
        return Err(PipelineError::MissingCheckpoint { stage: N::STAGE, path: path.display().to_string() });
    }
    let ck = ModelCheckpoint::load(&path)?;
    Ok(match cfg {
        Some(cfg) => ck.into_network_checked(cfg)?,
        None => ck.into_network()?,
    })
}

impl SeparationModels {
    /// Loads the student encoder, the decoders for `modes` and, when
    /// `with_f0`, the F0 predictor. All must share one network config.
    pub fn load(dir: &Path, modes: &[SeparationMode], with_f0: bool) -> Result<Self, PipelineError> {
        let student: StudentEncoder<f32> = load_stage(dir, None)?;
        let cfg = student.config().clone();
        let sin = if modes.contains(&SeparationMode::Sin) { Some(load_stage(dir, Some(&cfg))?) } else { None };
        let sdn = if modes.contains(&SeparationMode::Sdn) { Some(load_stage(dir, Some(&cfg))?) } else { None };
        let f0 = if with_f0 { Some(load_stage(dir, Some(&cfg))?) } else { None };
        Ok(Self { student, sin, sdn, f0 })
    }

    pub fn config(&self) -> &NetworkConfig {
        self.student.config()
    }

    pub fn n_singers(&self) -> usize {
        self.student.n_singers()
    }

    fn missing(stage: Stage) -> PipelineError {
        PipelineError::MissingCheckpoint { stage, path: "(not loaded)".into() }
    }
}

/// Student codes for a spectrogram of any length: 128-frame windows with
/// 50% overlap, zero-padded at the end, overlapping codes cross-faded with
/// triangular weights. The result covers the padded length.
pub fn windowed_codes(student: &StudentEncoder<f32>, m: &MagSpectrogram) -> Result<ContentEmbedding, PipelineError> {
    let n = m.n_frames();
    let padded_len = if n <= CODE_WINDOW_FRAMES {
        CODE_WINDOW_FRAMES
    } else {
        CODE_WINDOW_FRAMES + (n - CODE_WINDOW_FRAMES).div_ceil(CODE_WINDOW_HOP) * CODE_WINDOW_HOP
    };
    let padded = m.padded(padded_len - n);
    let factor = student.config().downsample_factor;
    let dim = student.config().code_dim;
    let per_window = CODE_WINDOW_FRAMES / factor;
    let code_hop = CODE_WINDOW_HOP / factor;
    let n_codes = padded_len / factor;
    let mut sum = vec![0.0f64; n_codes * dim];
    let mut weight = vec![0.0f64; n_codes];
    let mut start = 0;
    while start + CODE_WINDOW_FRAMES <= padded_len {
        let c = student.encode_mag(&padded.slice_frames(start, CODE_WINDOW_FRAMES))?;
        let first = start / factor;
        for j in 0..per_window {
            let w = (j + 1).min(per_window - j) as f64;
            weight[first + j] += w;
            for (s, &v) in sum[(first + j) * dim..(first + j + 1) * dim].iter_mut().zip(c.code(j)) {
                *s += w * v as f64;
            }
        }
        start += code_hop * factor;
    }
    let mut values = Vec::with_capacity(n_codes * dim);
    for (k, row) in sum.chunks(dim).enumerate() {
        let avg: Vec<f64> = row.iter().map(|v| v / weight[k]).collect();
        // back onto the unit sphere the encoder produces
        let norm = avg.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        values.extend(avg.iter().map(|v| (v / norm) as f32));
    }
    Ok(ContentEmbedding::new(n_codes, dim, factor, values)?)
}

fn check_singer(mode: SeparationMode, singer: Option<usize>, n_singers: usize) -> Result<Option<SingerVector>, PipelineError> {
    match (mode, singer) {
        (SeparationMode::Sdn, None) => Err(PipelineError::Usage("sdn mode requires a singer id".into())),
        (SeparationMode::Sdn, Some(s)) if s >= n_singers => {
            Err(PipelineError::Usage(format!("singer {s} is out of range; the model knows {n_singers} singers")))
        }
        (SeparationMode::Sdn, Some(s)) => Ok(Some(SingerVector::new(s, n_singers))),
        (SeparationMode::Sin, _) => Ok(None),
    }
}

/// Decoder features for a mixture spectrogram, one row per input frame.
pub fn predict_features(
    m: &MagSpectrogram,
    mode: SeparationMode,
    singer: Option<usize>,
    models: &SeparationModels,
) -> Result<VocoderFeatures, PipelineError> {
    let s = check_singer(mode, singer, models.n_singers())?;
    let n = m.n_frames();
    let full = match mode {
        SeparationMode::Sin => {
            let dec = models.sin.as_ref().ok_or_else(|| SeparationModels::missing(Stage::Sin))?;
            let codes = windowed_codes(&models.student, m)?;
            dec.decode_features(&codes, &m.padded(codes.n_frames() - n))?
        }
        SeparationMode::Sdn => {
            let dec = models.sdn.as_ref().ok_or_else(|| SeparationModels::missing(Stage::Sdn))?;
            let codes = windowed_codes(&models.student, m)?;
            dec.decode_features(&codes, s.expect("checked above"))?
        }
    };
    Ok(full.slice_frames(0, n))
}

#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub vocal_clip: AudioClip,
    pub predicted_features: VocoderFeatures,
    pub predicted_f0: F0Contour,
    pub mode: SeparationMode,
    /// Present exactly when `mode` is [`SeparationMode::Sdn`].
    pub singer_id: Option<usize>,
}

/// Mixture in, synthesized vocal out. Never sees the clean vocal.
pub fn separate(
    mixture: &AudioClip,
    mode: SeparationMode,
    singer: Option<usize>,
    models: &SeparationModels,
) -> Result<SeparationResult, PipelineError> {
    check_singer(mode, singer, models.n_singers())?;
    let f0_net = models.f0.as_ref().ok_or_else(|| SeparationModels::missing(Stage::F0))?;
    if mode == SeparationMode::Sin && models.sin.is_none() {
        return Err(SeparationModels::missing(Stage::Sin));
    }
    if mode == SeparationMode::Sdn && models.sdn.is_none() {
        return Err(SeparationModels::missing(Stage::Sdn));
    }
    let m = stft_magnitude(mixture)?;
    let features = predict_features(&m, mode, singer, models)?;
    let cfg = models.config();
    let f0 = f0_net.predict(&m, cfg.f0_mode);
    let vocal_clip = vocoder_synthesize(&features, &f0, &cfg.f0_scale())?;
    Ok(SeparationResult {
        vocal_clip,
        predicted_features: features,
        predicted_f0: f0,
        mode,
        singer_id: if mode == SeparationMode::Sdn { singer } else { None },
    })
}
