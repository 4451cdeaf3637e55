//! The 64-wide vocoder feature frame: 60 frequency-warped cepstral
//! coefficients of the log-amplitude envelope followed by 4 band
//! aperiodicities stored as `0.5 * ln(ap)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::vocoder::{band_of_bin, PulseNoiseVocoder, VocoderBackend, VocoderParams, AP_FLOOR, ENV_BINS};
use super::{AudioClip, AudioError, F0Contour, F0Scale, FEATURE_DIM, N_BANDS, N_CEPSTRUM};

/// Row-major `n_frames x 64` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct VocoderFeatures {
    n_frames: usize,
    values: Vec<f32>,
}

impl VocoderFeatures {
    pub fn new(n_frames: usize, values: Vec<f32>) -> Result<Self, AudioError> {
        if n_frames == 0 && values.is_empty() {
            return Ok(Self { n_frames, values });
        }
        if values.len() != n_frames * FEATURE_DIM {
            return Err(AudioError::BadWidth { expected: FEATURE_DIM, found: values.len() / n_frames.max(1) });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self { n_frames, values })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        &self.values[k * FEATURE_DIM..(k + 1) * FEATURE_DIM]
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> VocoderFeatures {
        Self { n_frames: len, values: self.values[start * FEATURE_DIM..(start + len) * FEATURE_DIM].to_vec() }
    }

    /// Constant sequence repeating `row`.
    pub fn repeat(row: &[f32], n_frames: usize) -> Result<Self, AudioError> {
        if row.len() != FEATURE_DIM {
            return Err(AudioError::BadWidth { expected: FEATURE_DIM, found: row.len() });
        }
        Self::new(n_frames, row.repeat(n_frames))
    }
}

/// Linear maps between the envelope grid and the compressed layout.
#[derive(Debug)]
pub struct FeatureCodec {
    alpha: f64,
    /// `N_CEPSTRUM x ENV_BINS`
    encode: Vec<f64>,
    /// `ENV_BINS x N_CEPSTRUM`
    decode: Vec<f64>,
    band_bins: [usize; N_BANDS],
}

fn warp(w: f64, alpha: f64) -> f64 {
    w + 2.0 * (alpha * w.sin() / (1.0 - alpha * w.cos())).atan()
}

fn unwarp(w: f64, alpha: f64) -> f64 {
    w - 2.0 * (alpha * w.sin() / (1.0 + alpha * w.cos())).atan()
}

impl FeatureCodec {
    pub const ALPHA: f64 = 0.5;

    /// Shared codec with the pipeline's warping factor.
    pub fn standard() -> &'static FeatureCodec {
        static CODEC: OnceLock<FeatureCodec> = OnceLock::new();
        CODEC.get_or_init(|| FeatureCodec::new(Self::ALPHA))
    }

    pub fn new(alpha: f64) -> Self {
        let k = ENV_BINS;
        let last = (k - 1) as f64;
        let mut encode = vec![0.0; N_CEPSTRUM * ENV_BINS];
        for j in 0..k {
            let wt = PI * j as f64 / last;
            let pos = unwarp(wt, alpha) / PI * last;
            let i0 = (pos.floor() as usize).min(ENV_BINS - 2);
            let frac = pos - i0 as f64;
            let trap = if j == 0 || j == k - 1 { 0.5 } else { 1.0 };
            for m in 0..N_CEPSTRUM {
                let d = trap * (m as f64 * wt).cos() / last;
                encode[m * ENV_BINS + i0] += d * (1.0 - frac);
                encode[m * ENV_BINS + i0 + 1] += d * frac;
            }
        }
        let mut decode = vec![0.0; ENV_BINS * N_CEPSTRUM];
        for i in 0..ENV_BINS {
            let wt = warp(PI * i as f64 / last, alpha);
            decode[i * N_CEPSTRUM] = 1.0;
            for m in 1..N_CEPSTRUM {
                decode[i * N_CEPSTRUM + m] = 2.0 * (m as f64 * wt).cos();
            }
        }
        let mut band_bins = [0; N_BANDS];
        for i in 0..ENV_BINS {
            band_bins[band_of_bin(i)] += 1;
        }
        Self { alpha, encode, decode, band_bins }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Compresses one frame of power envelope and per-bin aperiodicity.
    pub fn encode_frame(&self, envelope: &[f64], aperiodicity: &[f64], out: &mut [f32]) {
        let log_amp: Vec<f64> = envelope.iter().map(|&p| 0.5 * p.max(1e-12).ln()).collect();
        for m in 0..N_CEPSTRUM {
            let row = &self.encode[m * ENV_BINS..(m + 1) * ENV_BINS];
            out[m] = row.iter().zip(&log_amp).map(|(a, b)| a * b).sum::<f64>() as f32;
        }
        let mut sums = [0.0; N_BANDS];
        for (i, &ap) in aperiodicity.iter().enumerate() {
            sums[band_of_bin(i)] += ap.clamp(AP_FLOOR, 1.0);
        }
        for b in 0..N_BANDS {
            out[N_CEPSTRUM + b] = (0.5 * (sums[b] / self.band_bins[b] as f64).ln()) as f32;
        }
    }

    /// Expands one frame into (power envelope, per-bin aperiodicity).
    pub fn decode_frame(&self, frame: &[f32], envelope: &mut [f64], aperiodicity: &mut [f64]) {
        let c: Vec<f64> = frame[..N_CEPSTRUM].iter().map(|&v| v as f64).collect();
        for i in 0..ENV_BINS {
            let row = &self.decode[i * N_CEPSTRUM..(i + 1) * N_CEPSTRUM];
            let log_amp: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            envelope[i] = (2.0 * log_amp.clamp(-40.0, 40.0)).exp();
            aperiodicity[i] = (2.0 * frame[N_CEPSTRUM + band_of_bin(i)] as f64).exp().clamp(0.0, 1.0);
        }
    }

    pub fn encode(&self, params: &VocoderParams) -> Result<VocoderFeatures, AudioError> {
        let n = params.n_frames();
        let mut values = vec![0.0f32; n * FEATURE_DIM];
        for k in 0..n {
            self.encode_frame(params.envelope_frame(k), params.aperiodicity_frame(k), &mut values[k * FEATURE_DIM..(k + 1) * FEATURE_DIM]);
        }
        VocoderFeatures::new(n, values)
    }

    pub fn decode(&self, feats: &VocoderFeatures, f0_hz: Vec<f64>) -> Result<VocoderParams, AudioError> {
        let n = feats.n_frames();
        if f0_hz.len() != n {
            return Err(AudioError::FrameMismatch { left: n, right: f0_hz.len() });
        }
        let mut envelope = vec![0.0; n * ENV_BINS];
        let mut aperiodicity = vec![0.0; n * ENV_BINS];
        for k in 0..n {
            let r = k * ENV_BINS..(k + 1) * ENV_BINS;
            self.decode_frame(feats.frame(k), &mut envelope[r.clone()], &mut aperiodicity[r]);
        }
        Ok(VocoderParams { f0_hz, envelope, aperiodicity })
    }
}

/// Analyzes a clip with the reference backend.
pub fn vocoder_analyze(clip: &AudioClip) -> Result<(VocoderFeatures, F0Contour), AudioError> {
    vocoder_analyze_with(clip, &PulseNoiseVocoder::default())
}

/// Analyzes a clip; the contour is returned in Hz.
pub fn vocoder_analyze_with(clip: &AudioClip, backend: &dyn VocoderBackend) -> Result<(VocoderFeatures, F0Contour), AudioError> {
    let params = backend.analyze(clip)?;
    let feats = FeatureCodec::standard().encode(&params)?;
    Ok((feats, F0Contour::Hz(params.f0_hz)))
}

/// Synthesizes with the reference backend. `scale` converts normalized or
/// quantized contours back to Hz.
pub fn vocoder_synthesize(feats: &VocoderFeatures, f0: &F0Contour, scale: &F0Scale) -> Result<AudioClip, AudioError> {
    vocoder_synthesize_with(feats, f0, scale, &PulseNoiseVocoder::default())
}

pub fn vocoder_synthesize_with(
    feats: &VocoderFeatures,
    f0: &F0Contour,
    scale: &F0Scale,
    backend: &dyn VocoderBackend,
) -> Result<AudioClip, AudioError> {
    if f0.len() != feats.n_frames() {
        return Err(AudioError::FrameMismatch { left: feats.n_frames(), right: f0.len() });
    }
    let params = FeatureCodec::standard().decode(feats, f0.to_hz(scale))?;
    backend.synthesize(&params)
}
