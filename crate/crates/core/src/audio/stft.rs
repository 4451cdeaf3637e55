use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{frame_count, AudioClip, AudioError, HOP, N_BINS, WINDOW};

/// Per-frame STFT magnitudes, `n_frames x 513`, all entries non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct MagSpectrogram {
    n_frames: usize,
    values: Vec<f32>,
}

impl MagSpectrogram {
    pub fn new(n_frames: usize, values: Vec<f32>) -> Result<Self, AudioError> {
        if values.len() != n_frames * N_BINS {
            return Err(AudioError::BadWidth { expected: n_frames * N_BINS, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AudioError::Invalid("magnitudes must be finite and non-negative".into()));
        }
        Ok(Self { n_frames, values })
    }

    pub fn zeros(n_frames: usize) -> Self {
        Self { n_frames, values: vec![0.0; n_frames * N_BINS] }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        N_BINS
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        &self.values[k * N_BINS..(k + 1) * N_BINS]
    }

    /// Frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> MagSpectrogram {
        Self { n_frames: len, values: self.values[start * N_BINS..(start + len) * N_BINS].to_vec() }
    }

    /// Appends `extra` all-zero frames.
    pub fn padded(&self, extra: usize) -> MagSpectrogram {
        let mut values = self.values.clone();
        values.resize((self.n_frames + extra) * N_BINS, 0.0);
        Self { n_frames: self.n_frames + extra, values }
    }
}

/// Periodic Hann window.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Maps any integer position onto `0..n` by mirror reflection about the
/// first and last samples (the edge sample is not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Magnitude STFT on the 5 ms grid.
///
/// Frame `k` covers samples `k*160 .. k*160 + 1024`; samples past the end of
/// the clip are reflect-padded, so the frame count is `floor(N / 160)`.
pub fn stft_magnitude(clip: &AudioClip) -> Result<MagSpectrogram, AudioError> {
    clip.require_pipeline_rate()?;
    let n = clip.len();
    if n < HOP {
        return Err(AudioError::TooShort { samples: n, min: HOP });
    }
    let x = clip.samples();
    let n_frames = frame_count(n);
    let window = hann_periodic(WINDOW);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(WINDOW);
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(n_frames * N_BINS);
    for k in 0..n_frames {
        let start = k * HOP;
        for (j, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            let idx = start + j;
            let s = if idx < n { x[idx] } else { x[reflect_index(idx as isize, n)] };
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..N_BINS].iter().map(|c| c.norm() as f32));
    }
    Ok(MagSpectrogram { n_frames, values })
}
