use super::{AudioError, SAMPLE_RATE};

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Rejects non-finite samples.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self { samples, sample_rate })
    }

    /// A clip at the pipeline rate. Samples are clamped into [-1, 1].
    pub fn at_pipeline_rate(mut samples: Vec<f32>) -> Result<Self, AudioError> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        samples.iter_mut().for_each(|s| *s = s.clamp(-1.0, 1.0));
        Ok(Self { samples, sample_rate: SAMPLE_RATE })
    }

    pub fn silence(n_samples: usize) -> Self {
        Self { samples: vec![0.0; n_samples], sample_rate: SAMPLE_RATE }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let s: f64 = self.samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
        (s / self.samples.len() as f64).sqrt()
    }

    pub(crate) fn require_pipeline_rate(&self) -> Result<(), AudioError> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(AudioError::WrongSampleRate { expected: SAMPLE_RATE, found: self.sample_rate });
        }
        Ok(())
    }
}
