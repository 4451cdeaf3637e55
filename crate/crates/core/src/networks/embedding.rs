use super::NetworkError;

/// Temporally downsampled code sequence, `[n_codes x code_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentEmbedding {
    n_codes: usize,
    code_dim: usize,
    downsample_factor: usize,
    values: Vec<f32>,
}

impl ContentEmbedding {
    pub fn new(n_codes: usize, code_dim: usize, downsample_factor: usize, values: Vec<f32>) -> Result<Self, NetworkError> {
        if values.len() != n_codes * code_dim {
            return Err(NetworkError::BadWidth { expected: code_dim, found: values.len() / n_codes.max(1) });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NetworkError::Config("embedding contains non-finite values".into()));
        }
        Ok(Self { n_codes, code_dim, downsample_factor, values })
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn downsample_factor(&self) -> usize {
        self.downsample_factor
    }

    /// Frames covered by the codes.
    pub fn n_frames(&self) -> usize {
        self.n_codes * self.downsample_factor
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn code(&self, i: usize) -> &[f32] {
        &self.values[i * self.code_dim..(i + 1) * self.code_dim]
    }

    /// Mean absolute difference to another embedding of the same shape.
    pub fn l1_distance(&self, other: &ContentEmbedding) -> Result<f64, NetworkError> {
        if self.values.len() != other.values.len() {
            return Err(NetworkError::FrameMismatch { codes: self.n_frames(), frames: other.n_frames() });
        }
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs() as f64).sum();
        Ok(s / self.values.len().max(1) as f64)
    }
}
