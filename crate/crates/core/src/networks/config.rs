use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::audio::{EXCERPT_FRAMES, F0Scale, DEFAULT_F0_BINS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F0Mode {
    #[default]
    Continuous,
    Discrete,
}

impl std::str::FromStr for F0Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(F0Mode::Continuous),
            "discrete" => Ok(F0Mode::Discrete),
            other => Err(format!("unknown F0 mode '{other}' (continuous|discrete)")),
        }
    }
}

/// Architecture hyper-parameters. Every checkpoint echoes the config it was
/// trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub code_dim: usize,
    pub downsample_factor: usize,
    pub kernel: usize,
    pub encoder_conv_layers: usize,
    pub encoder_width: usize,
    pub decoder_conv_layers: usize,
    pub decoder_width: usize,
    pub decoder_lstm_width: usize,
    pub postnet_layers: usize,
    pub postnet_width: usize,
    /// Width of the spectrogram projection fed to the singer-independent
    /// decoder.
    pub mix_cond_width: usize,
    pub f0_layers: usize,
    pub f0_width: usize,
    pub f0_mode: F0Mode,
    pub f0_bins: usize,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            code_dim: 64,
            downsample_factor: 16,
            kernel: 5,
            encoder_conv_layers: 3,
            encoder_width: 512,
            decoder_conv_layers: 3,
            decoder_width: 512,
            decoder_lstm_width: 512,
            postnet_layers: 3,
            postnet_width: 256,
            mix_cond_width: 128,
            f0_layers: 6,
            f0_width: 256,
            f0_mode: F0Mode::Continuous,
            f0_bins: DEFAULT_F0_BINS,
            f0_min_hz: 65.4,
            f0_max_hz: 1046.5,
        }
    }
}

impl NetworkConfig {
    /// Narrow variant sized for single-core training on the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            encoder_width: 128,
            decoder_width: 128,
            decoder_lstm_width: 128,
            postnet_width: 64,
            mix_cond_width: 64,
            f0_width: 96,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let err = |m: &str| Err(NetworkError::Config(m.to_string()));
        if self.code_dim == 0 || self.code_dim % 2 != 0 {
            return err("code_dim must be even and positive (half per direction)");
        }
        if self.downsample_factor == 0 || EXCERPT_FRAMES % self.downsample_factor != 0 {
            return err("downsample_factor must divide 128");
        }
        if self.kernel % 2 == 0 {
            return err("kernel must be odd");
        }
        let widths = [
            self.encoder_width,
            self.decoder_width,
            self.decoder_lstm_width,
            self.postnet_width,
            self.mix_cond_width,
            self.f0_width,
        ];
        if widths.contains(&0) || self.encoder_conv_layers == 0 || self.f0_layers == 0 {
            return err("layer widths and counts must be positive");
        }
        if self.f0_bins < 2 {
            return err("f0_bins must be at least 2");
        }
        F0Scale::new(self.f0_min_hz, self.f0_max_hz).map_err(|e| NetworkError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn f0_scale(&self) -> F0Scale {
        F0Scale::new(self.f0_min_hz, self.f0_max_hz).expect("validated config")
    }
}
