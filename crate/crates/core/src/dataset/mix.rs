//! Two-source mixtures with per-source gains.

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::audio::MagSpectrogram;

/// Where training mixtures are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixDomain {
    /// `g_v * |V| + g_b * |B|` on magnitude spectrograms.
    #[default]
    Magnitude,
    /// Sum the waveforms, then take the STFT magnitude.
    Waveform,
}

fn check_gains(g_v: f32, g_b: f32) -> Result<(), DatasetError> {
    if !(g_v >= 0.0 && g_b >= 0.0 && g_v.is_finite() && g_b.is_finite()) {
        return Err(DatasetError::BadGainRange { lo: g_v.min(g_b) as f64, hi: g_v.max(g_b) as f64 });
    }
    Ok(())
}

pub fn mix_with_gains(vocal: &MagSpectrogram, backing: &MagSpectrogram, g_v: f32, g_b: f32) -> Result<MagSpectrogram, DatasetError> {
    check_gains(g_v, g_b)?;
    if vocal.n_frames() != backing.n_frames() {
        return Err(DatasetError::Shape(format!("vocal has {} frames, backing {}", vocal.n_frames(), backing.n_frames())));
    }
    let values = vocal.values().iter().zip(backing.values()).map(|(&v, &b)| g_v * v + g_b * b).collect();
    Ok(MagSpectrogram::new(vocal.n_frames(), values).expect("same shape as the inputs"))
}

pub fn mix_waveforms(vocal: &[f32], backing: &[f32], g_v: f32, g_b: f32) -> Result<Vec<f32>, DatasetError> {
    check_gains(g_v, g_b)?;
    if vocal.len() != backing.len() {
        return Err(DatasetError::Shape(format!("vocal has {} samples, backing {}", vocal.len(), backing.len())));
    }
    Ok(vocal.iter().zip(backing).map(|(&v, &b)| g_v * v + g_b * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::N_BINS;

    fn mag(seed: f32, frames: usize) -> MagSpectrogram {
        MagSpectrogram::new(frames, (0..frames * N_BINS).map(|i| (i as f32 * 0.37 + seed).sin().abs()).collect()).unwrap()
    }

    #[test]
    fn identity_gains() {
        let (v, b) = (mag(0.1, 2), mag(2.0, 2));
        assert_eq!(mix_with_gains(&v, &b, 1.0, 0.0).unwrap(), v);
        assert_eq!(mix_with_gains(&v, &b, 0.0, 1.0).unwrap(), b);
    }

    #[test]
    fn hand_computed_combination() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.5, 0.0, 8.0, 2.0];
        // 2a + 0.5b
        let expected = [2.25, 4.0, 10.0, 9.0];
        let pad = |x: &[f32]| {
            let mut v = vec![0.0; 2 * N_BINS];
            v[0] = x[0];
            v[1] = x[1];
            v[N_BINS] = x[2];
            v[N_BINS + 1] = x[3];
            MagSpectrogram::new(2, v).unwrap()
        };
        let m = mix_with_gains(&pad(&a), &pad(&b), 2.0, 0.5).unwrap();
        assert_eq!([m.values()[0], m.values()[1], m.values()[N_BINS], m.values()[N_BINS + 1]], expected);
    }

    #[test]
    fn mismatch_and_negative_gain() {
        assert!(matches!(mix_with_gains(&mag(0.0, 2), &mag(0.0, 3), 1.0, 1.0), Err(DatasetError::Shape(_))));
        assert!(mix_with_gains(&mag(0.0, 2), &mag(0.0, 2), -1.0, 1.0).is_err());
        assert!(mix_waveforms(&[0.0; 3], &[0.0; 4], 1.0, 1.0).is_err());
        assert_eq!(mix_waveforms(&[1.0, 2.0], &[4.0, -2.0], 1.0, 0.5).unwrap(), vec![3.0, 1.0]);
    }
}
