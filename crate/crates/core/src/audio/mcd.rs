//! Mel-cepstral distortion between two feature sequences on a shared grid.

use super::{AudioError, VocoderFeatures, N_CEPSTRUM};

/// `10 / ln 10`.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

/// Per-frame distortion in dB over cepstral dims `1..60` (dim 0 is energy).
pub fn mcd_frames(reference: &VocoderFeatures, estimate: &VocoderFeatures) -> Result<Vec<f64>, AudioError> {
    if reference.n_frames() != estimate.n_frames() {
        return Err(AudioError::FrameMismatch { left: reference.n_frames(), right: estimate.n_frames() });
    }
    Ok((0..reference.n_frames())
        .map(|k| {
            let (a, b) = (reference.frame(k), estimate.frame(k));
            let sum: f64 = (1..N_CEPSTRUM).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum();
            MCD_SCALE * (2.0 * sum).sqrt()
        })
        .collect())
}

/// Mean and population standard deviation of the per-frame distortion.
pub fn mcd(reference: &VocoderFeatures, estimate: &VocoderFeatures) -> Result<(f64, f64), AudioError> {
    let d = mcd_frames(reference, estimate)?;
    if d.is_empty() {
        return Err(AudioError::Invalid("MCD of an empty sequence".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FEATURE_DIM;
    use proptest::prelude::*;

    fn feats(rows: Vec<[f32; FEATURE_DIM]>) -> VocoderFeatures {
        let n = rows.len();
        VocoderFeatures::new(n, rows.concat()).unwrap()
    }

    #[test]
    fn identical_is_exactly_zero() {
        let a = feats(vec![[0.3; FEATURE_DIM]; 5]);
        assert_eq!(mcd(&a, &a).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn unit_difference_in_one_dim() {
        let a = feats(vec![[0.0; FEATURE_DIM]]);
        let mut row = [0.0; FEATURE_DIM];
        row[7] = 1.0;
        let (m, s) = mcd(&a, &feats(vec![row])).unwrap();
        assert!((m - 6.1421).abs() < 1e-3, "{m}");
        assert_eq!(s, 0.0);
    }

    #[test]
    fn energy_and_aperiodicity_are_ignored() {
        let a = feats(vec![[0.0; FEATURE_DIM]]);
        let mut row = [0.0; FEATURE_DIM];
        row[0] = 5.0;
        row[62] = -3.0;
        assert_eq!(mcd(&a, &feats(vec![row])).unwrap().0, 0.0);
    }

    #[test]
    fn mismatch_errors() {
        let a = feats(vec![[0.0; FEATURE_DIM]; 2]);
        let b = feats(vec![[0.0; FEATURE_DIM]; 3]);
        assert!(matches!(mcd(&a, &b), Err(AudioError::FrameMismatch { .. })));
    }

    proptest! {
        #[test]
        fn symmetric_and_zero_iff_equal(v in prop::collection::vec(-2.0f32..2.0, FEATURE_DIM * 3), w in prop::collection::vec(-2.0f32..2.0, FEATURE_DIM * 3)) {
            let a = VocoderFeatures::new(3, v).unwrap();
            let b = VocoderFeatures::new(3, w).unwrap();
            prop_assert_eq!(mcd(&a, &b).unwrap(), mcd(&b, &a).unwrap());
            let differs = (0..3).any(|k| (1..N_CEPSTRUM).any(|i| a.frame(k)[i] != b.frame(k)[i]));
            prop_assert_eq!(mcd(&a, &b).unwrap().0 > 0.0, differs);
        }
    }
}
