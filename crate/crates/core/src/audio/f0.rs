use serde::{Deserialize, Serialize};

use super::AudioError;

/// Default number of voiced classes for the discrete representation.
pub const DEFAULT_F0_BINS: usize = 255;

/// Log-frequency range used to normalize and quantize F0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Scale {
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for F0Scale {
    /// C2 to C6.
    fn default() -> Self {
        Self { fmin: 65.4, fmax: 1046.5 }
    }
}

impl F0Scale {
    pub fn new(fmin: f64, fmax: f64) -> Result<Self, AudioError> {
        if !(fmin > 0.0) || !(fmax > fmin) || !fmax.is_finite() {
            return Err(AudioError::InvalidF0Range { fmin, fmax });
        }
        Ok(Self { fmin, fmax })
    }

    fn log_span(&self) -> f64 {
        (self.fmax / self.fmin).ln()
    }

    /// Position of `hz` on the log axis, clipped to [0, 1].
    pub fn normalize(&self, hz: f64) -> f64 {
        ((hz / self.fmin).ln() / self.log_span()).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        self.fmin * (value * self.log_span()).exp()
    }
}

/// Nearest-center quantizer over `n_bins` log-spaced centers spanning
/// `[fmin, fmax]`. Class 0 is unvoiced; classes `1..=n_bins` are voiced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F0Quantizer {
    scale: F0Scale,
    n_bins: usize,
}

impl F0Quantizer {
    pub fn new(scale: F0Scale, n_bins: usize) -> Result<Self, AudioError> {
        if n_bins < 2 {
            return Err(AudioError::TooFewBins(n_bins));
        }
        Ok(Self { scale, n_bins })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Number of classes including the unvoiced class.
    pub fn n_classes(&self) -> usize {
        self.n_bins + 1
    }

    /// Distance between adjacent centers in cents.
    pub fn bin_width_cents(&self) -> f64 {
        1200.0 * (self.scale.fmax / self.scale.fmin).log2() / (self.n_bins - 1) as f64
    }

    pub fn center_hz(&self, class: usize) -> f64 {
        assert!((1..=self.n_bins).contains(&class), "class {class} is not a voiced class");
        self.scale.denormalize((class - 1) as f64 / (self.n_bins - 1) as f64)
    }

    pub fn quantize(&self, hz: f64) -> usize {
        if !(hz > 0.0) {
            return 0;
        }
        let pos = self.scale.normalize(hz) * (self.n_bins - 1) as f64;
        1 + pos.round() as usize
    }

    pub fn dequantize(&self, class: usize) -> f64 {
        if class == 0 {
            0.0
        } else {
            self.center_hz(class)
        }
    }
}

/// Per-frame pitch in one of three representations.
#[derive(Clone, Debug, PartialEq)]
pub enum F0Contour {
    /// Frequency in Hz; `0.0` marks an unvoiced frame.
    Hz(Vec<f64>),
    /// Log-normalized value in [0, 1] with a voicing flag. Unvoiced frames
    /// carry the value 0.
    Continuous { values: Vec<f64>, voiced: Vec<bool> },
    /// Class index; 0 is unvoiced.
    Discrete { classes: Vec<usize>, n_bins: usize },
}

impl F0Contour {
    pub fn len(&self) -> usize {
        match self {
            F0Contour::Hz(v) => v.len(),
            F0Contour::Continuous { values, .. } => values.len(),
            F0Contour::Discrete { classes, .. } => classes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voiced(&self) -> Vec<bool> {
        match self {
            F0Contour::Hz(v) => v.iter().map(|&f| f > 0.0).collect(),
            F0Contour::Continuous { voiced, .. } => voiced.clone(),
            F0Contour::Discrete { classes, .. } => classes.iter().map(|&c| c > 0).collect(),
        }
    }

    /// Converts any representation to Hz (0 for unvoiced).
    pub fn to_hz(&self, scale: &F0Scale) -> Vec<f64> {
        match self {
            F0Contour::Hz(v) => v.clone(),
            F0Contour::Continuous { values, voiced } => values
                .iter()
                .zip(voiced)
                .map(|(&v, &on)| if on { scale.denormalize(v) } else { 0.0 })
                .collect(),
            F0Contour::Discrete { classes, n_bins } => {
                let q = F0Quantizer { scale: *scale, n_bins: *n_bins };
                classes.iter().map(|&c| q.dequantize(c)).collect()
            }
        }
    }
}

/// Continuous representation: `(ln f0 - ln fmin) / (ln fmax - ln fmin)`,
/// clipped to [0, 1]; non-positive input frames are unvoiced.
pub fn f0_normalize(f0_hz: &[f64], fmin: f64, fmax: f64) -> Result<F0Contour, AudioError> {
    let scale = F0Scale::new(fmin, fmax)?;
    let voiced: Vec<bool> = f0_hz.iter().map(|&f| f > 0.0).collect();
    let values = f0_hz.iter().zip(&voiced).map(|(&f, &on)| if on { scale.normalize(f) } else { 0.0 }).collect();
    Ok(F0Contour::Continuous { values, voiced })
}

/// Discrete representation with `n_bins` voiced classes over `scale`.
pub fn f0_quantize(f0_hz: &[f64], n_bins: usize, scale: &F0Scale) -> Result<F0Contour, AudioError> {
    let scale = F0Scale::new(scale.fmin, scale.fmax)?;
    let q = F0Quantizer::new(scale, n_bins)?;
    Ok(F0Contour::Discrete { classes: f0_hz.iter().map(|&f| q.quantize(f)).collect(), n_bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FMIN: f64 = 65.4;
    const FMAX: f64 = 1046.5;

    fn values(c: &F0Contour) -> (Vec<f64>, Vec<bool>) {
        match c {
            F0Contour::Continuous { values, voiced } => (values.clone(), voiced.clone()),
            _ => panic!("expected continuous contour"),
        }
    }

    #[test]
    fn endpoints_and_log_midpoint() {
        let mid = (FMIN * FMAX).sqrt();
        let (v, on) = values(&f0_normalize(&[FMIN, FMAX, mid, 0.0], FMIN, FMAX).unwrap());
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 0.5).abs() < 1e-12);
        assert_eq!((v[3], on[3]), (0.0, false));
        assert_eq!(&on[..3], &[true, true, true]);
    }

    #[test]
    fn out_of_range_values_are_clipped() {
        let (v, _) = values(&f0_normalize(&[20.0, 5000.0], FMIN, FMAX).unwrap());
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(matches!(f0_normalize(&[100.0], 0.0, 500.0), Err(AudioError::InvalidF0Range { .. })));
        assert!(matches!(f0_normalize(&[100.0], -3.0, 500.0), Err(AudioError::InvalidF0Range { .. })));
        assert!(matches!(f0_normalize(&[100.0], 500.0, 100.0), Err(AudioError::InvalidF0Range { .. })));
        assert!(matches!(f0_quantize(&[100.0], 1, &F0Scale::default()), Err(AudioError::TooFewBins(1))));
    }

    #[test]
    fn bin_centers_quantize_to_themselves() {
        let q = F0Quantizer::new(F0Scale::default(), DEFAULT_F0_BINS).unwrap();
        for class in 1..=DEFAULT_F0_BINS {
            assert_eq!(q.quantize(q.center_hz(class)), class);
        }
        assert_eq!(q.quantize(0.0), 0);
        assert_eq!(q.quantize(-1.0), 0);
        assert_eq!(q.n_classes(), 256);
    }

    #[test]
    fn quantization_error_sweep_stays_within_half_a_bin() {
        let scale = F0Scale::default();
        let q = F0Quantizer::new(scale, DEFAULT_F0_BINS).unwrap();
        let half = q.bin_width_cents() / 2.0;
        let mut worst: f64 = 0.0;
        let steps = 20_000;
        for i in 0..=steps {
            let f = scale.denormalize(i as f64 / steps as f64);
            let err = 1200.0 * (q.dequantize(q.quantize(f)) / f).log2().abs();
            worst = worst.max(err);
        }
        assert!(worst <= half + 1e-9, "worst {worst} cents > {half}");
        // sampled sweep gets close to the bound
        assert!(worst > 0.9 * half);
    }

    #[test]
    fn representations_convert_back_to_hz() {
        let scale = F0Scale::default();
        let hz = vec![0.0, 110.0, 220.0, 440.0];
        let cont = f0_normalize(&hz, scale.fmin, scale.fmax).unwrap();
        for (a, b) in cont.to_hz(&scale).iter().zip(&hz) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        let disc = f0_quantize(&hz, 255, &scale).unwrap();
        assert_eq!(disc.voiced(), vec![false, true, true, true]);
        assert_eq!(disc.to_hz(&scale)[0], 0.0);
    }

    proptest! {
        #[test]
        fn normalize_inverts_on_voiced_frames(f in 65.4f64..1046.5) {
            let scale = F0Scale::default();
            let back = scale.denormalize(scale.normalize(f));
            prop_assert!(((back - f) / f).abs() < 1e-9);
        }
    }
}
