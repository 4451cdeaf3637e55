use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::audio::EXCERPT_FRAMES;
use crate::dataset::{GainRange, MixDomain};
use crate::networks::{NetworkConfig, Stage};

/// Optimization and early-stopping settings for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_content: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub excerpt_frames: usize,
    pub max_steps: usize,
    /// Steps between validation checks.
    pub validate_every: usize,
    /// Checks without improvement before stopping.
    pub patience: usize,
    pub val_batches: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub gain_range: [f32; 2],
    pub mix_domain: MixDomain,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_content: 1.0,
            learning_rate: 1e-4,
            batch_size: 30,
            excerpt_frames: EXCERPT_FRAMES,
            max_steps: 100_000,
            validate_every: 500,
            patience: 10,
            val_batches: 4,
            grad_clip: 5.0,
            gain_range: [0.5, 1.2],
            mix_domain: MixDomain::Magnitude,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if !(self.lambda_content >= 0.0 && self.lambda_content.is_finite()) {
            return bad(format!("lambda_content must be >= 0, got {}", self.lambda_content));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.patience == 0 || self.validate_every == 0 || self.val_batches == 0 {
            return bad("batch_size, patience, validate_every and val_batches must be at least 1".into());
        }
        if self.excerpt_frames != EXCERPT_FRAMES {
            return bad(format!("excerpt_frames is fixed at {EXCERPT_FRAMES}, got {}", self.excerpt_frames));
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be >= 0".into());
        }
        self.gains()?;
        Ok(())
    }

    pub fn gains(&self) -> Result<GainRange, TrainingError> {
        GainRange::new(self.gain_range[0], self.gain_range[1]).map_err(TrainingError::from)
    }
}

/// Per-stage overrides layered on top of the shared [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverrides {
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    pub validate_every: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
}

/// Contents of a project config file: network architecture, shared training
/// settings and optional per-stage overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub stages: BTreeMap<String, StageOverrides>,
}

impl ProjectConfig {
    /// Widths and schedules small enough for a single CPU core on the
    /// synthetic corpus (about twenty minutes for all five stages).
    pub fn desk() -> Self {
        let plan = |max_steps, validate_every, learning_rate| StageOverrides {
            learning_rate,
            max_steps: Some(max_steps),
            validate_every: Some(validate_every),
            ..StageOverrides::default()
        };
        let stages = BTreeMap::from([
            (Stage::Teacher.as_str().to_string(), plan(300, 50, None)),
            (Stage::StudentEncoder.as_str().to_string(), plan(1000, 100, None)),
            (Stage::Sdn.as_str().to_string(), plan(400, 50, None)),
            (Stage::Sin.as_str().to_string(), plan(300, 50, None)),
            // the pitch heads overshoot at the shared rate
            (Stage::F0.as_str().to_string(), plan(1500, 150, Some(3e-4))),
        ]);
        Self { network: NetworkConfig::desk(), train: TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() }, stages }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, TrainingError> {
        let cfg: Self = toml::from_str(s).map_err(|e| TrainingError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        self.network.validate()?;
        self.train.validate()?;
        for (name, _) in &self.stages {
            name.parse::<Stage>().map_err(TrainingError::Config)?;
        }
        for stage in crate::networks::Stage::ALL {
            self.for_stage(stage).validate()?;
        }
        Ok(())
    }

    /// The shared settings with this stage's overrides applied.
    pub fn for_stage(&self, stage: Stage) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(o) = self.stages.get(stage.as_str()) {
            t.learning_rate = o.learning_rate.unwrap_or(t.learning_rate);
            t.max_steps = o.max_steps.unwrap_or(t.max_steps);
            t.validate_every = o.validate_every.unwrap_or(t.validate_every);
            t.patience = o.patience.unwrap_or(t.patience);
            t.batch_size = o.batch_size.unwrap_or(t.batch_size);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        ProjectConfig::default().validate().unwrap();
        ProjectConfig::desk().validate().unwrap();
        assert_eq!(TrainConfig::default().lambda_content, 1.0);
        assert_eq!(TrainConfig::default().batch_size, 30);
    }

    #[test]
    fn toml_with_overrides() {
        let text = r#"
            [network]
            encoder_width = 64
            [train]
            seed = 7
            [stages.teacher]
            max_steps = 300
        "#;
        let cfg = ProjectConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.network.encoder_width, 64);
        assert_eq!(cfg.for_stage(Stage::Teacher).max_steps, 300);
        assert_eq!(cfg.for_stage(Stage::Sin).max_steps, TrainConfig::default().max_steps);
        assert_eq!(ProjectConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(ProjectConfig::from_toml_str("[train]\npatience = 0").is_err());
        assert!(ProjectConfig::from_toml_str("[train]\nlambda_content = -1.0").is_err());
        assert!(ProjectConfig::from_toml_str("[stages.vocoder]\nmax_steps = 1").is_err());
        assert!(ProjectConfig::from_toml_str("[train]\nbogus = 1").is_err());
    }
}
