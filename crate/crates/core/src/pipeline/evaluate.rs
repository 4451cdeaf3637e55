use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predict_features, PipelineError, SeparationMode, SeparationModels};
use crate::audio::{mcd, stft_magnitude, AudioClip, VocoderFeatures, FEATURE_DIM};
use crate::dataset::{load_song, mix_waveforms, DatasetManifest, Split};
use crate::networks::Stage;

/// What produces the estimated features for a track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    Sin,
    Sdn,
    /// Every frame set to the mean training feature vector.
    Mean,
    /// The reference itself; scores 0 by definition.
    Oracle,
}

impl EvalModel {
    pub fn tag(self) -> &'static str {
        match self {
            EvalModel::Sin => "sin",
            EvalModel::Sdn => "sdn",
            EvalModel::Mean => "mean",
            EvalModel::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for EvalModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sin" => Ok(EvalModel::Sin),
            "sdn" => Ok(EvalModel::Sdn),
            "mean" => Ok(EvalModel::Mean),
            "oracle" => Ok(EvalModel::Oracle),
            _ => Err(format!("unknown model '{s}' (expected sin, sdn, mean or oracle)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackScore {
    pub track_id: String,
    pub model_tag: String,
    pub mcd_mean_db: f64,
    pub mcd_std_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrack {
    pub track_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model_tag: String,
    /// Mean of the per-track means.
    pub mcd_mean_db: f64,
    /// Population std of the per-track means.
    pub mcd_std_db: f64,
    pub n_tracks: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tracks: Vec<TrackScore>,
    pub skipped: Vec<SkippedTrack>,
}

impl EvalReport {
    /// Model tags in order of first appearance.
    pub fn model_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for t in &self.tracks {
            if !tags.contains(&t.model_tag) {
                tags.push(t.model_tag.clone());
            }
        }
        tags
    }

    pub fn aggregate(&self, tag: &str) -> Option<ModelAggregate> {
        let means: Vec<f64> = self.tracks.iter().filter(|t| t.model_tag == tag).map(|t| t.mcd_mean_db).collect();
        if means.is_empty() {
            return None;
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let std = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(ModelAggregate { model_tag: tag.to_string(), mcd_mean_db: mean, mcd_std_db: std, n_tracks: means.len() })
    }

    pub fn aggregates(&self) -> Vec<ModelAggregate> {
        self.model_tags().iter().filter_map(|t| self.aggregate(t)).collect()
    }

    /// Summary table (`model`, mean, std) followed by the per-track rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tmcd_mean_db\tmcd_std_db\tn_tracks\n");
        for a in self.aggregates() {
            let _ = writeln!(out, "{}\t{:.4}\t{:.4}\t{}", a.model_tag, a.mcd_mean_db, a.mcd_std_db, a.n_tracks);
        }
        out.push_str("\ntrack_id\tmodel\tmcd_mean_db\tmcd_std_db\n");
        for t in &self.tracks {
            let _ = writeln!(out, "{}\t{}\t{:.4}\t{:.4}", t.track_id, t.model_tag, t.mcd_mean_db, t.mcd_std_db);
        }
        for s in &self.skipped {
            let _ = writeln!(out, "{}\tskipped\t\t{}", s.track_id, s.reason);
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |kind: &str, v: serde_json::Value| {
            let mut v = v;
            v["kind"] = serde_json::Value::String(kind.into());
            out.push_str(&v.to_string());
            out.push('\n');
        };
        for t in &self.tracks {
            line("track", serde_json::to_value(t).expect("serializes"));
        }
        for s in &self.skipped {
            line("skipped", serde_json::to_value(s).expect("serializes"));
        }
        for a in self.aggregates() {
            line("aggregate", serde_json::to_value(&a).expect("serializes"));
        }
        out
    }

    /// Writes `<stem>.tsv` and `<stem>.jsonl`.
    pub fn write(&self, stem: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(stem.with_extension("tsv"), self.to_tsv())?;
        std::fs::write(stem.with_extension("jsonl"), self.to_jsonl())?;
        Ok(())
    }
}

/// Mean training feature vector, read from a decoder's fitted feature
/// statistics.
pub fn mean_feature_baseline(models: &SeparationModels) -> Option<Vec<f32>> {
    let from = |m: &[f32]| m.to_vec();
    models
        .sin
        .as_ref()
        .map(|d| from(d.x_scaler.mean(&d.store)))
        .or_else(|| models.sdn.as_ref().map(|d| from(d.x_scaler.mean(&d.store))))
}

/// Scores every test track of `manifest`. References are the analysis
/// features of the clean vocal; estimates come straight from the decoder,
/// run on the unit-gain waveform mixture. Unreadable tracks are skipped and
/// listed in the report.
pub fn evaluate_mcd(
    manifest: &DatasetManifest,
    models: &SeparationModels,
    eval_models: &[EvalModel],
    cache_dir: Option<&Path>,
) -> Result<EvalReport, PipelineError> {
    let baseline = if eval_models.contains(&EvalModel::Mean) {
        Some(mean_feature_baseline(models).ok_or(PipelineError::MissingCheckpoint { stage: Stage::Sin, path: "(not loaded)".into() })?)
    } else {
        None
    };
    let mut report = EvalReport::default();
    for entry in manifest.split(Split::Test) {
        let song = match load_song(manifest, entry, cache_dir) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.song_id);
                report.skipped.push(SkippedTrack { track_id: entry.song_id.clone(), reason: e.to_string() });
                continue;
            }
        };
        let reference = &song.features;
        let mixture = AudioClip::at_pipeline_rate(mix_waveforms(&song.vocal, &song.backing, 1.0, 1.0)?)?;
        let m = stft_magnitude(&mixture)?;
        for &em in eval_models {
            let estimate = match em {
                EvalModel::Sin => predict_features(&m, SeparationMode::Sin, None, models)?,
                EvalModel::Sdn => predict_features(&m, SeparationMode::Sdn, Some(song.singer), models)?,
                EvalModel::Mean => VocoderFeatures::repeat(baseline.as_deref().expect("loaded above"), reference.n_frames())?,
                EvalModel::Oracle => reference.clone(),
            };
            debug_assert_eq!(estimate.values().len(), reference.n_frames() * FEATURE_DIM);
            let (mean, std) = mcd(reference, &estimate)?;
            report.tracks.push(TrackScore { track_id: song.song_id.clone(), model_tag: em.tag().into(), mcd_mean_db: mean, mcd_std_db: std });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(track: &str, tag: &str, mean: f64) -> TrackScore {
        TrackScore { track_id: track.into(), model_tag: tag.into(), mcd_mean_db: mean, mcd_std_db: 0.5 }
    }

    #[test]
    fn aggregate_mean_is_mean_of_track_means() {
        let r = EvalReport { tracks: vec![score("a", "sin", 4.0), score("b", "sin", 6.0), score("a", "mean", 9.0)], skipped: vec![] };
        let a = r.aggregate("sin").unwrap();
        assert_eq!(a.mcd_mean_db, 5.0);
        assert_eq!(a.mcd_std_db, 1.0);
        assert_eq!(a.n_tracks, 2);
        assert_eq!(r.model_tags(), vec!["sin", "mean"]);
        assert!(r.aggregate("sdn").is_none());
    }

    #[test]
    fn tsv_and_jsonl_layout() {
        let r = EvalReport {
            tracks: vec![score("a", "sin", 4.0)],
            skipped: vec![SkippedTrack { track_id: "z".into(), reason: "missing vocal".into() }],
        };
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("model\tmcd_mean_db\tmcd_std_db\tn_tracks\nsin\t4.0000\t0.0000\t1\n"));
        assert!(tsv.contains("z\tskipped"));
        let kinds: Vec<String> = r
            .to_jsonl()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["track", "skipped", "aggregate"]);
    }
}
