//! Decoded songs with their spectrograms, vocoder features and pitch.

use std::path::{Path, PathBuf};

use super::{DatasetError, DatasetManifest, ManifestEntry, Split};
use crate::audio::{
    read_dump, read_wav, stft_magnitude, vocoder_analyze, write_dump, DumpLayout, FeatureDump, MagSpectrogram, VocoderFeatures,
    EXCERPT_FRAMES, FEATURE_DIM, HOP, N_BINS, SAMPLE_RATE,
};

/// Everything the training and evaluation code reads from one song.
#[derive(Clone, Debug)]
pub struct SongData {
    pub song_id: String,
    pub singer: usize,
    pub split: Split,
    pub vocal: Vec<f32>,
    /// Same length as `vocal`; silence when the song has no backing track.
    pub backing: Vec<f32>,
    pub vocal_mag: MagSpectrogram,
    pub backing_mag: MagSpectrogram,
    /// Vocoder analysis of the clean vocal.
    pub features: VocoderFeatures,
    /// Pitch from the same analysis, Hz (0 = unvoiced).
    pub f0_hz: Vec<f64>,
    /// Ground-truth pitch shipped with the corpus, if any.
    pub f0_truth: Option<Vec<f64>>,
}

impl SongData {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    pub fn fits_excerpt(&self) -> bool {
        self.n_frames() >= EXCERPT_FRAMES
    }
}

pub struct Corpus {
    manifest: DatasetManifest,
    songs: Vec<SongData>,
}

fn dump_path(dir: &Path, song: &str, what: &str) -> PathBuf {
    dir.join(format!("{song}.{what}.rvxf"))
}

fn newer_than(cache: &Path, source: &Path) -> bool {
    let m = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((m(cache), m(source)), (Some(c), Some(s)) if c >= s)
}

struct Analysis {
    vocal_mag: MagSpectrogram,
    backing_mag: MagSpectrogram,
    features: VocoderFeatures,
    f0_hz: Vec<f64>,
}

fn load_cached(dir: &Path, entry: &ManifestEntry) -> Option<Analysis> {
    let names = ["vmag", "bmag", "feat", "f0"];
    let paths: Vec<PathBuf> = names.iter().map(|n| dump_path(dir, &entry.song_id, n)).collect();
    let mut sources = vec![entry.vocal_path.clone()];
    sources.extend(entry.backing_path.clone());
    if !paths.iter().all(|p| sources.iter().all(|s| newer_than(p, s))) {
        return None;
    }
    let dumps: Vec<FeatureDump> = paths.iter().map(read_dump).collect::<Result<_, _>>().ok()?;
    let n = dumps[0].rows;
    if dumps.iter().any(|d| d.rows != n) || dumps[0].cols != N_BINS || dumps[2].cols != FEATURE_DIM {
        return None;
    }
    let mut it = dumps.into_iter();
    Some(Analysis {
        vocal_mag: MagSpectrogram::new(n, it.next()?.data).ok()?,
        backing_mag: MagSpectrogram::new(n, it.next()?.data).ok()?,
        features: VocoderFeatures::new(n, it.next()?.data).ok()?,
        f0_hz: it.next()?.data.into_iter().map(|v| v as f64).collect(),
    })
}

fn store_cache(dir: &Path, song: &str, a: &Analysis) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let n = a.features.n_frames();
    let items = [
        ("vmag", DumpLayout::Magnitude, N_BINS, a.vocal_mag.values().to_vec()),
        ("bmag", DumpLayout::Magnitude, N_BINS, a.backing_mag.values().to_vec()),
        ("feat", DumpLayout::VocoderFeatures, FEATURE_DIM, a.features.values().to_vec()),
        ("f0", DumpLayout::F0Hz, 1, a.f0_hz.iter().map(|&v| v as f32).collect()),
    ];
    for (name, layout, cols, data) in items {
        let dump = FeatureDump::new(layout, n, cols, HOP as u32, SAMPLE_RATE, data).map_err(DatasetError::audio(song))?;
        write_dump(dump_path(dir, song, name), &dump).map_err(DatasetError::audio(song))?;
    }
    Ok(())
}

/// Loads and analyzes one manifest entry.
pub fn load_song(manifest: &DatasetManifest, entry: &ManifestEntry, cache: Option<&Path>) -> Result<SongData, DatasetError> {
    let ctx = || entry.song_id.clone();
    let vocal = read_wav(&entry.vocal_path).map_err(DatasetError::audio(ctx()))?.into_samples();
    let mut backing = match &entry.backing_path {
        Some(p) => read_wav(p).map_err(DatasetError::audio(ctx()))?.into_samples(),
        None => vec![0.0; vocal.len()],
    };
    backing.resize(vocal.len(), 0.0);

    let analysis = match cache.and_then(|d| load_cached(d, entry)) {
        Some(a) => a,
        None => {
            let clip = |x: &[f32]| crate::audio::AudioClip::at_pipeline_rate(x.to_vec()).map_err(DatasetError::audio(ctx()));
            let vclip = clip(&vocal)?;
            let (features, f0) = vocoder_analyze(&vclip).map_err(DatasetError::audio(ctx()))?;
            let a = Analysis {
                vocal_mag: stft_magnitude(&vclip).map_err(DatasetError::audio(ctx()))?,
                backing_mag: stft_magnitude(&clip(&backing)?).map_err(DatasetError::audio(ctx()))?,
                features,
                // rounded like the cached copy so both paths agree
                f0_hz: f0.to_hz(&Default::default()).into_iter().map(|v| v as f32 as f64).collect(),
            };
            if let Some(dir) = cache {
                store_cache(dir, &entry.song_id, &a)?;
            }
            a
        }
    };

    let f0_truth = match &entry.f0_path {
        Some(p) => {
            let d = read_dump(p).map_err(DatasetError::audio(ctx()))?;
            if d.layout != DumpLayout::F0Hz || d.cols != 1 {
                return Err(DatasetError::Shape(format!("{}: expected a 1-column F0 dump", p.display())));
            }
            let mut v: Vec<f64> = d.data.into_iter().map(|v| v as f64).collect();
            v.resize(analysis.features.n_frames(), 0.0);
            Some(v)
        }
        None => None,
    };

    Ok(SongData {
        song_id: entry.song_id.clone(),
        singer: manifest.singer_of(entry),
        split: entry.split,
        vocal,
        backing,
        vocal_mag: analysis.vocal_mag,
        backing_mag: analysis.backing_mag,
        features: analysis.features,
        f0_hz: analysis.f0_hz,
        f0_truth,
    })
}

impl Corpus {
    /// Loads the songs of the requested splits. With `cache_dir`, analysis
    /// results are reused when they are newer than the audio.
    pub fn load(manifest: DatasetManifest, splits: &[Split], cache_dir: Option<&Path>) -> Result<Self, DatasetError> {
        let mut songs = Vec::new();
        for entry in manifest.entries().iter().filter(|e| splits.contains(&e.split)) {
            let song = load_song(&manifest, entry, cache_dir)?;
            if song.split != Split::Test && !song.fits_excerpt() {
                log::warn!("song '{}' is shorter than 640 ms and is skipped for sampling", song.song_id);
            }
            songs.push(song);
        }
        Ok(Self { manifest, songs })
    }

    /// Builds a corpus from already decoded songs.
    pub fn from_songs(manifest: DatasetManifest, songs: Vec<SongData>) -> Self {
        Self { manifest, songs }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn n_singers(&self) -> usize {
        self.manifest.n_singers()
    }

    pub fn songs(&self) -> &[SongData] {
        &self.songs
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SongData> {
        self.songs.iter().filter(move |s| s.split == split)
    }

    pub fn song(&self, song_id: &str) -> Option<&SongData> {
        self.songs.iter().find(|s| s.song_id == song_id)
    }
}
