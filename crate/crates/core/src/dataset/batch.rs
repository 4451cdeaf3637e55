//! Random 640 ms excerpts with gain-augmented mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_waveforms, Corpus, DatasetError, MixDomain, SongData, Split};
use crate::audio::{stft_magnitude, AudioClip, F0Quantizer, F0Scale, EXCERPT_FRAMES, FEATURE_DIM, HOP, N_BINS, WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRange {
    pub lo: f32,
    pub hi: f32,
}

impl GainRange {
    pub fn new(lo: f32, hi: f32) -> Result<Self, DatasetError> {
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(DatasetError::BadGainRange { lo: lo as f64, hi: hi as f64 });
        }
        Ok(Self { lo, hi })
    }

    pub fn fixed(g: f32) -> Self {
        Self { lo: g, hi: g }
    }

    fn draw(&self, rng: &mut impl Rng) -> f32 {
        let u: f32 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

impl Default for GainRange {
    fn default() -> Self {
        Self { lo: 0.5, hi: 1.2 }
    }
}

/// One-hot singer identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SingerVector {
    index: usize,
    n_singers: usize,
}

impl SingerVector {
    pub fn new(index: usize, n_singers: usize) -> Self {
        assert!(index < n_singers, "singer {index} out of range {n_singers}");
        Self { index, n_singers }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn n_singers(&self) -> usize {
        self.n_singers
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.n_singers];
        v[self.index] = 1.0;
        v
    }
}

/// Row-major batch: example-major, then frame, then feature.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub batch_size: usize,
    /// `[B x 128 x 513]`
    pub mixture_mag: Vec<f32>,
    /// `[B x 128 x 64]`, from the clean vocal.
    pub vocal_features: Vec<f32>,
    /// `[B x 128]` Hz, 0 = unvoiced.
    pub f0_hz: Vec<f64>,
    pub singers: Vec<SingerVector>,
    pub song_ids: Vec<String>,
    pub start_frames: Vec<usize>,
    pub gains: Vec<(f32, f32)>,
}

impl TrainingBatch {
    pub fn frames(&self) -> usize {
        EXCERPT_FRAMES
    }

    /// Normalized pitch and voicing flags as floats.
    pub fn f0_continuous(&self, scale: &F0Scale) -> (Vec<f32>, Vec<f32>) {
        let values = self.f0_hz.iter().map(|&f| if f > 0.0 { scale.normalize(f) as f32 } else { 0.0 }).collect();
        let voiced = self.f0_hz.iter().map(|&f| (f > 0.0) as u8 as f32).collect();
        (values, voiced)
    }

    pub fn f0_classes(&self, q: &F0Quantizer) -> Vec<usize> {
        self.f0_hz.iter().map(|&f| q.quantize(f)).collect()
    }

    /// `[B x n_singers]` one-hot rows.
    pub fn singer_matrix(&self) -> Vec<f32> {
        self.singers.iter().flat_map(|s| s.one_hot()).collect()
    }
}

fn excerpt_mixture(song: &SongData, start: usize, g_v: f32, g_b: f32, domain: MixDomain) -> Result<Vec<f32>, DatasetError> {
    match domain {
        MixDomain::Magnitude => {
            let r = start * N_BINS..(start + EXCERPT_FRAMES) * N_BINS;
            let (v, b) = (&song.vocal_mag.values()[r.clone()], &song.backing_mag.values()[r]);
            Ok(v.iter().zip(b).map(|(&v, &b)| g_v * v + g_b * b).collect())
        }
        MixDomain::Waveform => {
            let s0 = start * HOP;
            let s1 = (s0 + (EXCERPT_FRAMES - 1) * HOP + WINDOW).min(song.vocal.len());
            let mixed = mix_waveforms(&song.vocal[s0..s1], &song.backing[s0..s1], g_v, g_b)?;
            let clip = AudioClip::at_pipeline_rate(mixed).map_err(DatasetError::audio(&song.song_id))?;
            let mag = stft_magnitude(&clip).map_err(DatasetError::audio(&song.song_id))?;
            Ok(mag.values()[..EXCERPT_FRAMES * N_BINS].to_vec())
        }
    }
}

fn assemble(
    corpus: &Corpus,
    picks: &[(&SongData, usize, f32, f32)],
    domain: MixDomain,
) -> Result<TrainingBatch, DatasetError> {
    let b = picks.len();
    let mut batch = TrainingBatch {
        batch_size: b,
        mixture_mag: Vec::with_capacity(b * EXCERPT_FRAMES * N_BINS),
        vocal_features: Vec::with_capacity(b * EXCERPT_FRAMES * FEATURE_DIM),
        f0_hz: Vec::with_capacity(b * EXCERPT_FRAMES),
        singers: Vec::with_capacity(b),
        song_ids: Vec::with_capacity(b),
        start_frames: Vec::with_capacity(b),
        gains: Vec::with_capacity(b),
    };
    for &(song, start, g_v, g_b) in picks {
        batch.mixture_mag.extend(excerpt_mixture(song, start, g_v, g_b, domain)?);
        batch.vocal_features.extend_from_slice(&song.features.values()[start * FEATURE_DIM..(start + EXCERPT_FRAMES) * FEATURE_DIM]);
        batch.f0_hz.extend_from_slice(&song.f0_hz[start..start + EXCERPT_FRAMES]);
        batch.singers.push(SingerVector::new(song.singer, corpus.n_singers()));
        batch.song_ids.push(song.song_id.clone());
        batch.start_frames.push(start);
        batch.gains.push((g_v, g_b));
    }
    Ok(batch)
}

fn eligible(corpus: &Corpus, split: Split) -> Result<Vec<&SongData>, DatasetError> {
    let songs: Vec<&SongData> = corpus.split(split).filter(|s| s.fits_excerpt()).collect();
    if songs.is_empty() {
        return Err(DatasetError::NoSongs(match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }));
    }
    Ok(songs)
}

/// Draws `batch_size` excerpts: song uniform, start frame uniform over the
/// valid range, then `g_v` and `g_b` uniform over `gains`.
pub fn sample_training_batch(
    corpus: &Corpus,
    split: Split,
    batch_size: usize,
    gains: GainRange,
    domain: MixDomain,
    rng: &mut impl Rng,
) -> Result<TrainingBatch, DatasetError> {
    let songs = eligible(corpus, split)?;
    let mut picks = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let song = songs[rng.random_range(0..songs.len())];
        let start = rng.random_range(0..=song.n_frames() - EXCERPT_FRAMES);
        let (g_v, g_b) = (gains.draw(rng), gains.draw(rng));
        picks.push((song, start, g_v, g_b));
    }
    assemble(corpus, &picks, domain)
}

/// Fixed validation set: `n_batches` batches at gains (1, 1) drawn with a
/// private seed, so every evaluation sees the same excerpts.
pub fn validation_batches(
    corpus: &Corpus,
    batch_size: usize,
    n_batches: usize,
    domain: MixDomain,
    seed: u64,
) -> Result<Vec<TrainingBatch>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_batches)
        .map(|_| sample_training_batch(corpus, Split::Val, batch_size, GainRange::fixed(1.0), domain, &mut rng))
        .collect()
}
