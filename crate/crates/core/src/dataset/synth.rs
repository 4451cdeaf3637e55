//! Synthetic desk-scale corpus: singers with distinct spectral-envelope
//! prototypes sing scripted vowel sequences with known pitch over a
//! synthetic backing of chords and percussion.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DatasetError, LABELS_FILE};
use crate::audio::vocoder::frame_center;
use crate::audio::{frame_count, write_dump, write_wav, AudioClip, DumpLayout, FeatureDump, HOP, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;
const BLOCK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_singers: usize,
    pub clips_per_singer: usize,
    /// The last clips of each singer are labelled as test songs.
    pub test_per_singer: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_singers: 4, clips_per_singer: 20, test_per_singer: 3, min_secs: 2.5, max_secs: 3.2, seed: 1234 }
    }
}

/// Timbre prototype of one synthetic singer.
#[derive(Clone, Debug, PartialEq)]
pub struct Voice {
    pub formant_scale: f64,
    /// Spectral slope in dB per octave.
    pub tilt_db: f64,
    pub ring_hz: f64,
    pub ring_gain: f64,
    pub f0_range: (f64, f64),
    /// Breath noise RMS relative to the harmonic RMS.
    pub breath: f64,
}

impl Voice {
    pub fn prototype(singer: usize, seed: u64) -> Voice {
        let table = [
            Voice { formant_scale: 0.86, tilt_db: -12.0, ring_hz: 2600.0, ring_gain: 2.0, f0_range: (110.0, 196.0), breath: 0.05 },
            Voice { formant_scale: 0.95, tilt_db: -8.0, ring_hz: 2900.0, ring_gain: 0.6, f0_range: (130.0, 262.0), breath: 0.15 },
            Voice { formant_scale: 1.06, tilt_db: -6.0, ring_hz: 3300.0, ring_gain: 3.0, f0_range: (175.0, 350.0), breath: 0.08 },
            Voice { formant_scale: 1.17, tilt_db: -10.0, ring_hz: 3600.0, ring_gain: 1.2, f0_range: (220.0, 440.0), breath: 0.12 },
        ];
        if let Some(v) = table.get(singer) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 * singer as u64));
        let lo = 110.0 * 2f64.powf(rng.random_range(0.0..1.0));
        Voice {
            formant_scale: rng.random_range(0.85..1.2),
            tilt_db: rng.random_range(-12.0..-6.0),
            ring_hz: rng.random_range(2500.0..3700.0),
            ring_gain: rng.random_range(0.5..3.0),
            f0_range: (lo, (2.0 * lo).min(440.0)),
            breath: rng.random_range(0.05..0.15),
        }
    }

    /// Linear amplitude of the vocal tract plus source at `f` Hz.
    fn envelope(&self, f: f64, formants: &[(f64, f64); 3]) -> f64 {
        let mut a = 10f64.powf(self.tilt_db * (f.max(50.0) / 200.0).log2() / 20.0);
        for &(fc, bw) in formants {
            let (fc, bw) = (fc * self.formant_scale, bw * self.formant_scale);
            a *= fc * fc / ((fc * fc - f * f).powi(2) + (f * bw).powi(2)).sqrt();
        }
        a *= 1.0 + self.ring_gain * (-((f - self.ring_hz) / 400.0).powi(2)).exp();
        if f > 10_000.0 {
            a *= (0.5 + 0.5 * (PI * (f - 10_000.0) / 2000.0).cos()).max(0.0) * (f < 12_000.0) as u8 as f64;
        }
        a
    }
}

/// Formant frequencies and bandwidths of the five vowels.
const VOWELS: [[(f64, f64); 3]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 160.0)],
    [(530.0, 70.0), (1840.0, 110.0), (2480.0, 160.0)],
    [(270.0, 60.0), (2290.0, 120.0), (3010.0, 180.0)],
    [(570.0, 80.0), (840.0, 90.0), (2410.0, 150.0)],
    [(300.0, 60.0), (870.0, 90.0), (2240.0, 140.0)],
];

#[derive(Clone, Copy, Debug)]
enum Event {
    Note { start: usize, len: usize, f0: f64, vowel: usize, loud: f64, vib_depth: f64, vib_rate: f64, legato: bool },
    Fricative { start: usize, len: usize, center: f64 },
}

/// One rendered clip.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub vocal: Vec<f32>,
    pub backing: Vec<f32>,
    /// Ground-truth pitch per frame (0 = unvoiced).
    pub f0_frames: Vec<f64>,
}

fn ms(x: f64) -> usize {
    (x * FS / 1000.0) as usize
}

fn script(voice: &Voice, n: usize, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let mut events = Vec::new();
    let mut t = ms(rng.random_range(50.0..150.0));
    let mut legato = false;
    let (lo, hi) = (voice.f0_range.0.ln(), voice.f0_range.1.ln());
    while t + ms(200.0) < n.saturating_sub(ms(80.0)) {
        let len = ms(rng.random_range(250.0..600.0)).min(n - ms(80.0) - t);
        events.push(Event::Note {
            start: t,
            len,
            f0: rng.random_range(lo..hi).exp(),
            vowel: rng.random_range(0..VOWELS.len()),
            loud: rng.random_range(0.6..1.0),
            vib_depth: rng.random_range(15.0..40.0),
            vib_rate: rng.random_range(4.8..6.2),
            legato,
        });
        t += len;
        let r: f64 = rng.random();
        legato = false;
        if r < 0.25 {
            t += ms(rng.random_range(80.0..250.0));
            if t >= n {
                break;
            }
        } else if r < 0.45 {
            let len = ms(rng.random_range(60.0..120.0)).min(n - t);
            events.push(Event::Fricative { start: t, len, center: rng.random_range(4000.0..7000.0) });
            t += len;
        } else {
            legato = true;
        }
    }
    events
}

/// Raised-cosine attack/release gain at offset `i` within `len` samples.
fn fade(i: usize, len: usize, attack: usize, release: usize) -> f64 {
    let up = if i < attack { 0.5 - 0.5 * (PI * i as f64 / attack as f64).cos() } else { 1.0 };
    let left = len - i;
    let down = if left < release { 0.5 - 0.5 * (PI * left as f64 / release as f64).cos() } else { 1.0 };
    up * down
}

fn render_vocal(voice: &Voice, events: &[Event], n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n];
    let mut f0_track = vec![0.0; n];
    let mut env_track = vec![0.0; n];
    let mut prev: Option<(f64, usize)> = None;
    for ev in events {
        match *ev {
            Event::Note { start, len, f0, vowel, loud, vib_depth, vib_rate, legato } => {
                let glide = ms(40.0);
                let morph = ms(50.0);
                let from = if legato { prev } else { None };
                let mut phase = 0.0;
                let mut amps = Vec::new();
                let mut harm_rms = 0.0;
                for i in 0..len {
                    let tsec = i as f64 / FS;
                    let mut f = f0;
                    if let Some((pf, _)) = from {
                        if i < glide {
                            let a = i as f64 / glide as f64;
                            f = (pf.ln() * (1.0 - a) + f0.ln() * a).exp();
                        }
                    }
                    let vib_on = ((tsec - 0.15) / 0.1).clamp(0.0, 1.0);
                    f *= 2f64.powf(vib_on * vib_depth / 1200.0 * (2.0 * PI * vib_rate * tsec).sin());
                    f0_track[start + i] = f;
                    let g = loud * fade(i, len, if from.is_some() { 1 } else { ms(15.0) }, ms(25.0));
                    env_track[start + i] = g / loud;
                    if i % BLOCK == 0 {
                        let mix = match from {
                            Some(_) if i < morph => i as f64 / morph as f64,
                            _ => 1.0,
                        };
                        let pv = from.map_or(vowel, |p| p.1);
                        let mut fm = [(0.0, 0.0); 3];
                        for (k, slot) in fm.iter_mut().enumerate() {
                            let (a, b) = (VOWELS[pv][k], VOWELS[vowel][k]);
                            *slot = (a.0 * (1.0 - mix) + b.0 * mix, a.1 * (1.0 - mix) + b.1 * mix);
                        }
                        let n_h = (12_000.0 / f) as usize;
                        amps.clear();
                        amps.extend((1..=n_h).map(|h| voice.envelope(h as f64 * f, &fm)));
                        harm_rms = (amps.iter().map(|a| a * a).sum::<f64>() / 2.0).sqrt();
                    }
                    phase = (phase + f / FS).fract();
                    // sin(h * theta) by the Chebyshev recurrence
                    let theta = 2.0 * PI * phase;
                    let c2 = 2.0 * theta.cos();
                    let (mut s_prev, mut s) = (0.0, theta.sin());
                    let mut acc = 0.0;
                    for (h, &a) in amps.iter().enumerate() {
                        if (h + 1) as f64 * f >= 12_000.0 {
                            break;
                        }
                        acc += a * s;
                        let next = c2 * s - s_prev;
                        s_prev = s;
                        s = next;
                    }
                    let z: f64 = StandardNormal.sample(rng);
                    y[start + i] += g * (acc + voice.breath * harm_rms * z);
                }
                prev = Some((f0, vowel));
            }
            Event::Fricative { start, len, center } => {
                // constant-skirt band-pass biquad, Q = 1.5
                let w0 = 2.0 * PI * center / FS;
                let alpha = w0.sin() / 3.0;
                let a0 = 1.0 + alpha;
                let (b0, b2, a1, a2) = (alpha / a0, -alpha / a0, -2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
                let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..len {
                    let x: f64 = StandardNormal.sample(rng);
                    let out = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                    x2 = x1;
                    x1 = x;
                    y2 = y1;
                    y1 = out;
                    y[start + i] += 3.0 * out * fade(i, len, ms(20.0), ms(20.0));
                }
                prev = None;
            }
        }
    }
    // normalise the voiced level, keep the relative fricative level
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    y.iter_mut().for_each(|v| *v *= 0.5 / peak);
    for (f, e) in f0_track.iter_mut().zip(&env_track) {
        if *e < 0.5 {
            *f = 0.0;
        }
    }
    (y, f0_track)
}

fn render_backing(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut y = vec![0.0; n];
    let beat = ms(500.0);
    let roots = [110.0, 130.81, 146.83, 174.61, 196.0];
    let mut start = 0;
    while start < n {
        let len = (2 * beat).min(n - start);
        let root = roots[rng.random_range(0..roots.len())];
        let third = if rng.random_bool(0.5) { 4.0 } else { 3.0 };
        for semis in [0.0, third, 7.0] {
            let f = root * 2f64.powf(semis / 12.0);
            let n_h = (5000.0 / f) as usize;
            let mut phase: f64 = rng.random();
            for i in 0..len {
                phase = (phase + f / FS).fract();
                let theta = 2.0 * PI * phase;
                let c2 = 2.0 * theta.cos();
                let (mut s_prev, mut s) = (0.0, theta.sin());
                let mut acc = 0.0;
                for h in 1..=n_h {
                    acc += s / h as f64;
                    let next = c2 * s - s_prev;
                    s_prev = s;
                    s = next;
                }
                y[start + i] += 0.1 * acc * fade(i, len, ms(20.0), ms(20.0));
            }
        }
        start += len;
    }
    let mut t = 0;
    let mut on_beat = true;
    while t < n {
        if on_beat {
            let mut phase = 0.0;
            for i in 0..ms(250.0).min(n - t) {
                let s = i as f64 / FS;
                let f = 50.0 + 100.0 * (-s / 0.03).exp();
                phase += f / FS;
                y[t + i] += 0.8 * (2.0 * PI * phase).sin() * (-s / 0.08).exp();
            }
        } else {
            let mut last = 0.0;
            for i in 0..ms(80.0).min(n - t) {
                let z: f64 = StandardNormal.sample(rng);
                y[t + i] += 0.25 * (z - last) * (-(i as f64 / FS) / 0.015).exp();
                last = z;
            }
        }
        t += beat / 2;
        on_beat = !on_beat;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    y.iter().map(|v| v * 0.4 / peak).collect()
}

pub fn singer_name(singer: usize) -> String {
    format!("singer{singer}")
}

pub fn song_name(singer: usize, clip: usize) -> String {
    format!("{}_{clip:02}", singer_name(singer))
}

/// Renders one clip; deterministic in `(cfg.seed, singer, clip)`.
pub fn render_clip(cfg: &SynthConfig, singer: usize, clip: usize) -> SynthClip {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add((singer * 1000 + clip) as u64));
    let voice = Voice::prototype(singer, cfg.seed);
    let secs = rng.random_range(cfg.min_secs..=cfg.max_secs);
    let n = ((secs * FS) as usize / HOP) * HOP;
    let events = script(&voice, n, &mut rng);
    let (vocal, f0_track) = render_vocal(&voice, &events, n, &mut rng);
    let backing = render_backing(n, &mut rng);
    let f0_frames = (0..frame_count(n)).map(|k| f0_track[frame_center(k).min(n - 1)]).collect();
    SynthClip {
        vocal: vocal.into_iter().map(|v| v as f32).collect(),
        backing: backing.into_iter().map(|v| v as f32).collect(),
        f0_frames,
    }
}

/// Writes the full corpus below `root` (created if needed).
pub fn generate_corpus(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<(), DatasetError> {
    let root = root.as_ref();
    if cfg.min_secs < 0.7 || cfg.max_secs < cfg.min_secs || cfg.n_singers == 0 || cfg.test_per_singer > cfg.clips_per_singer {
        return Err(DatasetError::Rejected(vec![format!("invalid synthetic corpus settings: {cfg:?}")]));
    }
    std::fs::create_dir_all(root)?;
    let mut labels = String::from("song,singer,test\n");
    for singer in 0..cfg.n_singers {
        for clip in 0..cfg.clips_per_singer {
            let name = song_name(singer, clip);
            let dir = root.join(&name);
            std::fs::create_dir_all(&dir)?;
            let c = render_clip(cfg, singer, clip);
            let wav = |x: Vec<f32>, file: &str| -> Result<(), DatasetError> {
                let clip = AudioClip::at_pipeline_rate(x).map_err(DatasetError::audio(&name))?;
                write_wav(dir.join(file), &clip).map_err(DatasetError::audio(&name))
            };
            wav(c.vocal, "vocal.wav")?;
            wav(c.backing, "backing.wav")?;
            let n = c.f0_frames.len();
            let dump = FeatureDump::new(DumpLayout::F0Hz, n, 1, HOP as u32, SAMPLE_RATE, c.f0_frames.iter().map(|&v| v as f32).collect())
                .map_err(DatasetError::audio(&name))?;
            write_dump(dir.join("f0.rvxf"), &dump).map_err(DatasetError::audio(&name))?;
            let test = clip + cfg.test_per_singer >= cfg.clips_per_singer;
            labels.push_str(&format!("{name},{},{}\n", singer_name(singer), test as u8));
        }
    }
    std::fs::write(root.join(LABELS_FILE), labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_is_deterministic_and_bounded() {
        let cfg = SynthConfig { min_secs: 1.0, max_secs: 1.2, ..Default::default() };
        let a = render_clip(&cfg, 1, 3);
        let b = render_clip(&cfg, 1, 3);
        assert_eq!(a.vocal, b.vocal);
        assert_eq!(a.backing, b.backing);
        assert_eq!(a.vocal.len() % HOP, 0);
        assert_eq!(a.f0_frames.len(), a.vocal.len() / HOP);
        assert!(a.vocal.iter().chain(&a.backing).all(|v| v.abs() <= 0.5 + 1e-6));
        let voiced = a.f0_frames.iter().filter(|&&f| f > 0.0).count();
        assert!(voiced * 2 > a.f0_frames.len(), "{voiced}");
        let (lo, hi) = Voice::prototype(1, 0).f0_range;
        for &f in a.f0_frames.iter().filter(|&&f| f > 0.0) {
            assert!(f > lo * 0.97 && f < hi * 1.03);
        }
    }

    #[test]
    fn singers_have_distinct_prototypes() {
        let v: Vec<Voice> = (0..6).map(|s| Voice::prototype(s, 9)).collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                assert_ne!(v[i], v[j]);
            }
        }
    }
}
