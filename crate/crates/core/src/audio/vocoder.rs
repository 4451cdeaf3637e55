//! Vocoder backends: waveform to (F0, spectral envelope, aperiodicity) and
//! back.
//!
//! [`PulseNoiseVocoder`] is the reference backend. Analysis runs a YIN pitch
//! tracker, a pitch-adaptive smoothed power spectrum with cepstral liftering
//! for the envelope, and an inter-harmonic energy ratio per band for the
//! aperiodicity. Synthesis places minimum-phase pulse responses at pitch
//! marks and overlap-adds band-weighted filtered noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::{frame_count, reflect_index, AudioClip, AudioError, HOP, SAMPLE_RATE};

/// FFT length of the envelope grid.
pub const ENV_FFT: usize = 2048;
/// Bins of the envelope grid (`0 ..= Nyquist`).
pub const ENV_BINS: usize = ENV_FFT / 2 + 1;
/// Aperiodicity band edges in Hz.
pub const BAND_EDGES_HZ: [f64; 5] = [0.0, 2000.0, 4000.0, 8000.0, 16000.0];
/// Smallest representable aperiodicity (power ratio).
pub const AP_FLOOR: f64 = 1e-3;

const POWER_FLOOR: f64 = 1e-12;
const UNVOICED_F0: f64 = 500.0;
const FS: f64 = SAMPLE_RATE as f64;

/// Frame-level vocoder parameters on the 5 ms grid. Frame `k` describes the
/// instant `k * 160 + 80` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct VocoderParams {
    /// Hz; 0 for unvoiced frames.
    pub f0_hz: Vec<f64>,
    /// Power spectral envelope, `n_frames x ENV_BINS`.
    pub envelope: Vec<f64>,
    /// Aperiodic power ratio in [0, 1], `n_frames x ENV_BINS`.
    pub aperiodicity: Vec<f64>,
}

impl VocoderParams {
    pub fn n_frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn envelope_frame(&self, k: usize) -> &[f64] {
        &self.envelope[k * ENV_BINS..(k + 1) * ENV_BINS]
    }

    pub fn aperiodicity_frame(&self, k: usize) -> &[f64] {
        &self.aperiodicity[k * ENV_BINS..(k + 1) * ENV_BINS]
    }

    fn validate(&self) -> Result<(), AudioError> {
        let n = self.n_frames();
        for (what, len) in [("envelope", self.envelope.len()), ("aperiodicity", self.aperiodicity.len())] {
            if len != n * ENV_BINS {
                return Err(AudioError::Invalid(format!("{what} holds {len} values for {n} frames")));
            }
        }
        Ok(())
    }
}

/// Interface every vocoder backend implements.
pub trait VocoderBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Produces exactly `floor(len / 160)` frames.
    fn analyze(&self, clip: &AudioClip) -> Result<VocoderParams, AudioError>;

    /// Produces exactly `n_frames * 160` samples.
    fn synthesize(&self, params: &VocoderParams) -> Result<AudioClip, AudioError>;
}

/// Frame center in samples.
pub fn frame_center(k: usize) -> usize {
    k * HOP + HOP / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseNoiseVocoder {
    pub f0_floor: f64,
    pub f0_ceil: f64,
    /// YIN cumulative-mean-normalized-difference threshold.
    pub voicing_threshold: f64,
    /// Seed of the synthesis noise generator.
    pub noise_seed: u64,
}

impl Default for PulseNoiseVocoder {
    fn default() -> Self {
        Self { f0_floor: 65.4, f0_ceil: 1046.5, voicing_threshold: 0.2, noise_seed: 0x5eed }
    }
}

struct Ffts {
    env_fwd: Arc<dyn Fft<f64>>,
    env_inv: Arc<dyn Fft<f64>>,
    ap_fwd: Arc<dyn Fft<f64>>,
}

impl Ffts {
    fn new() -> Self {
        let mut p = FftPlanner::new();
        Self { env_fwd: p.plan_fft_forward(ENV_FFT), env_inv: p.plan_fft_inverse(ENV_FFT), ap_fwd: p.plan_fft_forward(2 * ENV_FFT) }
    }
}

fn segment(x: &[f64], start: isize, len: usize) -> Vec<f64> {
    let n = x.len();
    (0..len)
        .map(|j| {
            let i = start + j as isize;
            if i >= 0 && (i as usize) < n {
                x[i as usize]
            } else {
                x[reflect_index(i, n)]
            }
        })
        .collect()
}

/// Like [`segment`] centred on `center`, but shifted to lie inside the
/// signal whenever it is long enough. Pitch is read from real periods only.
fn inner_segment(x: &[f64], center: usize, len: usize) -> Vec<f64> {
    let start = center as isize - (len / 2) as isize;
    if x.len() >= len {
        let start = start.clamp(0, (x.len() - len) as isize) as usize;
        x[start..start + len].to_vec()
    } else {
        segment(x, start, len)
    }
}

/// Symmetric Hann of odd length `len` with non-zero end points, scaled to
/// unit energy.
fn unit_energy_hann(len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * (n + 1) as f64 / (len + 1) as f64).cos()).collect();
    let e = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= e);
    w
}

fn odd_len(len: f64, max: usize) -> usize {
    let l = (len.round() as usize).max(3) | 1;
    l.min(max - (1 - max % 2))
}

impl PulseNoiseVocoder {
    fn tau_range(&self) -> (usize, usize) {
        let tau_min = ((FS / self.f0_ceil).floor() as usize).max(2);
        let tau_max = (FS / self.f0_floor).ceil() as usize;
        (tau_min, tau_max)
    }

    /// YIN estimate for every frame; 0 marks unvoiced.
    pub fn estimate_f0(&self, x: &[f64], n_frames: usize) -> Vec<f64> {
        const WIN: usize = 1024;
        let (tau_min, tau_max) = self.tau_range();
        let integ = WIN - tau_max;
        let nfft = 2048;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(nfft);
        let inv = planner.plan_fft_inverse(nfft);
        let mut a = vec![Complex::new(0.0, 0.0); nfft];
        let mut b = vec![Complex::new(0.0, 0.0); nfft];
        let mut out = Vec::with_capacity(n_frames);
        for k in 0..n_frames {
            let s = inner_segment(x, frame_center(k), WIN);
            let mut prefix = vec![0.0; WIN + 1];
            for j in 0..WIN {
                prefix[j + 1] = prefix[j] + s[j] * s[j];
            }
            let e0 = prefix[integ];
            if e0 / (integ as f64) < 1e-10 {
                out.push(0.0);
                continue;
            }
            a.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            b.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for j in 0..WIN {
                b[j].re = s[j];
                if j < integ {
                    a[j].re = s[j];
                }
            }
            fwd.process(&mut a);
            fwd.process(&mut b);
            for (p, q) in a.iter_mut().zip(&b) {
                *p = p.conj() * q;
            }
            inv.process(&mut a);
            let scale = 1.0 / nfft as f64;

            let mut diff = vec![0.0; tau_max + 2];
            let mut cmnd = vec![1.0; tau_max + 2];
            let mut running = 0.0;
            for tau in 1..=tau_max + 1 {
                let tau_c = tau.min(tau_max);
                let e_tau = prefix[tau_c + integ] - prefix[tau_c];
                let d = (e0 + e_tau - 2.0 * a[tau_c].re * scale).max(0.0);
                diff[tau] = d;
                running += d;
                cmnd[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
            }

            // first local minimum that is nearly as deep as the best one
            let global = cmnd[tau_min..=tau_max].iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = self.voicing_threshold.min(global + 0.05);
            let pick = (tau_min..=tau_max).find(|&t| cmnd[t] < bound && cmnd[t] <= cmnd[t - 1] && cmnd[t] <= cmnd[t + 1]);
            let Some(tau) = pick else {
                out.push(0.0);
                continue;
            };
            let refined = if tau > tau_min && tau < tau_max {
                let (l, c, r) = (diff[tau - 1], diff[tau], diff[tau + 1]);
                let den = l - 2.0 * c + r;
                if den.abs() > 1e-12 {
                    tau as f64 + (0.5 * (l - r) / den).clamp(-1.0, 1.0)
                } else {
                    tau as f64
                }
            } else {
                tau as f64
            };
            out.push(FS / refined);
        }
        out
    }

    fn envelope_frame(&self, x: &[f64], k: usize, f0: f64, ffts: &Ffts, out: &mut [f64]) {
        let f0 = if f0 > 0.0 { f0 } else { UNVOICED_F0 };
        let len = odd_len(3.0 * FS / f0, ENV_FFT);
        let w = unit_energy_hann(len);
        let s = segment(x, frame_center(k) as isize - (len / 2) as isize, len);
        let mut buf = vec![Complex::new(0.0, 0.0); ENV_FFT];
        for j in 0..len {
            buf[j].re = s[j] * w[j];
        }
        ffts.env_fwd.process(&mut buf);
        let power: Vec<f64> = buf[..ENV_BINS].iter().map(|c| c.norm_sqr()).collect();

        // rectangular smoothing over 2/3 of the harmonic spacing
        let width = (2.0 / 3.0) * f0 * ENV_FFT as f64 / FS;
        let margin = width.ceil() as usize + 2;
        let ext: Vec<f64> = (0..ENV_BINS + 2 * margin)
            .map(|i| {
                let k = i as isize - margin as isize;
                let m = if k < 0 {
                    (-k) as usize
                } else if k as usize >= ENV_BINS {
                    2 * (ENV_BINS - 1) - k as usize
                } else {
                    k as usize
                };
                power[m]
            })
            .collect();
        let mut cum = vec![0.0; ext.len() + 1];
        for i in 0..ext.len() {
            cum[i + 1] = cum[i] + ext[i];
        }
        let integral = |u: f64| {
            let idx = u + margin as f64 + 0.5;
            let i = (idx.floor() as usize).min(ext.len() - 1);
            cum[i] + (idx - i as f64) * ext[i]
        };
        let mut logp = vec![Complex::new(0.0, 0.0); ENV_FFT];
        for k in 0..ENV_BINS {
            let kf = k as f64;
            let sm = (integral(kf + width / 2.0) - integral(kf - width / 2.0)) / width;
            logp[k].re = sm.max(POWER_FLOOR).ln();
        }
        for k in 1..ENV_BINS - 1 {
            logp[ENV_FFT - k] = logp[k];
        }

        // cepstral liftering: sinc smoothing plus spectral recovery
        ffts.env_inv.process(&mut logp);
        const Q1: f64 = -0.15;
        for (q, c) in logp.iter_mut().enumerate() {
            let qq = q.min(ENV_FFT - q) as f64;
            let arg = PI * f0 * qq / FS;
            let smooth = if qq == 0.0 { 1.0 } else { arg.sin() / arg };
            let comp = (1.0 - 2.0 * Q1) + 2.0 * Q1 * (2.0 * arg).cos();
            *c = Complex::new(c.re / ENV_FFT as f64 * smooth * comp, 0.0);
        }
        ffts.env_fwd.process(&mut logp);
        for (o, c) in out.iter_mut().zip(&logp[..ENV_BINS]) {
            *o = c.re.exp();
        }
    }

    fn aperiodicity_frame(&self, x: &[f64], k: usize, f0: f64, ffts: &Ffts, out: &mut [f64]) {
        if f0 <= 0.0 {
            out.iter_mut().for_each(|v| *v = 1.0);
            return;
        }
        let nfft = 2 * ENV_FFT;
        let len = odd_len(6.0 * FS / f0, nfft);
        let w = unit_energy_hann(len);
        let s = segment(x, frame_center(k) as isize - (len / 2) as isize, len);
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        for j in 0..len {
            buf[j].re = s[j] * w[j];
        }
        ffts.ap_fwd.process(&mut buf);
        let mut bands = [1.0; 4];
        for (b, band) in bands.iter_mut().enumerate() {
            let (lo, hi) = (BAND_EDGES_HZ[b], BAND_EDGES_HZ[b + 1]);
            let (mut total, mut n_total, mut noise, mut n_noise) = (0.0, 0usize, 0.0, 0usize);
            for (bin, c) in buf[..=nfft / 2].iter().enumerate() {
                let f = bin as f64 * FS / nfft as f64;
                if f < lo || f > hi || (f == hi && b + 1 < 4) {
                    continue;
                }
                let r = f / f0;
                if r.round() < 1.0 {
                    continue;
                }
                let p = c.norm_sqr();
                total += p;
                n_total += 1;
                if (r - r.round()).abs() >= 0.35 {
                    noise += p;
                    n_noise += 1;
                }
            }
            if n_noise > 0 && total > 0.0 {
                *band = ((noise / n_noise as f64) / (total / n_total as f64)).clamp(AP_FLOOR, 1.0);
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = bands[band_of_bin(i)];
        }
    }

    fn min_phase_spectrum(envelope: &[f64], ffts: &Ffts) -> Vec<Complex<f64>> {
        let mut c = vec![Complex::new(0.0, 0.0); ENV_FFT];
        for k in 0..ENV_BINS {
            c[k].re = 0.5 * envelope[k].max(POWER_FLOOR).ln();
        }
        for k in 1..ENV_BINS - 1 {
            c[ENV_FFT - k] = c[k];
        }
        ffts.env_inv.process(&mut c);
        let n = ENV_FFT as f64;
        for (q, v) in c.iter_mut().enumerate() {
            let fold = if q == 0 || q == ENV_FFT / 2 {
                1.0
            } else if q < ENV_FFT / 2 {
                2.0
            } else {
                0.0
            };
            *v = Complex::new(v.re / n * fold, 0.0);
        }
        ffts.env_fwd.process(&mut c);
        c.iter().map(|v| v.exp()).collect()
    }
}

/// Least-squares fit of harmonic peak frequencies around a coarse estimate.
fn refine_f0(x: &[f64], k: usize, f0: f64, ffts: &Ffts) -> f64 {
    if f0 <= 0.0 {
        return f0;
    }
    let nfft = 2 * ENV_FFT;
    let len = odd_len(6.0 * FS / f0, nfft);
    let w = unit_energy_hann(len);
    let s = inner_segment(x, frame_center(k), len);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for j in 0..len {
        buf[j].re = s[j] * w[j];
    }
    ffts.ap_fwd.process(&mut buf);
    let logmag: Vec<f64> = buf[..=nfft / 2].iter().map(|c| 0.5 * (c.norm_sqr() + 1e-30).ln()).collect();
    let bin_hz = FS / nfft as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for h in 1..=10 {
        let target = h as f64 * f0;
        if target > 5000.0 {
            break;
        }
        let lo = ((target - 0.3 * f0) / bin_hz).ceil().max(1.0) as usize;
        let hi = (((target + 0.3 * f0) / bin_hz).floor() as usize).min(nfft / 2 - 1);
        let Some(peak) = (lo..=hi).max_by(|&a, &b| logmag[a].total_cmp(&logmag[b])) else { continue };
        if peak == lo || peak == hi {
            continue;
        }
        let (l, c, r) = (logmag[peak - 1], logmag[peak], logmag[peak + 1]);
        let den_p = l - 2.0 * c + r;
        let offset = if den_p < 0.0 { (0.5 * (l - r) / den_p).clamp(-0.5, 0.5) } else { 0.0 };
        let fh = (peak as f64 + offset) * bin_hz;
        let amp = c.exp();
        num += amp * h as f64 * fh;
        den += amp * (h * h) as f64;
    }
    if den <= 0.0 {
        return f0;
    }
    let refined = num / den;
    if (refined / f0 - 1.0).abs() < 0.03 {
        refined
    } else {
        f0
    }
}

/// Aperiodicity band containing envelope bin `i`.
pub fn band_of_bin(i: usize) -> usize {
    let f = i as f64 * FS / ENV_FFT as f64;
    (1..BAND_EDGES_HZ.len() - 1).filter(|&b| f >= BAND_EDGES_HZ[b]).count()
}

/// Fills the upper half of a length-`ENV_FFT` spectrum by conjugate symmetry.
fn hermitian(half: impl Fn(usize) -> Complex<f64>) -> Vec<Complex<f64>> {
    let mut full = vec![Complex::new(0.0, 0.0); ENV_FFT];
    for k in 0..ENV_BINS {
        full[k] = half(k);
    }
    full[0].im = 0.0;
    full[ENV_FFT / 2].im = 0.0;
    for k in 1..ENV_BINS - 1 {
        full[ENV_FFT - k] = full[k].conj();
    }
    full
}

impl VocoderBackend for PulseNoiseVocoder {
    fn name(&self) -> &str {
        "pulse-noise"
    }

    fn analyze(&self, clip: &AudioClip) -> Result<VocoderParams, AudioError> {
        clip.require_pipeline_rate()?;
        if clip.len() < HOP {
            return Err(AudioError::TooShort { samples: clip.len(), min: HOP });
        }
        if self.f0_floor <= 0.0 || self.f0_ceil <= self.f0_floor || FS / self.f0_floor >= 1000.0 {
            return Err(AudioError::Analysis {
                backend: self.name().into(),
                reason: format!("unsupported F0 search range [{}, {}]", self.f0_floor, self.f0_ceil),
            });
        }
        let x: Vec<f64> = clip.samples().iter().map(|&v| v as f64).collect();
        let n_frames = frame_count(x.len());
        let ffts = Ffts::new();
        let f0_hz: Vec<f64> =
            self.estimate_f0(&x, n_frames).into_iter().enumerate().map(|(k, f)| refine_f0(&x, k, f, &ffts)).collect();
        let mut envelope = vec![0.0; n_frames * ENV_BINS];
        let mut aperiodicity = vec![0.0; n_frames * ENV_BINS];
        for k in 0..n_frames {
            let row = k * ENV_BINS..(k + 1) * ENV_BINS;
            self.envelope_frame(&x, k, f0_hz[k], &ffts, &mut envelope[row.clone()]);
            self.aperiodicity_frame(&x, k, f0_hz[k], &ffts, &mut aperiodicity[row]);
        }
        if envelope.iter().any(|v| !v.is_finite()) {
            return Err(AudioError::Analysis { backend: self.name().into(), reason: "non-finite envelope".into() });
        }
        Ok(VocoderParams { f0_hz, envelope, aperiodicity })
    }

    fn synthesize(&self, params: &VocoderParams) -> Result<AudioClip, AudioError> {
        params.validate()?;
        let n_frames = params.n_frames();
        let n = n_frames * HOP;
        let mut y = vec![0.0f64; n + ENV_FFT];
        if n_frames == 0 {
            return AudioClip::at_pipeline_rate(Vec::new());
        }
        let f0 = &params.f0_hz;

        // pitch marks: (time in samples, f0 at the mark, owning frame)
        let nearest = |t: f64| ((t - (HOP / 2) as f64) / HOP as f64).round().clamp(0.0, (n_frames - 1) as f64) as usize;
        let mut marks: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_frames];
        let mut phase = 0.0;
        let mut was_voiced = false;
        for t in 0..n {
            let tf = t as f64;
            let m = nearest(tf);
            if f0[m] <= 0.0 {
                was_voiced = false;
                continue;
            }
            let pos = ((tf - (HOP / 2) as f64) / HOP as f64).clamp(0.0, (n_frames - 1) as f64);
            let m0 = pos.floor() as usize;
            let m1 = (m0 + 1).min(n_frames - 1);
            let fr = pos - m0 as f64;
            let ft = if f0[m0] > 0.0 && f0[m1] > 0.0 { f0[m0] * (1.0 - fr) + f0[m1] * fr } else { f0[m] };
            if !was_voiced {
                phase = 1.0;
                was_voiced = true;
            } else {
                phase += ft / FS;
            }
            if phase >= 1.0 {
                let tc = tf - (phase - 1.0) / (ft / FS);
                phase -= 1.0;
                marks[nearest(tc)].push((tc, ft));
            }
        }

        let ffts = Ffts::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let noise_len = 2 * HOP;
        let noise_win: Vec<f64> = (0..noise_len).map(|i| (PI * (i as f64 + 0.5) / noise_len as f64).sin()).collect();
        let inv_n = 1.0 / ENV_FFT as f64;
        let mut buf = vec![Complex::new(0.0, 0.0); ENV_FFT];
        for m in 0..n_frames {
            let h = Self::min_phase_spectrum(params.envelope_frame(m), &ffts);
            let ap = params.aperiodicity_frame(m);

            // noise: sqrt-Hann windows overlap to unit power
            let start = frame_center(m) as isize - HOP as isize;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, w) in noise_win.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                buf[i].re = z * w;
            }
            ffts.env_fwd.process(&mut buf);
            let shaped = hermitian(|k| buf[k] * h[k] * ap[k].clamp(0.0, 1.0).sqrt());
            buf.copy_from_slice(&shaped);
            ffts.env_inv.process(&mut buf);
            for (i, c) in buf.iter().enumerate() {
                let t = start + i as isize;
                if t >= 0 && (t as usize) < y.len() {
                    y[t as usize] += c.re * inv_n;
                }
            }

            // pulses
            for &(tc, ft) in &marks[m] {
                let n0 = tc.floor();
                let delta = tc - n0;
                let amp = (FS / ft).sqrt();
                let spec = hermitian(|k| {
                    let shift = Complex::from_polar(1.0, -2.0 * PI * k as f64 * delta / ENV_FFT as f64);
                    h[k] * (1.0 - ap[k]).clamp(0.0, 1.0).sqrt() * shift
                });
                buf.copy_from_slice(&spec);
                ffts.env_inv.process(&mut buf);
                let base = n0 as usize;
                for (i, c) in buf.iter().enumerate() {
                    if base + i < y.len() {
                        y[base + i] += c.re * inv_n * amp;
                    }
                }
            }
        }
        y.truncate(n);
        AudioClip::at_pipeline_rate(y.into_iter().map(|v| v as f32).collect())
    }
}
