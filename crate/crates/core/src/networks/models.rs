use rand::{Rng, RngCore};
use rawvox_nn::layers::{Conv1d, Init, Linear};
use rawvox_nn::{softmax, Graph, ParamStore, Real, Tensor, Var};

use super::{mag_transform, ContentEmbedding, ContentEncoder, F0Mode, FeatureDecoder, NetworkConfig, NetworkError, Scaler, Stage};
use crate::audio::{F0Contour, F0Quantizer, MagSpectrogram, VocoderFeatures, FEATURE_DIM, N_BINS};
use crate::dataset::SingerVector;

/// Common surface used by checkpoints and the training loop.
pub trait StageNetwork<T: Real>: Sized {
    const STAGE: Stage;

    fn build(cfg: &NetworkConfig, n_singers: usize, rng: &mut dyn RngCore) -> Result<Self, NetworkError>;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    fn config(&self) -> &NetworkConfig;
    fn n_singers(&self) -> usize;
}

macro_rules! stage_network {
    ($ty:ident, $stage:expr) => {
        impl<T: Real> StageNetwork<T> for $ty<T> {
            const STAGE: Stage = $stage;

            fn build(cfg: &NetworkConfig, n_singers: usize, rng: &mut dyn RngCore) -> Result<Self, NetworkError> {
                $ty::new(cfg, n_singers, rng)
            }
            fn store(&self) -> &ParamStore<T> {
                &self.store
            }
            fn store_mut(&mut self) -> &mut ParamStore<T> {
                &mut self.store
            }
            fn config(&self) -> &NetworkConfig {
                &self.cfg
            }
            fn n_singers(&self) -> usize {
                self.n_singers
            }
        }
    };
}

/// One-hot singer rows broadcast over `frames`: `[B, frames, n_singers]`.
pub fn singer_frames<T: Real>(singers: &[usize], n_singers: usize, frames: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); singers.len() * frames * n_singers];
    for (b, &s) in singers.iter().enumerate() {
        for t in 0..frames {
            data[(b * frames + t) * n_singers + s] = T::one();
        }
    }
    Tensor::from_vec(&[singers.len(), frames, n_singers], data)
}

fn check_singer(s: SingerVector, n_singers: usize) -> Result<(), NetworkError> {
    if s.index() >= n_singers || s.n_singers() != n_singers {
        return Err(NetworkError::SingerOutOfRange { index: s.index(), n_singers });
    }
    Ok(())
}

fn check_frames(frames: usize, factor: usize) -> Result<(), NetworkError> {
    if frames == 0 || frames % factor != 0 {
        return Err(NetworkError::NotMultiple { frames, factor });
    }
    Ok(())
}

fn setup(cfg: &NetworkConfig, n_singers: usize) -> Result<(), NetworkError> {
    cfg.validate()?;
    if n_singers == 0 {
        return Err(NetworkError::Config("at least one singer is required".into()));
    }
    Ok(())
}

fn embedding_from<T: Real>(t: &Tensor<T>, factor: usize) -> Result<ContentEmbedding, NetworkError> {
    let (_, n, c) = t.dims3();
    ContentEmbedding::new(n, c, factor, t.data().iter().map(|v| v.as_f64() as f32).collect())
}

fn codes_input<T: Real>(g: &mut Graph<T>, c: &ContentEmbedding) -> Var {
    g.input(Tensor::from_vec(&[1, c.n_codes(), c.code_dim()], c.values().iter().map(|&v| T::lit(v as f64)).collect()))
}

/// Standardized, log-compressed magnitudes `[rows x 513]`.
fn prepare_mag<T: Real>(scaler: &Scaler, store: &ParamStore<T>, mags: &[f32]) -> Vec<T> {
    let compressed: Vec<f32> = mags.iter().map(|&m| mag_transform(m)).collect();
    scaler.normalize(store, &compressed)
}

/// Teacher autoencoder: `E(X, S)` and `D(C, S)`.
pub struct Teacher<T: Real> {
    pub store: ParamStore<T>,
    pub x_scaler: Scaler,
    pub encoder: ContentEncoder,
    pub decoder: FeatureDecoder,
    cfg: NetworkConfig,
    n_singers: usize,
}
stage_network!(Teacher, Stage::Teacher);

impl<T: Real> Teacher<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, n_singers: usize, rng: &mut R) -> Result<Self, NetworkError> {
        setup(cfg, n_singers)?;
        let mut store = ParamStore::new();
        let x_scaler = Scaler::new(&mut store, "x_scaler", FEATURE_DIM);
        let encoder = ContentEncoder::new(&mut store, "enc", FEATURE_DIM + n_singers, cfg, rng);
        let decoder = FeatureDecoder::new(&mut store, "dec", n_singers, cfg, rng);
        Ok(Self { store, x_scaler, encoder, decoder, cfg: cfg.clone(), n_singers })
    }

    /// `x`: standardized features `[B, T, 64]`; `s`: one-hot rows `[B, T, N]`.
    pub fn encode(&self, g: &mut Graph<T>, x: Var, s: Var) -> Var {
        let h = g.concat(&[x, s]);
        self.encoder.forward(g, &self.store, h)
    }

    pub fn decode(&self, g: &mut Graph<T>, c: Var, s: Var) -> Var {
        self.decoder.forward(g, &self.store, c, Some(s))
    }

    /// Encodes and reconstructs one feature sequence in evaluation mode.
    pub fn forward_features(&self, x: &VocoderFeatures, s: SingerVector) -> Result<(ContentEmbedding, VocoderFeatures), NetworkError> {
        check_singer(s, self.n_singers)?;
        let t = x.n_frames();
        check_frames(t, self.cfg.downsample_factor)?;
        let mut g = Graph::eval();
        let xv = g.input(Tensor::from_vec(&[1, t, FEATURE_DIM], self.x_scaler.normalize(&self.store, x.values())));
        let sv = g.input(singer_frames(&[s.index()], self.n_singers, t));
        let c = self.encode(&mut g, xv, sv);
        let y = self.decode(&mut g, c, sv);
        let code = embedding_from(g.value(c), self.cfg.downsample_factor)?;
        let feats = VocoderFeatures::new(t, self.x_scaler.denormalize(&self.store, g.value(y).data()))
            .map_err(|e| NetworkError::Config(e.to_string()))?;
        Ok((code, feats))
    }
}

/// Student encoder on mixture magnitudes; it has no singer input.
pub struct StudentEncoder<T: Real> {
    pub store: ParamStore<T>,
    pub mag_scaler: Scaler,
    pub encoder: ContentEncoder,
    cfg: NetworkConfig,
    n_singers: usize,
}
stage_network!(StudentEncoder, Stage::StudentEncoder);

impl<T: Real> StudentEncoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, n_singers: usize, rng: &mut R) -> Result<Self, NetworkError> {
        setup(cfg, n_singers)?;
        let mut store = ParamStore::new();
        let mag_scaler = Scaler::new(&mut store, "mag_scaler", N_BINS);
        let encoder = ContentEncoder::new(&mut store, "enc", N_BINS, cfg, rng);
        Ok(Self { store, mag_scaler, encoder, cfg: cfg.clone(), n_singers })
    }

    pub fn prepare(&self, mags: &[f32]) -> Vec<T> {
        prepare_mag(&self.mag_scaler, &self.store, mags)
    }

    /// `m`: prepared magnitudes `[B, T, 513]`.
    pub fn encode(&self, g: &mut Graph<T>, m: Var) -> Var {
        self.encoder.forward(g, &self.store, m)
    }

    pub fn encode_mag(&self, m: &MagSpectrogram) -> Result<ContentEmbedding, NetworkError> {
        let t = m.n_frames();
        check_frames(t, self.cfg.downsample_factor)?;
        let mut g = Graph::eval();
        let mv = g.input(Tensor::from_vec(&[1, t, N_BINS], self.prepare(m.values())));
        let c = self.encode(&mut g, mv);
        embedding_from(g.value(c), self.cfg.downsample_factor)
    }
}

/// Singer-dependent decoder `D(C, S)`, same architecture as the teacher's.
pub struct SdnDecoder<T: Real> {
    pub store: ParamStore<T>,
    pub x_scaler: Scaler,
    pub decoder: FeatureDecoder,
    cfg: NetworkConfig,
    n_singers: usize,
}
stage_network!(SdnDecoder, Stage::Sdn);

impl<T: Real> SdnDecoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, n_singers: usize, rng: &mut R) -> Result<Self, NetworkError> {
        setup(cfg, n_singers)?;
        let mut store = ParamStore::new();
        let x_scaler = Scaler::new(&mut store, "x_scaler", FEATURE_DIM);
        let decoder = FeatureDecoder::new(&mut store, "dec", n_singers, cfg, rng);
        Ok(Self { store, x_scaler, decoder, cfg: cfg.clone(), n_singers })
    }

    pub fn decode(&self, g: &mut Graph<T>, c: Var, s: Var) -> Var {
        self.decoder.forward(g, &self.store, c, Some(s))
    }

    pub fn decode_features(&self, c: &ContentEmbedding, s: SingerVector) -> Result<VocoderFeatures, NetworkError> {
        check_singer(s, self.n_singers)?;
        let t = c.n_frames();
        let mut g = Graph::eval();
        let cv = codes_input(&mut g, c);
        let sv = g.input(singer_frames(&[s.index()], self.n_singers, t));
        let y = self.decode(&mut g, cv, sv);
        VocoderFeatures::new(t, self.x_scaler.denormalize(&self.store, g.value(y).data())).map_err(|e| NetworkError::Config(e.to_string()))
    }
}

/// Singer-independent decoder `D(C, M)`.
pub struct SinDecoder<T: Real> {
    pub store: ParamStore<T>,
    pub x_scaler: Scaler,
    pub mag_scaler: Scaler,
    pub mix_proj: Linear,
    pub decoder: FeatureDecoder,
    cfg: NetworkConfig,
    n_singers: usize,
}
stage_network!(SinDecoder, Stage::Sin);

impl<T: Real> SinDecoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, n_singers: usize, rng: &mut R) -> Result<Self, NetworkError> {
        setup(cfg, n_singers)?;
        let mut store = ParamStore::new();
        let x_scaler = Scaler::new(&mut store, "x_scaler", FEATURE_DIM);
        let mag_scaler = Scaler::new(&mut store, "mag_scaler", N_BINS);
        let mix_proj = Linear::new(&mut store, "mix_proj", N_BINS, cfg.mix_cond_width, Init::He, rng);
        let decoder = FeatureDecoder::new(&mut store, "dec", cfg.mix_cond_width, cfg, rng);
        Ok(Self { store, x_scaler, mag_scaler, mix_proj, decoder, cfg: cfg.clone(), n_singers })
    }

    pub fn prepare(&self, mags: &[f32]) -> Vec<T> {
        prepare_mag(&self.mag_scaler, &self.store, mags)
    }

    /// `m`: prepared magnitudes `[B, T, 513]`.
    pub fn decode(&self, g: &mut Graph<T>, c: Var, m: Var) -> Var {
        let cond = self.mix_proj.forward(g, &self.store, m);
        let cond = g.relu(cond);
        self.decoder.forward(g, &self.store, c, Some(cond))
    }

    pub fn decode_features(&self, c: &ContentEmbedding, m: &MagSpectrogram) -> Result<VocoderFeatures, NetworkError> {
        let t = m.n_frames();
        if c.n_frames() != t {
            return Err(NetworkError::FrameMismatch { codes: c.n_frames(), frames: t });
        }
        let mut g = Graph::eval();
        let cv = codes_input(&mut g, c);
        let mv = g.input(Tensor::from_vec(&[1, t, N_BINS], self.prepare(m.values())));
        let y = self.decode(&mut g, cv, mv);
        VocoderFeatures::new(t, self.x_scaler.denormalize(&self.store, g.value(y).data())).map_err(|e| NetworkError::Config(e.to_string()))
    }
}

/// Temporal conv stack on magnitudes with a continuous head (normalized
/// pitch and voicing logits) and a discrete head (`n_bins + 1` classes).
pub struct F0Predictor<T: Real> {
    pub store: ParamStore<T>,
    pub mag_scaler: Scaler,
    convs: Vec<Conv1d>,
    cont_head: Linear,
    disc_head: Linear,
    cfg: NetworkConfig,
    n_singers: usize,
}
stage_network!(F0Predictor, Stage::F0);

impl<T: Real> F0Predictor<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, n_singers: usize, rng: &mut R) -> Result<Self, NetworkError> {
        setup(cfg, n_singers)?;
        let mut store = ParamStore::new();
        let mag_scaler = Scaler::new(&mut store, "mag_scaler", N_BINS);
        let mut convs = Vec::new();
        let mut width = N_BINS;
        for i in 0..cfg.f0_layers {
            let dilation = 1 << (i / 2).min(3);
            convs.push(Conv1d::new(&mut store, &format!("f0.conv{i}"), width, cfg.f0_width, cfg.kernel, dilation, Init::He, rng));
            width = cfg.f0_width;
        }
        let cont_head = Linear::new(&mut store, "f0.continuous", width, 2, Init::Xavier, rng);
        let disc_head = Linear::new(&mut store, "f0.discrete", width, cfg.f0_bins + 1, Init::Xavier, rng);
        Ok(Self { store, mag_scaler, convs, cont_head, disc_head, cfg: cfg.clone(), n_singers })
    }

    pub fn n_classes(&self) -> usize {
        self.cfg.f0_bins + 1
    }

    pub fn prepare(&self, mags: &[f32]) -> Vec<T> {
        prepare_mag(&self.mag_scaler, &self.store, mags)
    }

    /// Returns `(continuous logits [B, T, 2], class logits [B, T, n_bins + 1])`.
    /// Channel 0 of the continuous head is the pitch logit, channel 1 the
    /// voicing logit.
    pub fn forward(&self, g: &mut Graph<T>, m: Var) -> (Var, Var) {
        let mut h = m;
        for c in &self.convs {
            h = c.forward(g, &self.store, h);
            h = g.layer_norm(h);
            h = g.relu(h);
        }
        (self.cont_head.forward(g, &self.store, h), self.disc_head.forward(g, &self.store, h))
    }

    fn run(&self, m: &MagSpectrogram) -> (Tensor<T>, Tensor<T>) {
        let t = m.n_frames();
        let mut g = Graph::eval();
        let mv = g.input(Tensor::from_vec(&[1, t, N_BINS], self.prepare(m.values())));
        let (c, d) = self.forward(&mut g, mv);
        (g.value(c).clone(), g.value(d).clone())
    }

    /// Per-frame class distribution, `[T x (n_bins + 1)]`.
    pub fn class_probabilities(&self, m: &MagSpectrogram) -> Vec<f64> {
        let (_, d) = self.run(m);
        softmax(&d.cast::<f64>()).into_data()
    }

    pub fn predict(&self, m: &MagSpectrogram, mode: F0Mode) -> F0Contour {
        let (c, d) = self.run(m);
        let t = m.n_frames();
        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        match mode {
            F0Mode::Continuous => {
                let raw = c.data();
                let voiced: Vec<bool> = (0..t).map(|k| raw[2 * k + 1].as_f64() > 0.0).collect();
                let values = (0..t).map(|k| if voiced[k] { sigmoid(raw[2 * k].as_f64()) } else { 0.0 }).collect();
                F0Contour::Continuous { values, voiced }
            }
            F0Mode::Discrete => {
                let n = self.n_classes();
                let classes = d
                    .data()
                    .chunks(n)
                    .map(|row| (0..n).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal)).unwrap_or(0))
                    .collect();
                F0Contour::Discrete { classes, n_bins: self.cfg.f0_bins }
            }
        }
    }

    pub fn quantizer(&self) -> F0Quantizer {
        F0Quantizer::new(self.cfg.f0_scale(), self.cfg.f0_bins).expect("validated config")
    }
}

pub fn teacher_forward(
    net: &Teacher<f32>,
    x: &VocoderFeatures,
    s: SingerVector,
) -> Result<(ContentEmbedding, VocoderFeatures), NetworkError> {
    net.forward_features(x, s)
}

pub fn student_encode(net: &StudentEncoder<f32>, m: &MagSpectrogram) -> Result<ContentEmbedding, NetworkError> {
    net.encode_mag(m)
}

pub fn sdn_decode(net: &SdnDecoder<f32>, c: &ContentEmbedding, s: SingerVector) -> Result<VocoderFeatures, NetworkError> {
    net.decode_features(c, s)
}

pub fn sin_decode(net: &SinDecoder<f32>, c: &ContentEmbedding, m: &MagSpectrogram) -> Result<VocoderFeatures, NetworkError> {
    net.decode_features(c, m)
}

pub fn f0_predict(net: &F0Predictor<f32>, m: &MagSpectrogram, mode: F0Mode) -> F0Contour {
    net.predict(m, mode)
}
