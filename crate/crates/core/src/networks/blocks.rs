//! Building blocks shared by the teacher, student and decoders. Every conv
//! in the main stacks is followed by a per-frame layer norm and a ReLU.

use rand::Rng;
use rawvox_nn::layers::{BiLstm, Conv1d, Init, Linear, Lstm};
use rawvox_nn::{Graph, ParamStore, Real, Var};

use super::NetworkConfig;
use crate::audio::FEATURE_DIM;

/// Conv stack, bidirectional LSTM with `code_dim / 2` units per direction,
/// then bottleneck sampling every `downsample_factor` frames. Each code is
/// scaled to unit L2 norm so the content loss cannot be lowered by
/// shrinking the codes.
#[derive(Clone, Debug)]
pub struct ContentEncoder {
    convs: Vec<Conv1d>,
    lstm: BiLstm,
    factor: usize,
}

impl ContentEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, in_dim: usize, cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut width = in_dim;
        for i in 0..cfg.encoder_conv_layers {
            convs.push(Conv1d::new(store, &format!("{name}.conv{i}"), width, cfg.encoder_width, cfg.kernel, 1, Init::He, rng));
            width = cfg.encoder_width;
        }
        let lstm = BiLstm::new(store, &format!("{name}.lstm"), width, cfg.code_dim / 2, rng);
        Self { convs, lstm, factor: cfg.downsample_factor }
    }

    /// `[B, T, in] -> [B, T / factor, code_dim]`
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Var {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, p, h);
            h = g.layer_norm(h);
            h = g.relu(h);
        }
        let h = self.lstm.forward(g, p, h);
        let c = g.code_downsample(h, self.factor);
        g.l2_normalize(c)
    }
}

/// Upsampled codes (plus a per-frame condition) through a conv stack, an
/// LSTM and a linear projection to the 64 features, refined by a residual
/// post-stack.
#[derive(Clone, Debug)]
pub struct FeatureDecoder {
    convs: Vec<Conv1d>,
    lstm: Lstm,
    proj: Linear,
    postnet: Vec<Conv1d>,
    factor: usize,
}

impl FeatureDecoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cond_dim: usize, cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut width = cfg.code_dim + cond_dim;
        for i in 0..cfg.decoder_conv_layers {
            convs.push(Conv1d::new(store, &format!("{name}.conv{i}"), width, cfg.decoder_width, cfg.kernel, 1, Init::He, rng));
            width = cfg.decoder_width;
        }
        let lstm = Lstm::new(store, &format!("{name}.lstm"), width, cfg.decoder_lstm_width, false, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), cfg.decoder_lstm_width, FEATURE_DIM, Init::Xavier, rng);
        let mut postnet = Vec::new();
        let mut width = FEATURE_DIM;
        for i in 0..cfg.postnet_layers {
            let out = if i + 1 == cfg.postnet_layers { FEATURE_DIM } else { cfg.postnet_width };
            let conv = Conv1d::new(store, &format!("{name}.post{i}"), width, out, cfg.kernel, 1, Init::Xavier, rng);
            if i + 1 == cfg.postnet_layers {
                // the refinement starts as an identity map
                store.get_mut(conv.w).data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
            postnet.push(conv);
            width = out;
        }
        Self { convs, lstm, proj, postnet, factor: cfg.downsample_factor }
    }

    /// `codes: [B, N, code_dim]`, `cond: [B, N * factor, cond_dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>, codes: Var, cond: Option<Var>) -> Var {
        let up = g.upsample(codes, self.factor);
        let mut h = match cond {
            Some(c) => g.concat(&[up, c]),
            None => up,
        };
        for c in &self.convs {
            h = c.forward(g, p, h);
            h = g.layer_norm(h);
            h = g.relu(h);
        }
        let h = self.lstm.forward(g, p, h);
        let coarse = self.proj.forward(g, p, h);
        let mut r = coarse;
        for (i, c) in self.postnet.iter().enumerate() {
            r = c.forward(g, p, r);
            if i + 1 < self.postnet.len() {
                r = g.tanh(r);
            }
        }
        if self.postnet.is_empty() {
            coarse
        } else {
            g.add(coarse, r)
        }
    }
}
