//! The staged procedure: teacher, then student encoder, then the two
//! decoders and the F0 predictor.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawvox_nn::{clip_grad_norm, flush_denormals, Adam, Graph, ParamStore, Tensor, Var};

use super::losses::encoder_distill_loss_graph;
use super::{EarlyStopping, StageReport, StopReason, TrainConfig, TrainingError, ValidationCheck};
use crate::audio::{F0Quantizer, F0Scale, FEATURE_DIM, N_BINS};
use crate::dataset::{sample_training_batch, validation_batches, Corpus, Split, TrainingBatch};
use crate::networks::{
    singer_frames, F0Predictor, ModelCheckpoint, NetworkConfig, Scaler, SdnDecoder, SinDecoder, Stage, StageNetwork, StudentEncoder,
    Teacher,
};

/// Trained networks that later stages build on. Only the ones a stage
/// needs have to be present.
#[derive(Default)]
pub struct StageDeps {
    pub teacher: Option<Teacher<f32>>,
    pub student: Option<StudentEncoder<f32>>,
}

impl StageDeps {
    /// Loads the checkpoints `stage` depends on from `dir`, refusing ones
    /// built with a different network config.
    pub fn for_stage(stage: Stage, dir: &Path, cfg: &NetworkConfig) -> Result<Self, TrainingError> {
        let load = |required: Stage| -> Result<ModelCheckpoint, TrainingError> {
            let path = dir.join(required.file_name());
            if !path.exists() {
                return Err(TrainingError::MissingDependency { stage, required });
            }
            Ok(ModelCheckpoint::load(&path)?)
        };
        let mut deps = Self::default();
        match stage {
            Stage::StudentEncoder => deps.teacher = Some(load(Stage::Teacher)?.into_network_checked(cfg)?),
            Stage::Sdn | Stage::Sin => deps.student = Some(load(Stage::StudentEncoder)?.into_network_checked(cfg)?),
            Stage::Teacher | Stage::F0 => {}
        }
        Ok(deps)
    }

    /// The stages whose checkpoints `stage` consumes.
    pub fn required_by(stage: Stage) -> &'static [Stage] {
        match stage {
            Stage::StudentEncoder => &[Stage::Teacher],
            Stage::Sdn | Stage::Sin => &[Stage::StudentEncoder],
            Stage::Teacher | Stage::F0 => &[],
        }
    }
}

fn require<'a, N: StageNetwork<f32>>(dep: &'a Option<N>, stage: Stage, cfg: &NetworkConfig) -> Result<&'a N, TrainingError> {
    let net = dep.as_ref().ok_or(TrainingError::MissingDependency { stage, required: N::STAGE })?;
    if net.config() != cfg {
        return Err(TrainingError::Network(crate::networks::NetworkError::ConfigMismatch(format!(
            "the {} checkpoint was trained with a different network config",
            N::STAGE
        ))));
    }
    Ok(net)
}

/// Fits a feature scaler on every frame of the training split.
pub fn fit_feature_scaler(scaler: &Scaler, store: &mut ParamStore<f32>, corpus: &Corpus) {
    scaler.fit(store, corpus.split(Split::Train).flat_map(|s| s.features.values().chunks(FEATURE_DIM)));
}

/// Fits a magnitude scaler on log-compressed unit-gain training mixtures.
pub fn fit_mag_scaler(scaler: &Scaler, store: &mut ParamStore<f32>, corpus: &Corpus) {
    let mixes: Vec<Vec<f32>> = corpus
        .split(Split::Train)
        .map(|s| s.vocal_mag.values().iter().zip(s.backing_mag.values()).map(|(&v, &b)| crate::networks::mag_transform(v + b)).collect())
        .collect();
    scaler.fit(store, mixes.iter().flat_map(|m| m.chunks(N_BINS)));
}

/// Mean squared error in raw feature units between standardized tensors:
/// each dimension is weighted by its variance.
fn raw_feature_mse(g: &mut Graph<f32>, x_hat: Var, x: Var, scaler: &Scaler, store: &ParamStore<f32>) -> Var {
    let rows = g.value(x).rows();
    let var: Vec<f32> = scaler.std(store).iter().map(|s| s * s).collect();
    let total = var.iter().sum::<f32>() / FEATURE_DIM as f32;
    let weights = var.iter().copied().cycle().take(rows * FEATURE_DIM).collect();
    let l = g.masked_mse(x_hat, x, weights);
    g.scale(l, total)
}

fn batch_tensor(data: Vec<f32>, b: usize, t: usize) -> Tensor<f32> {
    let d = data.len() / (b * t);
    Tensor::from_vec(&[b, t, d], data)
}

fn singer_input(g: &mut Graph<f32>, batch: &TrainingBatch, n_singers: usize) -> Var {
    let idx: Vec<usize> = batch.singers.iter().map(|s| s.index()).collect();
    g.input(singer_frames(&idx, n_singers, batch.frames()))
}

/// One trainable network plus whatever frozen networks feed it.
trait Task {
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var;
}

struct TeacherTask {
    net: Teacher<f32>,
    lambda: f64,
}

impl Task for TeacherTask {
    fn store(&self) -> &ParamStore<f32> {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.store
    }
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var {
        let (b, t) = (batch.batch_size, batch.frames());
        let x = g.input(batch_tensor(self.net.x_scaler.normalize(&self.net.store, &batch.vocal_features), b, t));
        let s = singer_input(g, batch, self.net.n_singers());
        let c = self.net.encode(g, x, s);
        let x_hat = self.net.decode(g, c, s);
        let c_hat = self.net.encode(g, x_hat, s);
        let rec = raw_feature_mse(g, x_hat, x, &self.net.x_scaler, &self.net.store);
        let content = encoder_distill_loss_graph(g, c_hat, c);
        let content = g.scale(content, self.lambda as f32);
        g.add(rec, content)
    }
}

struct StudentTask<'a> {
    net: StudentEncoder<f32>,
    teacher: &'a Teacher<f32>,
}

impl Task for StudentTask<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.store
    }
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var {
        let (b, t) = (batch.batch_size, batch.frames());
        let target = {
            let mut ge = Graph::eval();
            let x = ge.input(batch_tensor(self.teacher.x_scaler.normalize(&self.teacher.store, &batch.vocal_features), b, t));
            let s = singer_input(&mut ge, batch, self.teacher.n_singers());
            let c = self.teacher.encode(&mut ge, x, s);
            ge.into_value(c)
        };
        let m = g.input(batch_tensor(self.net.prepare(&batch.mixture_mag), b, t));
        let c_spec = self.net.encode(g, m);
        let c_avc = g.input(target);
        encoder_distill_loss_graph(g, c_spec, c_avc)
    }
}

fn student_codes(student: &StudentEncoder<f32>, batch: &TrainingBatch) -> Tensor<f32> {
    let mut ge = Graph::eval();
    let m = ge.input(batch_tensor(student.prepare(&batch.mixture_mag), batch.batch_size, batch.frames()));
    let c = student.encode(&mut ge, m);
    ge.into_value(c)
}

struct SdnTask<'a> {
    net: SdnDecoder<f32>,
    student: &'a StudentEncoder<f32>,
}

impl Task for SdnTask<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.store
    }
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var {
        let (b, t) = (batch.batch_size, batch.frames());
        let c = g.input(student_codes(self.student, batch));
        let s = singer_input(g, batch, self.net.n_singers());
        let x = g.input(batch_tensor(self.net.x_scaler.normalize(&self.net.store, &batch.vocal_features), b, t));
        let x_hat = self.net.decode(g, c, s);
        raw_feature_mse(g, x_hat, x, &self.net.x_scaler, &self.net.store)
    }
}

struct SinTask<'a> {
    net: SinDecoder<f32>,
    student: &'a StudentEncoder<f32>,
}

impl Task for SinTask<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.store
    }
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var {
        let (b, t) = (batch.batch_size, batch.frames());
        let c = g.input(student_codes(self.student, batch));
        let m = g.input(batch_tensor(self.net.prepare(&batch.mixture_mag), b, t));
        let x = g.input(batch_tensor(self.net.x_scaler.normalize(&self.net.store, &batch.vocal_features), b, t));
        let x_hat = self.net.decode(g, c, m);
        raw_feature_mse(g, x_hat, x, &self.net.x_scaler, &self.net.store)
    }
}

struct F0Task {
    net: F0Predictor<f32>,
    /// Semitones spanned by the normalized range.
    semitones: f32,
    scale: F0Scale,
    quantizer: F0Quantizer,
}

impl Task for F0Task {
    fn store(&self) -> &ParamStore<f32> {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.net.store
    }
    /// Both heads are trained together: masked MSE on the normalized pitch
    /// of voiced frames (in squared semitones), voicing BCE, and class
    /// cross-entropy.
    fn loss(&self, g: &mut Graph<f32>, batch: &TrainingBatch) -> Var {
        let (b, t) = (batch.batch_size, batch.frames());
        let m = g.input(batch_tensor(self.net.prepare(&batch.mixture_mag), b, t));
        let (cont, disc) = self.net.forward(g, m);
        let (values, voiced) = batch.f0_continuous(&self.scale);
        let z_pitch = g.slice_last(cont, 0, 1);
        let z_voice = g.slice_last(cont, 1, 1);
        let pitch = g.sigmoid(z_pitch);
        let target = g.input(Tensor::from_vec(&[b, t, 1], values));
        let l_pitch = g.masked_mse(pitch, target, voiced.clone());
        let l_pitch = g.scale(l_pitch, self.semitones * self.semitones);
        let l_voice = g.bce_with_logits(z_voice, voiced, vec![1.0; b * t]);
        let l_class = g.softmax_cross_entropy(disc, batch.f0_classes(&self.quantizer));
        let l = g.add(l_pitch, l_voice);
        g.add(l, l_class)
    }
}

fn snapshot(store: &ParamStore<f32>) -> Vec<Tensor<f32>> {
    store.entries().iter().map(|e| e.value.clone()).collect()
}

fn restore(store: &mut ParamStore<f32>, values: Vec<Tensor<f32>>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.get_mut(id) = v;
    }
}

fn validation_loss(task: &impl Task, batches: &[TrainingBatch]) -> f64 {
    let total: f64 = batches
        .iter()
        .map(|b| {
            let mut g = Graph::eval();
            let l = task.loss(&mut g, b);
            g.value(l).item() as f64
        })
        .sum();
    total / batches.len() as f64
}

fn fit(task: &mut impl Task, stage: Stage, corpus: &Corpus, cfg: &TrainConfig) -> Result<StageReport, TrainingError> {
    flush_denormals();
    let started = Instant::now();
    let gains = cfg.gains()?;
    let val = validation_batches(corpus, cfg.batch_size, cfg.val_batches, cfg.mix_domain, cfg.seed ^ 0x0a11_da7e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(stage as u64 * 0x9e37_79b9));
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut checks = Vec::new();
    let mut train_losses = Vec::new();

    let initial = validation_loss(task, &val);
    info!("{stage}: initial validation loss {initial:.5}");
    checks.push(ValidationCheck { check: 0, step: 0, loss: initial });
    stopper.record(0, initial);
    let mut best = snapshot(task.store());
    let mut stop_reason = StopReason::MaxSteps;

    for step in 1..=cfg.max_steps {
        let batch = sample_training_batch(corpus, Split::Train, cfg.batch_size, gains, cfg.mix_domain, &mut rng)?;
        let mut g = Graph::train();
        let loss = task.loss(&mut g, &batch);
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(TrainingError::Diverged { stage, step });
        }
        train_losses.push(value);
        let grads = g.backward(loss);
        let mut pg = g.param_grads(&grads, task.store());
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut pg, cfg.grad_clip);
        }
        adam.step(task.store_mut(), &pg);
        debug!("{stage}: step {step} loss {value:.5}");

        if step % cfg.validate_every == 0 {
            let loss = validation_loss(task, &val);
            let check = checks.len();
            checks.push(ValidationCheck { check, step, loss });
            let improved = stopper.record(check, loss);
            info!("{stage}: step {step} train {value:.5} validation {loss:.5}{}", if improved { " *" } else { "" });
            if improved {
                best = snapshot(task.store());
            }
            if stopper.should_stop() {
                stop_reason = StopReason::Early;
                break;
            }
        }
    }
    restore(task.store_mut(), best);
    Ok(StageReport {
        stage,
        train_losses,
        checks,
        best_check: stopper.best_index(),
        stop_reason,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains one stage on the corpus' train split with early stopping on the
/// validation split. Returns the best-validation weights.
pub fn run_training_stage(
    stage: Stage,
    corpus: &Corpus,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    deps: &StageDeps,
) -> Result<(ModelCheckpoint, StageReport), TrainingError> {
    cfg.validate()?;
    net_cfg.validate()?;
    let n = corpus.n_singers();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match stage {
        Stage::Teacher => {
            let mut net = Teacher::new(net_cfg, n, &mut rng)?;
            fit_feature_scaler(&net.x_scaler, &mut net.store, corpus);
            let mut task = TeacherTask { net, lambda: cfg.lambda_content };
            let report = fit(&mut task, stage, corpus, cfg)?;
            Ok((ModelCheckpoint::from_network(&task.net), report))
        }
        Stage::StudentEncoder => {
            let teacher = require(&deps.teacher, stage, net_cfg)?;
            let mut net = StudentEncoder::new(net_cfg, n, &mut rng)?;
            fit_mag_scaler(&net.mag_scaler, &mut net.store, corpus);
            let mut task = StudentTask { net, teacher };
            let report = fit(&mut task, stage, corpus, cfg)?;
            Ok((ModelCheckpoint::from_network(&task.net), report))
        }
        Stage::Sdn => {
            let student = require(&deps.student, stage, net_cfg)?;
            let mut net = SdnDecoder::new(net_cfg, n, &mut rng)?;
            fit_feature_scaler(&net.x_scaler, &mut net.store, corpus);
            let mut task = SdnTask { net, student };
            let report = fit(&mut task, stage, corpus, cfg)?;
            Ok((ModelCheckpoint::from_network(&task.net), report))
        }
        Stage::Sin => {
            let student = require(&deps.student, stage, net_cfg)?;
            let mut net = SinDecoder::new(net_cfg, n, &mut rng)?;
            fit_feature_scaler(&net.x_scaler, &mut net.store, corpus);
            fit_mag_scaler(&net.mag_scaler, &mut net.store, corpus);
            let mut task = SinTask { net, student };
            let report = fit(&mut task, stage, corpus, cfg)?;
            Ok((ModelCheckpoint::from_network(&task.net), report))
        }
        Stage::F0 => {
            let mut net = F0Predictor::new(net_cfg, n, &mut rng)?;
            fit_mag_scaler(&net.mag_scaler, &mut net.store, corpus);
            let scale = net_cfg.f0_scale();
            let quantizer = net.quantizer();
            let semitones = (12.0 * (net_cfg.f0_max_hz / net_cfg.f0_min_hz).log2()) as f32;
            let mut task = F0Task { net, semitones, scale, quantizer };
            let report = fit(&mut task, stage, corpus, cfg)?;
            Ok((ModelCheckpoint::from_network(&task.net), report))
        }
    }
}
