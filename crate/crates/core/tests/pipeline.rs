use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawvox::audio::{AudioClip, MagSpectrogram, HOP, N_BINS};
use rawvox::dataset::synth::{generate_corpus, SynthConfig};
use rawvox::dataset::{build_manifest, Split};
use rawvox::networks::*;
use rawvox::pipeline::*;

fn small() -> NetworkConfig {
    NetworkConfig {
        encoder_width: 24,
        decoder_width: 24,
        decoder_lstm_width: 24,
        postnet_width: 16,
        mix_cond_width: 16,
        f0_width: 16,
        ..NetworkConfig::default()
    }
}

fn models(n_singers: usize) -> SeparationModels {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    SeparationModels {
        student: StudentEncoder::new(&cfg, n_singers, &mut rng).unwrap(),
        sin: Some(SinDecoder::new(&cfg, n_singers, &mut rng).unwrap()),
        sdn: Some(SdnDecoder::new(&cfg, n_singers, &mut rng).unwrap()),
        f0: Some(F0Predictor::new(&cfg, n_singers, &mut rng).unwrap()),
    }
}

fn noise(n: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::at_pipeline_rate((0..n).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap()
}

#[test]
fn windowed_codes_cover_padded_length_with_unit_norm() {
    let m = models(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = MagSpectrogram::new(300, (0..300 * N_BINS).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let c = windowed_codes(&m.student, &spec).unwrap();
    assert_eq!(c.n_frames(), 320);
    for k in 0..c.n_codes() {
        let n: f32 = c.code(k).iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-4, "code {k} norm {n}");
    }

    // a single window reproduces the plain encoder output
    let short = spec.slice_frames(0, CODE_WINDOW_FRAMES);
    let a = windowed_codes(&m.student, &short).unwrap();
    let b = student_encode(&m.student, &short).unwrap();
    for k in 0..a.n_codes() {
        for (x, y) in a.code(k).iter().zip(b.code(k)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn separation_duration_and_determinism() {
    let m = models(3);
    let mix = noise(32000 + 777, 1);
    for mode in [SeparationMode::Sin, SeparationMode::Sdn] {
        let singer = (mode == SeparationMode::Sdn).then_some(1);
        let r = separate(&mix, mode, singer, &m).unwrap();
        assert!(r.vocal_clip.len().abs_diff(mix.len()) <= HOP, "{} vs {}", r.vocal_clip.len(), mix.len());
        assert_eq!(r.predicted_features.n_frames(), r.predicted_f0.len());
        assert_eq!(r.singer_id, singer);
        assert!(r.vocal_clip.samples().iter().all(|s| s.is_finite()));
        let again = separate(&mix, mode, singer, &m).unwrap();
        assert_eq!(r.vocal_clip, again.vocal_clip);
    }
}

#[test]
fn sdn_requires_valid_singer_and_models_must_be_present() {
    let mut m = models(3);
    let mix = noise(8000, 2);
    assert!(matches!(separate(&mix, SeparationMode::Sdn, None, &m), Err(PipelineError::Usage(_))));
    assert!(matches!(separate(&mix, SeparationMode::Sdn, Some(3), &m), Err(PipelineError::Usage(_))));
    m.f0 = None;
    assert!(matches!(separate(&mix, SeparationMode::Sin, None, &m), Err(PipelineError::MissingCheckpoint { stage: Stage::F0, .. })));

    let dir = tempfile::tempdir().unwrap();
    let err = SeparationModels::load(dir.path(), &[SeparationMode::Sin], true).err().unwrap();
    assert!(matches!(err, PipelineError::MissingCheckpoint { stage: Stage::StudentEncoder, .. }));
    ModelCheckpoint::from_network(&m.student).save(&dir.path().join(Stage::StudentEncoder.file_name())).unwrap();
    let err = SeparationModels::load(dir.path(), &[SeparationMode::Sin], false).err().unwrap();
    assert!(matches!(err, PipelineError::MissingCheckpoint { stage: Stage::Sin, .. }));
    ModelCheckpoint::from_network(m.sin.as_ref().unwrap()).save(&dir.path().join(Stage::Sin.file_name())).unwrap();
    let loaded = SeparationModels::load(dir.path(), &[SeparationMode::Sin], false).unwrap();
    assert!(loaded.sdn.is_none() && loaded.f0.is_none());
}

#[test]
fn evaluation_scores_oracle_zero_and_skips_broken_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_singers: 2, clips_per_singer: 3, test_per_singer: 1, min_secs: 1.0, max_secs: 1.1, seed: 9 };
    generate_corpus(dir.path(), &cfg).unwrap();
    let manifest = build_manifest(dir.path(), 0.0, 0).unwrap();
    let tests: Vec<_> = manifest.split(Split::Test).cloned().collect();
    assert_eq!(tests.len(), 2);
    std::fs::remove_file(&tests[1].vocal_path).unwrap();

    let m = models(2);
    let all = [EvalModel::Sin, EvalModel::Sdn, EvalModel::Mean, EvalModel::Oracle];
    let report = evaluate_mcd(&manifest, &m, &all, None).unwrap();
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].track_id, tests[1].song_id);
    assert_eq!(report.tracks.len(), 4);
    let oracle = report.aggregate("oracle").unwrap();
    assert_eq!(oracle.mcd_mean_db, 0.0);
    for tag in ["sin", "sdn", "mean"] {
        let a = report.aggregate(tag).unwrap();
        assert!(a.mcd_mean_db.is_finite() && a.mcd_mean_db > 0.0, "{tag}: {}", a.mcd_mean_db);
    }
    assert_eq!(report, evaluate_mcd(&manifest, &m, &all, None).unwrap());
}
