use rawvox::dataset::synth::{generate_corpus, SynthConfig};
use rawvox::dataset::{build_manifest, Corpus, Split};
use rawvox::networks::*;
use rawvox::training::*;

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        encoder_width: 16,
        decoder_width: 16,
        decoder_lstm_width: 16,
        postnet_width: 8,
        mix_cond_width: 8,
        f0_width: 8,
        f0_layers: 2,
        ..NetworkConfig::default()
    }
}

fn tiny_train(max_steps: usize) -> TrainConfig {
    TrainConfig { batch_size: 3, max_steps, validate_every: 2, val_batches: 1, learning_rate: 1e-3, ..TrainConfig::default() }
}

fn corpus(dir: &std::path::Path) -> Corpus {
    let cfg = SynthConfig { n_singers: 2, clips_per_singer: 3, test_per_singer: 1, min_secs: 0.8, max_secs: 0.9, seed: 3 };
    generate_corpus(dir, &cfg).unwrap();
    let m = build_manifest(dir, 0.25, 0).unwrap();
    Corpus::load(m, &[Split::Train, Split::Val], None).unwrap()
}

#[test]
fn dependent_stages_leave_frozen_networks_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path());
    let net = tiny_net();
    let (teacher_ck, _) = run_training_stage(Stage::Teacher, &corpus, &net, &tiny_train(3), &StageDeps::default()).unwrap();
    let before = teacher_ck.to_bytes();

    let deps = StageDeps { teacher: Some(teacher_ck.into_network().unwrap()), student: None };
    let (student_ck, report) = run_training_stage(Stage::StudentEncoder, &corpus, &net, &tiny_train(3), &deps).unwrap();
    assert_eq!(report.steps(), 3);
    assert_eq!(ModelCheckpoint::from_network(deps.teacher.as_ref().unwrap()).to_bytes(), before);

    let deps = StageDeps { teacher: None, student: Some(student_ck.clone().into_network().unwrap()) };
    for stage in [Stage::Sdn, Stage::Sin] {
        let (ck, _) = run_training_stage(stage, &corpus, &net, &tiny_train(2), &deps).unwrap();
        assert_eq!(ck.stage(), stage);
    }
    assert_eq!(ModelCheckpoint::from_network(deps.student.as_ref().unwrap()).to_bytes(), student_ck.to_bytes());
}

#[test]
fn same_seed_same_curve_and_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path());
    let run = |seed| {
        let cfg = TrainConfig { seed, ..tiny_train(4) };
        run_training_stage(Stage::F0, &corpus, &tiny_net(), &cfg, &StageDeps::default()).unwrap()
    };
    let (a_ck, a) = run(5);
    let (b_ck, b) = run(5);
    assert_eq!(a.train_losses, b.train_losses);
    assert_eq!(a.checks, b.checks);
    assert_eq!(a_ck.to_bytes(), b_ck.to_bytes());
    let (_, c) = run(6);
    assert_ne!(a.train_losses, c.train_losses);
}

#[test]
fn missing_dependency_names_both_stages() {
    let tmp = tempfile::tempdir().unwrap();
    for (stage, required) in [(Stage::StudentEncoder, Stage::Teacher), (Stage::Sin, Stage::StudentEncoder), (Stage::Sdn, Stage::StudentEncoder)] {
        let err = StageDeps::for_stage(stage, tmp.path(), &tiny_net()).err().unwrap();
        assert!(matches!(err, TrainingError::MissingDependency { stage: s, required: r } if s == stage && r == required));
        let msg = err.to_string();
        assert!(msg.contains(stage.as_str()) && msg.contains(required.as_str()), "{msg}");
    }
    assert!(StageDeps::for_stage(Stage::Teacher, tmp.path(), &tiny_net()).is_ok());
    assert!(StageDeps::for_stage(Stage::F0, tmp.path(), &tiny_net()).is_ok());

    // handing a stage the wrong dependencies is also refused
    let corpus_dir = tempfile::tempdir().unwrap();
    let corpus = corpus(corpus_dir.path());
    let err = run_training_stage(Stage::Sin, &corpus, &tiny_net(), &tiny_train(1), &StageDeps::default()).err().unwrap();
    assert!(matches!(err, TrainingError::MissingDependency { stage: Stage::Sin, required: Stage::StudentEncoder }));
}

#[test]
fn early_stopping_fires_when_validation_stalls() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path());
    // a vanishing step size leaves f32 weights untouched, so no check can improve
    let cfg = TrainConfig { learning_rate: 1e-30, patience: 2, validate_every: 1, max_steps: 50, ..tiny_train(50) };
    let (_, report) = run_training_stage(Stage::Teacher, &corpus, &tiny_net(), &cfg, &StageDeps::default()).unwrap();
    assert_eq!(report.stop_reason, StopReason::Early);
    assert_eq!(report.steps(), 2);
    assert_eq!(report.best_check, 0);
    assert_eq!(report.checks.len(), 3);
}

#[test]
fn best_weights_are_retained() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path());
    let (ck, report) = run_training_stage(Stage::Teacher, &corpus, &tiny_net(), &tiny_train(6), &StageDeps::default()).unwrap();
    assert_eq!(report.stop_reason, StopReason::MaxSteps);
    let best = report.best();
    assert!(report.checks.iter().all(|c| c.loss >= best.loss));
    assert!(best.loss < report.initial_val_loss());
    let jsonl = report.to_jsonl();
    assert_eq!(jsonl.lines().count(), report.steps() + report.checks.len() + 1);
    assert_eq!(ck.stage(), Stage::Teacher);
}
