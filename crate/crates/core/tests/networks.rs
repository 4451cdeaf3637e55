use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawvox::audio::{F0Contour, MagSpectrogram, VocoderFeatures, FEATURE_DIM, N_BINS};
use rawvox::dataset::SingerVector;
use rawvox::networks::*;

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

fn features(frames: usize, seed: u64) -> VocoderFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VocoderFeatures::new(frames, (0..frames * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mags(frames: usize, seed: u64) -> MagSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MagSpectrogram::new(frames, (0..frames * N_BINS).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
}

#[test]
fn teacher_shapes_and_determinism() {
    let net: Teacher<f32> = Teacher::new(&small(), 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = features(128, 2);
    let s = SingerVector::new(2, 4);
    let (c, y) = teacher_forward(&net, &x, s).unwrap();
    assert_eq!((c.n_codes(), c.code_dim()), (8, 64));
    assert_eq!(c.n_frames(), 128);
    assert_eq!(y.n_frames(), 128);
    assert_eq!(y.values().len(), 128 * FEATURE_DIM);
    let (c2, y2) = teacher_forward(&net, &x, s).unwrap();
    assert_eq!(c, c2);
    assert_eq!(y, y2);
}

#[test]
fn singer_out_of_range_and_bad_lengths_are_rejected() {
    let net: Teacher<f32> = Teacher::new(&small(), 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let err = teacher_forward(&net, &features(128, 0), SingerVector::new(5, 6)).unwrap_err();
    assert!(matches!(err, NetworkError::SingerOutOfRange { index: 5, n_singers: 4 }));
    let err = teacher_forward(&net, &features(100, 0), SingerVector::new(0, 4)).unwrap_err();
    assert!(matches!(err, NetworkError::NotMultiple { frames: 100, factor: 16 }));
    let student: StudentEncoder<f32> = StudentEncoder::new(&small(), 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(matches!(student_encode(&student, &mags(40, 0)), Err(NetworkError::NotMultiple { .. })));
}

#[test]
fn student_and_decoders_agree_on_shapes() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let student: StudentEncoder<f32> = StudentEncoder::new(&cfg, 3, &mut rng).unwrap();
    let sdn: SdnDecoder<f32> = SdnDecoder::new(&cfg, 3, &mut rng).unwrap();
    let sin: SinDecoder<f32> = SinDecoder::new(&cfg, 3, &mut rng).unwrap();
    let m = mags(128, 4);
    let c = student_encode(&student, &m).unwrap();
    assert_eq!((c.n_codes(), c.code_dim()), (8, 64));
    assert_eq!(c, student_encode(&student, &m).unwrap());
    let a = sdn_decode(&sdn, &c, SingerVector::new(1, 3)).unwrap();
    let b = sin_decode(&sin, &c, &m).unwrap();
    assert_eq!(a.n_frames(), 128);
    assert_eq!(b.n_frames(), 128);
    assert!(matches!(sin_decode(&sin, &c, &mags(64, 0)), Err(NetworkError::FrameMismatch { codes: 128, frames: 64 })));
}

#[test]
fn f0_predictor_outputs_valid_contours() {
    let cfg = small();
    let net: F0Predictor<f32> = F0Predictor::new(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let m = mags(50, 6);
    match f0_predict(&net, &m, F0Mode::Continuous) {
        F0Contour::Continuous { values, voiced } => {
            assert_eq!(values.len(), 50);
            for (v, on) in values.iter().zip(&voiced) {
                assert!((0.0..=1.0).contains(v));
                if !on {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        other => panic!("unexpected contour {other:?}"),
    }
    match f0_predict(&net, &m, F0Mode::Discrete) {
        F0Contour::Discrete { classes, n_bins } => {
            assert_eq!(classes.len(), 50);
            assert!(classes.iter().all(|&c| c <= n_bins));
        }
        other => panic!("unexpected contour {other:?}"),
    }
    let p = net.class_probabilities(&m);
    for row in p.chunks(cfg.f0_bins + 1) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }
}

#[test]
fn checkpoint_file_round_trip_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join(Stage::Sdn.file_name());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net: SdnDecoder<f32> = SdnDecoder::new(&small(), 3, &mut rng).unwrap();
    ModelCheckpoint::from_network(&net).save(&path).unwrap();
    let back: SdnDecoder<f32> = ModelCheckpoint::load(&path).unwrap().into_network_checked(&small()).unwrap();
    let c = ContentEmbedding::new(8, 64, 16, (0..8 * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let s = SingerVector::new(2, 3);
    assert_eq!(sdn_decode(&net, &c, s).unwrap(), sdn_decode(&back, &c, s).unwrap());
    assert!(!path.with_extension("rvxc.tmp").exists());
}
