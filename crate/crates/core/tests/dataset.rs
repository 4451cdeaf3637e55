use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawvox::audio::{EXCERPT_FRAMES, FEATURE_DIM, N_BINS};
use rawvox::dataset::synth::{generate_corpus, SynthConfig};
use rawvox::dataset::*;

fn small_corpus(dir: &std::path::Path) -> Corpus {
    let cfg = SynthConfig { n_singers: 2, clips_per_singer: 4, test_per_singer: 1, min_secs: 1.0, max_secs: 1.2, seed: 5 };
    generate_corpus(dir, &cfg).unwrap();
    let m = build_manifest(dir, 0.34, 0).unwrap();
    assert_eq!(m.count(Split::Test), 2);
    assert_eq!(m.count(Split::Val), 2);
    assert_eq!(m.count(Split::Train), 4);
    Corpus::load(m, &[Split::Train, Split::Val, Split::Test], Some(&dir.join(".cache"))).unwrap()
}

#[test]
fn batches_shapes_determinism_and_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());

    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_training_batch(&corpus, Split::Train, 30, GainRange::default(), MixDomain::Magnitude, &mut rng).unwrap()
    };
    let b = draw(1);
    assert_eq!(b.mixture_mag.len(), 30 * EXCERPT_FRAMES * N_BINS);
    assert_eq!(b.vocal_features.len(), 30 * EXCERPT_FRAMES * FEATURE_DIM);
    assert_eq!(b.f0_hz.len(), 30 * EXCERPT_FRAMES);
    assert!(b.mixture_mag.iter().all(|&v| v >= 0.0));
    assert_eq!(draw(1), b);

    for (i, s) in b.singers.iter().enumerate() {
        let song = corpus.song(&b.song_ids[i]).unwrap();
        assert_eq!(s.index(), song.singer);
        assert_eq!(s.one_hot().iter().sum::<f32>(), 1.0);
        let (gv, gb) = b.gains[i];
        assert!((0.5..=1.2).contains(&gv) && (0.5..=1.2).contains(&gb));
    }

    // targets are independent of the gains drawn for the same excerpt
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let other = sample_training_batch(&corpus, Split::Train, 30, GainRange::new(0.0, 3.0).unwrap(), MixDomain::Magnitude, &mut rng).unwrap();
    assert_eq!(other.start_frames, b.start_frames);
    assert_ne!(other.gains, b.gains);
    assert_eq!(other.vocal_features, b.vocal_features);
    assert_eq!(other.f0_hz, b.f0_hz);
}

#[test]
fn unit_gains_on_silent_backing_equal_vocal_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let songs: Vec<SongData> = corpus
        .songs()
        .iter()
        .cloned()
        .map(|mut s| {
            s.backing.iter_mut().for_each(|v| *v = 0.0);
            s.backing_mag = rawvox::audio::MagSpectrogram::zeros(s.vocal_mag.n_frames());
            s
        })
        .collect();
    let silent = Corpus::from_songs(corpus.manifest().clone(), songs);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = sample_training_batch(&silent, Split::Train, 6, GainRange::fixed(1.0), MixDomain::Magnitude, &mut rng).unwrap();
    for i in 0..6 {
        let song = silent.song(&b.song_ids[i]).unwrap();
        let s = b.start_frames[i];
        let expect = &song.vocal_mag.values()[s * N_BINS..(s + EXCERPT_FRAMES) * N_BINS];
        assert_eq!(&b.mixture_mag[i * EXCERPT_FRAMES * N_BINS..(i + 1) * EXCERPT_FRAMES * N_BINS], expect);
    }
}

#[test]
fn waveform_domain_and_validation_set() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = sample_training_batch(&corpus, Split::Train, 4, GainRange::fixed(1.0), MixDomain::Waveform, &mut rng).unwrap();
    assert_eq!(b.mixture_mag.len(), 4 * EXCERPT_FRAMES * N_BINS);
    // waveform mixing at (1, 0) reproduces the vocal spectrogram
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gains = GainRange::fixed(1.0);
    let v = sample_training_batch(&corpus, Split::Train, 4, gains, MixDomain::Magnitude, &mut rng).unwrap();
    assert_eq!(v.start_frames, b.start_frames);

    let val = validation_batches(&corpus, 5, 2, MixDomain::Magnitude, 9).unwrap();
    assert_eq!(val, validation_batches(&corpus, 5, 2, MixDomain::Magnitude, 9).unwrap());
    assert!(val.iter().all(|b| b.gains.iter().all(|&g| g == (1.0, 1.0))));
    assert!(val.iter().flat_map(|b| &b.song_ids).all(|id| corpus.song(id).unwrap().split == Split::Val));
}

#[test]
fn cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_corpus(dir.path());
    let m = build_manifest(dir.path(), 0.34, 0).unwrap();
    let b = Corpus::load(m, &[Split::Train], Some(&dir.path().join(".cache"))).unwrap();
    for s in b.songs() {
        let t = a.song(&s.song_id).unwrap();
        assert_eq!(s.features, t.features);
        assert_eq!(s.vocal_mag, t.vocal_mag);
        assert_eq!(s.f0_hz, t.f0_hz);
        assert!(s.f0_truth.is_some());
    }
}

#[test]
fn empty_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let only_test = Corpus::from_songs(corpus.manifest().clone(), corpus.split(Split::Test).cloned().collect());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = sample_training_batch(&only_test, Split::Train, 2, GainRange::default(), MixDomain::Magnitude, &mut rng);
    assert!(matches!(r, Err(DatasetError::NoSongs(_))));
}
