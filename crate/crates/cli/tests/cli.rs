use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[network]
encoder_width = 16
decoder_width = 16
decoder_lstm_width = 16
postnet_width = 8
mix_cond_width = 8
f0_width = 8
f0_layers = 2

[train]
batch_size = 2
max_steps = 2
validate_every = 1
val_batches = 1
"#;

fn rawvox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawvox"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs with the tiny config and a `ck` checkpoint dir.
fn tiny(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--config", "tiny.toml", "--checkpoint-dir", "ck"];
    all.extend_from_slice(args);
    rawvox(dir, &all)
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_command_flow_on_a_tiny_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();

    ok(rawvox(d, &["make-corpus", "--out", "corpus", "--singers", "2", "--clips-per-singer", "3", "--test-per-singer", "1", "--min-secs", "0.8", "--max-secs", "0.9"]));
    ok(rawvox(d, &["manifest", "--corpus", "corpus", "--out", "corpus/manifest.jsonl", "--val-fraction", "0.25"]));

    // dependency order is enforced
    let out = tiny(d, &["train", "sin", "--manifest", "corpus/manifest.jsonl"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("student_encoder"));

    for stage in ["teacher", "student_encoder", "sdn", "sin", "f0"] {
        ok(tiny(d, &["train", stage, "--manifest", "corpus/manifest.jsonl"]));
        assert!(d.join(format!("ck/{stage}.rvxc")).exists());
        let log = std::fs::read_to_string(d.join(format!("ck/{stage}.train.jsonl"))).unwrap();
        assert!(log.lines().last().unwrap().contains("\"summary\""));
    }

    let vocal = std::fs::read_dir(d.join("corpus"))
        .unwrap()
        .flat_map(|e| std::fs::read_dir(e.unwrap().path()).into_iter().flatten())
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".wav")))
        .unwrap();
    let input = vocal.to_string_lossy().into_owned();
    let out = tiny(d, &["separate", "--input", &input, "--output", "out.wav", "--mode", "sdn"]);
    assert_eq!(out.status.code(), Some(2));
    ok(tiny(d, &["separate", "--input", &input, "--output", "a.wav", "--mode", "sdn", "--singer", "1"]));
    ok(tiny(d, &["separate", "--input", &input, "--output", "b.wav", "--mode", "sdn", "--singer", "1"]));
    assert_eq!(std::fs::read(d.join("a.wav")).unwrap(), std::fs::read(d.join("b.wav")).unwrap());
    let missing = tiny(d, &["separate", "--input", "nope.wav", "--output", "c.wav"]);
    assert_eq!(missing.status.code(), Some(4));

    let table = ok(tiny(d, &["evaluate", "--manifest", "corpus/manifest.jsonl", "--models", "sin,sdn,mean,oracle", "--out", "eval/report"]));
    assert!(table.starts_with("model\tmcd_mean_db\tmcd_std_db\tn_tracks\n"));
    assert!(table.contains("oracle\t0.0000\t0.0000\t2"));
    assert!(d.join("eval/report.jsonl").exists());
}

#[test]
fn usage_and_dependency_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rawvox(d, &["train", "bogus", "--manifest", "m"]).status.code(), Some(2));
    assert_eq!(rawvox(d, &["manifest", "--corpus", "absent", "--out", "m.jsonl"]).status.code(), Some(4));
    assert_eq!(rawvox(d, &["separate", "--input", "x.wav", "--output", "y.wav"]).status.code(), Some(3));
    std::fs::write(d.join("bad.toml"), "[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(rawvox(d, &["--config", "bad.toml", "show-config"]).status.code(), Some(2));
    let shown = ok(rawvox(d, &["--preset", "desk", "--seed", "7", "show-config"]));
    assert!(shown.contains("seed = 7") && shown.contains("[stages.f0]"));
}
