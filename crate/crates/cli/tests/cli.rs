use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mortonnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(!err.trim().is_empty(), "{args:?} gave no diagnostic");
    err
}

const SMALL_TRAIN: &str = "
[model]
enc_width = 8
hidden = 16

[train]
epochs = 3
batch_size = 32
";

fn setup(dir: &Path) {
    fs::write(dir.join("train.toml"), SMALL_TRAIN).unwrap();
    fs::write(dir.join("seq.toml"), "k = 8\nm = 2\ncenters = 200\n").unwrap();
    ok(dir, &["gen", "--shape", "composite", "--n-points", "800", "--out", "cloud.xyz", "--seed", "3"]);
    ok(dir, &["sequences", "--config", "seq.toml", "--input", "cloud.xyz", "--out", "seq.mseq", "--seed", "3"]);
}

#[test]
fn gen_and_sequences_are_byte_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    setup(p);
    let a = (fs::read(p.join("cloud.xyz")).unwrap(), fs::read(p.join("seq.mseq")).unwrap());
    setup(p);
    let b = (fs::read(p.join("cloud.xyz")).unwrap(), fs::read(p.join("seq.mseq")).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a.0).unwrap();
    assert!(text.starts_with("# config: {\"command\":\"gen\""));
    ok(p, &["gen", "--shape", "composite", "--n-points", "800", "--out", "other.xyz", "--seed", "4"]);
    assert_ne!(fs::read(p.join("other.xyz")).unwrap(), text.as_bytes());
}

#[test]
fn full_pipeline_with_resume() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    setup(p);
    let out = ok(p, &["train", "--config", "train.toml", "--data", "seq.mseq", "--out", "best.mseq", "--state-dir", "states"]);
    assert!(out.contains("best epoch"));
    let log = fs::read_to_string(p.join("best.csv")).unwrap();
    assert_eq!(log.lines().nth(1), Some("epoch,train_loss,val_loss,lr,val_rho_acc"));
    assert_eq!(log.lines().count(), 5);
    for e in 1..=3 {
        assert!(p.join(format!("states/epoch_{e:04}.mseq")).exists());
    }

    ok(p, &["train", "--config", "train.toml", "--data", "seq.mseq", "--out", "resumed.mseq", "--resume", "states/epoch_0001.mseq"]);
    assert_eq!(fs::read(p.join("best.mseq")).unwrap(), fs::read(p.join("resumed.mseq")).unwrap());
    assert_eq!(fs::read(p.join("best.csv")).unwrap(), fs::read(p.join("resumed.csv")).unwrap());

    let acc = ok(p, &["eval", "--checkpoint", "best.mseq", "--data", "seq.mseq"]);
    let value: f64 = acc.lines().next().unwrap().strip_prefix("accuracy ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));

    ok(p, &["extract", "--checkpoint", "best.mseq", "--input", "cloud.xyz", "--out", "feat.mseq"]);
    fs::write(p.join("cls.toml"), "[classifier]\nepochs = 2\n").unwrap();
    let m = ok(p, &["classify", "--config", "cls.toml", "--features", "feat.mseq", "--out", "metrics.csv"]);
    assert!(m.contains("mIoU"));
    let metrics = fs::read_to_string(p.join("metrics.csv")).unwrap();
    assert!(metrics.contains("\nmiou,"));
    assert!(p.join("metrics.confusion.csv").exists());
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let e = fails(p, &["sequences", "--input", "missing.xyz", "--out", "s.mseq"]);
    assert!(e.contains("missing.xyz"));
    fs::write(p.join("bad.toml"), "no_such_field = 1\n").unwrap();
    fails(p, &["gen", "--config", "bad.toml", "--out", "c.xyz"]);
    fails(p, &["gen", "--shape", "dodecahedron", "--out", "c.xyz"]);
    fs::write(p.join("broken.xyz"), "0 0 0\n1 2\n").unwrap();
    let e = fails(p, &["sequences", "--input", "broken.xyz", "--out", "s.mseq"]);
    assert!(e.contains("broken.xyz:2:"), "{e}");
    fs::write(p.join("junk.mseq"), b"not a container").unwrap();
    fails(p, &["eval", "--checkpoint", "junk.mseq", "--data", "junk.mseq"]);
    assert!(!p.join("s.mseq").exists());
}

#[test]
fn eval_rejects_a_mismatched_sequence_length() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    setup(p);
    ok(p, &["train", "--config", "train.toml", "--data", "seq.mseq", "--out", "best.mseq", "--epochs", "1"]);
    fs::write(p.join("seq12.toml"), "k = 12\nm = 1\ncenters = 50\n").unwrap();
    ok(p, &["sequences", "--config", "seq12.toml", "--input", "cloud.xyz", "--out", "seq12.mseq"]);
    let e = fails(p, &["eval", "--checkpoint", "best.mseq", "--data", "seq12.mseq"]);
    assert!(e.contains("k = 8"), "{e}");
}
