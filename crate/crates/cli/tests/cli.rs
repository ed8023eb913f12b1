//! End-to-end runs of the `adsf` binary on tiny datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = "\
[stft]
window_len = 256
hop = 64
[scene]
duration_s = 0.5
[attention]
num_blocks = 1
num_heads = 2
model_dim = 8
ff_dim = 16
[train]
batch_size = 2
lr = 1e-3
early_stop_patience = 1000
lr_patience = 1000
checkpoint_every = 5
";

fn adsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adsf"))
        .args(args)
        .env("BEAMFORM_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = adsf(args);
    assert!(
        out.status.success(),
        "adsf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.ini"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("run.ini")
    }

    fn simulate(&self, name: &str, count: usize, motion: &str, seed: u64) -> PathBuf {
        let out = self.path(name);
        ok(&[
            "simulate",
            "--out",
            s(&out),
            "--count",
            &count.to_string(),
            motion,
            "--seed",
            &seed.to_string(),
            "--config",
            s(&self.config()),
        ]);
        out.join("manifest.jsonl")
    }

    fn train(&self, variant: &str, data: &Path, out: &str, steps: usize) -> PathBuf {
        let out = self.path(out);
        ok(&[
            "train",
            "--variant",
            variant,
            "--data",
            s(data),
            "--val",
            s(data),
            "--out",
            s(&out),
            "--config",
            s(&self.config()),
            "--steps",
            &steps.to_string(),
        ]);
        out
    }
}

fn manifest_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_is_deterministic_and_static_scenes_do_not_move() {
    let fx = Fixture::new();
    let a = fx.simulate("a", 2, "--static", 7);
    let b = fx.simulate("b", 2, "--static", 7);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    for rec in manifest_lines(&a) {
        let wav = rec["mixture"].as_str().unwrap();
        let dir_a = a.parent().unwrap();
        let dir_b = b.parent().unwrap();
        assert_eq!(fs::read(dir_a.join(wav)).unwrap(), fs::read(dir_b.join(wav)).unwrap());
        let waypoints = rec["scenario"]["trajectory"]["waypoints"].as_array().unwrap();
        assert_eq!(waypoints.len(), 1);
        assert_eq!(rec["dynamic"], false);
    }
    let d = fx.simulate("d", 1, "--dynamic", 7);
    let rec = &manifest_lines(&d)[0];
    assert!(rec["scenario"]["trajectory"]["waypoints"].as_array().unwrap().len() > 1);
    assert!(fx.path("a/config.ini").is_file());
}

#[test]
fn learned_method_without_checkpoint_is_a_usage_error() {
    let fx = Fixture::new();
    let data = fx.simulate("data", 1, "--static", 1);
    let out = adsf(&["evaluate", "--method", "la", "--data", s(&data), "--out", s(&fx.path("r.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = adsf(&[
        "evaluate", "--method", "cum", "--checkpoint", "x.ckpt", "--data", s(&data), "--out",
        s(&fx.path("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = adsf(&["simulate", "--out", s(&fx.path("x")), "--count", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_rejected() {
    let fx = Fixture::new();
    fs::write(fx.path("bad.ini"), "[stft]\nwindow = 3\n").unwrap();
    let out = adsf(&[
        "simulate", "--out", s(&fx.path("x")), "--count", "1", "--static", "--config",
        s(&fx.path("bad.ini")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("window"));
}

#[test]
fn training_writes_one_loss_row_per_step() {
    let fx = Fixture::new();
    let data = fx.simulate("data", 4, "--dynamic", 3);
    let run = fx.train("ic", &data, "ic", 50);
    let mut reader = csv::Reader::from_path(run.join("loss.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["step", "epoch", "train_loss", "val_loss", "lr"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 50);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i + 1);
        assert!(r[2].parse::<f64>().unwrap().is_finite());
    }
    for f in ["latest.ckpt", "best.ckpt", "config.ini"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let report = fx.path("eval/ic.csv");
    ok(&[
        "evaluate", "--method", "ic", "--checkpoint", s(&run.join("best.ckpt")), "--data",
        s(&data), "--out", s(&report),
    ]);
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&report)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[4][0], "mean");
    assert_eq!(&rows[0][1], "ic");
}

#[test]
fn interrupted_training_resumes_to_identical_checkpoint() {
    let fx = Fixture::new();
    let data = fx.simulate("data", 2, "--dynamic", 5);
    let straight = fx.train("la", &data, "straight", 6);
    fx.train("la", &data, "resumed", 3);
    let resumed = fx.train("la", &data, "resumed", 6);
    for f in ["latest.ckpt", "best.ckpt", "loss.csv"] {
        assert_eq!(
            fs::read(straight.join(f)).unwrap(),
            fs::read(resumed.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // A finished run is not retrained.
    let again = adsf(&[
        "train", "--variant", "la", "--data", s(&data), "--val", s(&data), "--out",
        s(&resumed), "--config", s(&fx.config()), "--steps", "6",
    ]);
    assert!(again.status.success());
    // Resuming under a different variant is refused.
    let wrong = adsf(&[
        "train", "--variant", "nla", "--data", s(&data), "--val", s(&data), "--out",
        s(&resumed), "--config", s(&fx.config()), "--steps", "6",
    ]);
    assert!(!wrong.status.success());
}

#[test]
fn enhance_manifest_writes_audio_and_metrics() {
    let fx = Fixture::new();
    let data = fx.simulate("data", 2, "--static", 9);
    let out = fx.path("enh");
    ok(&[
        "enhance", "--in", s(&data), "--method", "cum", "--out", s(&out), "--config",
        s(&fx.config()),
    ]);
    assert!(out.join("utt00000_enhanced.wav").is_file());
    assert!(out.join("utt00001_enhanced.wav").is_file());
    let rows = csv::Reader::from_path(out.join("metrics.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 3);
}
