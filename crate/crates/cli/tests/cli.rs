//! End-to-end runs of the `eleatt` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eleatt_cli::{BEST_CKPT, EPOCHS_CSV, FINAL_CKPT, INIT_CKPT, METRICS_JSON, RESOLVED_CONFIG};
use tempfile::TempDir;

fn eleatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eleatt"))
        .args(args)
        .env_remove("ELEATT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// MNIST directory from the environment or the workspace's `data/mnist`.
fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("ELEATT_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-images-idx3-ubyte").exists().then_some(dir)
}

fn train_planted(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--set",
        "max_epochs=2",
    ];
    args.extend_from_slice(extra);
    eleatt(&args)
}

#[test]
fn train_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let out = train_planted(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        RESOLVED_CONFIG,
        EPOCHS_CSV,
        METRICS_JSON,
        INIT_CKPT,
        BEST_CKPT,
        FINAL_CKPT,
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let csv = fs::read_to_string(dir.path().join(EPOCHS_CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"
    );
    assert_eq!(lines.len(), 3);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(METRICS_JSON)).unwrap()).unwrap();
    let acc = metrics["test_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let dir = TempDir::new().unwrap();
    let out = train_planted(dir.path(), &["--set", "lr0=0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let init = fs::read(dir.path().join(INIT_CKPT)).unwrap();
    assert_eq!(fs::read(dir.path().join(FINAL_CKPT)).unwrap(), init);
}

#[test]
fn training_is_reproducible_from_its_resolved_config() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(&train_planted(a.path(), &["--set", "cell=lstm"])), 0);
    let cfg = a.path().join(RESOLVED_CONFIG);
    let out = eleatt(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [EPOCHS_CSV, METRICS_JSON, FINAL_CKPT] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eval_of_saved_checkpoint_matches_training_metrics() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&train_planted(dir.path(), &[])), 0);
    let cfg = dir.path().join(RESOLVED_CONFIG);
    let best = dir.path().join(BEST_CKPT);
    let out = eleatt(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        best.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        stdout(&out),
        fs::read_to_string(dir.path().join(METRICS_JSON)).unwrap()
    );
}

#[test]
fn gradcheck_passes_and_rejects_oversized_instances() {
    let out = eleatt(&["gradcheck", "gru", "element", "--dims", "D=5,N=4,T=3,L=2"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).trim_end().ends_with("PASS"));
    assert_eq!(
        code(&eleatt(&["gradcheck", "lstm", "none", "--dims", "D=999"])),
        1
    );
    assert_eq!(
        code(&eleatt(&["gradcheck", "gru", "element", "--dims", "Q=2"])),
        1
    );
}

#[test]
fn count_params_matches_the_three_layer_reference() {
    let out = eleatt(&[
        "inspect",
        "count-params",
        "--set",
        "cell=gru",
        "--set",
        "mode=element",
        "--set",
        "hidden=100",
        "--set",
        "layers=3",
        "--set",
        "input_dim=150",
        "--set",
        "classes=60",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(
        stdout(&out).lines().any(|l| l == "params 279810"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn count_flops_for_a_tiny_gated_gru() {
    let out = eleatt(&[
        "inspect",
        "count-flops",
        "--set",
        "hidden=3",
        "--set",
        "input_dim=4",
        "--set",
        "classes=2",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["total_flops_per_step"], 201);
}

#[test]
fn trace_attn_writes_csv_and_images_for_planted_model() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = eleatt(&[
        "inspect",
        "trace-attn",
        "--out",
        d,
        "--set",
        "trace_samples=2",
        "--set",
        "attn_norm_samples=50",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("attn.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(dir.path().join("attn_relative.csv").is_file());
    assert!(dir.path().join("static_modulation.csv").is_file());
    let pgms = fs::read_dir(dir.path()).unwrap().filter(|e| {
        e.as_ref()
            .unwrap()
            .path()
            .extension()
            .is_some_and(|x| x == "pgm")
    });
    assert!(pgms.count() >= 2);
}

#[test]
fn trace_attn_pixelwise_image_is_28_by_28() {
    let Some(data) = mnist_dir() else {
        eprintln!("MNIST not found; skipping");
        return;
    };
    let dir = TempDir::new().unwrap();
    let out = eleatt(&[
        "inspect",
        "trace-attn",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "task=mnist_pixel",
        "--set",
        "hidden=8",
        "--set",
        "test_size=1",
        "--set",
        "val_size=10",
        "--set",
        "attn_norm_split=test",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pgm = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "pgm"))
        .expect("a PGM was written");
    let bytes = fs::read(pgm).unwrap();
    assert!(
        bytes.starts_with(b"P5\n28 28\n255\n") || bytes.starts_with(b"P2\n28 28\n255\n"),
        "{:?}",
        &bytes[..16]
    );
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        code(&eleatt(&["train", "--out", d, "--set", "no_such_key=1"])),
        1
    );
    assert_eq!(
        code(&eleatt(&["train", "--out", d, "--set", "hidden=0"])),
        1
    );
    assert_eq!(code(&eleatt(&["frobnicate"])), 1);
    assert_eq!(code(&eleatt(&["--help"])), 0);

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"EARN\x01\x00\x00\x00garbage").unwrap();
    assert_eq!(
        code(&eleatt(&["eval", "--checkpoint", bad.to_str().unwrap()])),
        2
    );

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = eleatt(&[
        "eval",
        "--set",
        "task=mnist_row",
        "--data",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&eleatt(&["eval", "--set", "task=mnist_row"])), 1);
}
