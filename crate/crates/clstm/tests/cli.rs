//! Exit-code contract and file outputs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clstm"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_TRAIN: &str = r#"
[model]
cell = "tc"
blocks = 1
hidden = 3
embed_dim = 3
fc_width = 3

[data]
synth = "same-seq"
synth_size = 60

[optim]
epochs = 1
"#;

fn run_train(dir: &Path) -> Output {
    let config = write_config(dir, SMALL_TRAIN);
    bin()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed", "5", "--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/model.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("out/metrics.tsv")).unwrap();
    assert!(log.lines().any(|l| l.contains("dev")), "{log}");
}

#[test]
fn missing_config_exits_2() {
    let out = bin()
        .args(["train", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[model]\nhiddne = 3\n");
    let out = bin().args(["train", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiddne"));
}

#[test]
fn missing_dataset_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[data]\ntask = \"classification\"\n");
    let out = bin().args(["train", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn eval_reports_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_train(dir.path()).status.success());
    let out = bin()
        .args(["eval", "--config"])
        .arg(dir.path().join("run.toml"))
        .args(["--checkpoint"])
        .arg(dir.path().join("out/model.ckpt"))
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("dev\taccuracy"), "{text}");
    assert!(text.contains("test\taccuracy"), "{text}");
}

#[test]
fn activations_csv_roundtrips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_train(dir.path()).status.success());
    let csv_path = dir.path().join("act.csv");
    let out = bin()
        .args(["activations", "--checkpoint"])
        .arg(dir.path().join("out/model.ckpt"))
        .args(["--x", "s0 s1 s2", "--y", "s3 s4 s0 s1", "--k", "1", "--out"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // re-parse and compare against the in-memory grid slice
    let (model, vocab) = clstm::checkpoint::load(&dir.path().join("out/model.ckpt")).unwrap();
    let ids = |s: &str| s.split(' ').map(|t| vocab.get(t)).collect::<Vec<_>>();
    let grid = model.final_grid(&ids("s0 s1 s2"), &ids("s3 s4 s0 s1")).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], ",s3,s4,s0,s1");
    assert_eq!(lines.len(), 4);
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 5);
        for j in 0..4 {
            let parsed: f64 = cells[j + 1].parse().unwrap();
            assert_eq!(parsed.to_bits(), grid.at(i, j)[1].to_bits());
        }
    }
}

#[test]
fn activations_rejects_out_of_range_neuron() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_train(dir.path()).status.success());
    let out = bin()
        .args(["activations", "--checkpoint"])
        .arg(dir.path().join("out/model.ckpt"))
        .args(["--x", "s0", "--y", "s1", "--k", "99", "--out"])
        .arg(dir.path().join("act.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let out = bin().args(["gradcheck", "--seed", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("worst over all configurations"));
}

#[test]
fn count_prints_reference_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_TRAIN);
    let out = bin().args(["count", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["77953", "45000", "190000", "deviation"] {
        assert!(text.contains(needle), "missing {needle}:\n{text}");
    }
}

#[test]
fn synth_writes_parseable_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--task", "contains", "--size", "100", "--seed", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    for (name, lines) in [("train.tsv", 80), ("dev.tsv", 10), ("test.tsv", 10)] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), lines);
        for line in text.lines() {
            assert_eq!(line.split('\t').count(), 3);
        }
    }
}
