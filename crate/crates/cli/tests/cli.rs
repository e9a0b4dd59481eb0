use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vfgnn::ExperimentConfig;
use vfgnn_core::protocol::MetricsRecord;

const SMALL: &str = r#"
seeds = [0, 1]

[graph.sbm]
blocks = 3
per_block = 20
p_in = 0.2
p_out = 0.02
feature_dim = 8
class_signal = 1.0

[partition]
holders = 2

[train]
epochs = 5
embed_dim = 4
learning_rate = 0.5
"#;

fn vfgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfgnn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(path: &Path) -> Vec<MetricsRecord> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn train_writes_one_record_per_epoch_and_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let out = dir.path().join("m.jsonl");
    let o = vfgnn(&["--config", s(&cfg), "--out", s(&out), "--quiet", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 10);
    assert_eq!(recs.iter().map(|r| r.seed).collect::<Vec<_>>(), [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    assert!(recs.iter().all(|r| r.epsilon_spent.is_infinite()));
    assert!(fs::read_to_string(&out).unwrap().ends_with('\n'));
}

#[test]
fn train_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for p in [&a, &b] {
        assert!(vfgnn(&["--config", s(&cfg), "--out", s(p), "--quiet", "train"]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.jsonl");
    assert!(vfgnn(&["--config", s(&cfg), "--seed", "7", "--out", s(&c), "--quiet", "train"]).status.success());
    assert!(records(&c).iter().all(|r| r.seed == 7));
}

#[test]
fn train_to_stdout_and_plot() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let svg = dir.path().join("acc.svg");
    let o = vfgnn(&["--config", s(&cfg), "--seed", "0", "--plot", s(&svg), "train"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 5);
    assert!(stderr(&o).contains("test accuracy"));
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(&dir, "bad.toml", "seeds = [0]\n[train]\nepochs = \"many\"\n");
    let o = vfgnn(&["--config", s(&bad), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let unknown = write_config(&dir, "unknown.toml", "[partition]\nholder = 2\n");
    let o = vfgnn(&["--config", s(&unknown), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let invalid = write_config(&dir, "invalid.toml", "[train]\ndepth = 9\n");
    assert_eq!(vfgnn(&["--config", s(&invalid), "train"]).status.code(), Some(2));

    assert_eq!(vfgnn(&["--config", s(&dir.path().join("missing.toml")), "train"]).status.code(), Some(2));
    assert_eq!(vfgnn(&["--bogus", "train"]).status.code(), Some(2));
}

#[test]
fn graph_files_are_read_and_their_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("x.tsv"), "1\t0\n0\t1\n1\t1\n0\t0\n1\t0\n0\t1\n").unwrap();
    fs::write(dir.path().join("e.txt"), "0 1\n1 2\n2 3\n3 4\n4 5\n").unwrap();
    fs::write(dir.path().join("y.txt"), "0\n1\n0\n1\n0\n1\n").unwrap();
    fs::write(dir.path().join("m.txt"), "t\nt\nt\nt\ns\ns\n").unwrap();
    let files = "seeds = [0]\n[graph.files]\nfeatures = \"x.tsv\"\nedges = \"e.txt\"\nlabels = \"y.txt\"\nmask = \"m.txt\"\n[train]\nepochs = 2\nembed_dim = 3\n";
    let cfg = write_config(&dir, "files.toml", files);
    let out = dir.path().join("m.jsonl");
    let o = vfgnn(&["--config", s(&cfg), "--out", s(&out), "--quiet", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(records(&out).len(), 2);

    fs::write(dir.path().join("e.txt"), "0 1\n1 9\n").unwrap();
    let o = vfgnn(&["--config", s(&cfg), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("e.txt"), "{}", stderr(&o));
}

#[test]
fn config_round_trips_through_toml() {
    let c = ExperimentConfig::parse(SMALL).unwrap();
    assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&d.to_toml()).unwrap(), d);
}

#[test]
fn compare_lists_every_setting() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "small.toml", SMALL);
    let o = vfgnn(&["--config", s(&cfg), "--quiet", "compare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).take(6).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["isolated_1", "isolated_2", "VFGNN_C", "VFGNN_M", "VFGNN_R", "centralized"]);
    assert!(text.contains('±'));
}

#[test]
fn compare_sweeps_proportions_and_holders() {
    let dir = TempDir::new().unwrap();
    let sweep = format!("{SMALL}\n[sweep]\nproportions = [[9, 1], [8, 2], [7, 3]]\nholders = [2, 3, 4]\n");
    let cfg = write_config(&dir, "sweep.toml", &sweep);
    let json = dir.path().join("tables.jsonl");
    let o = vfgnn(&["--config", s(&cfg), "--seed", "0", "--out", s(&json), "--quiet", "compare"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for row in ["9:1", "8:2", "7:3"] {
        assert!(text.lines().any(|l| l.starts_with(row)), "{text}");
    }
    assert_eq!(text.lines().filter(|l| l.contains("accuracy over holder counts")).count(), 3);
    assert_eq!(fs::read_to_string(&json).unwrap().lines().count(), 3);
}

#[test]
fn comm_audit_reports_share_distribution() {
    let dir = TempDir::new().unwrap();
    let o = vfgnn(&["--config", s(&write_config(&dir, "two.toml", SMALL)), "comm-audit"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("MISMATCH"));

    let three = SMALL.replace("holders = 2", "holders = 3");
    let o = vfgnn(&["--config", s(&write_config(&dir, "three.toml", &three)), "comm-audit"]);
    assert!(o.status.success());
    let line = stdout(&o).lines().find(|l| l.starts_with("share_distribution")).unwrap().to_string();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(&fields[1..3], ["6", "6"]);
}

#[test]
fn injected_faults_fail_the_audit() {
    let dir = TempDir::new().unwrap();
    for fault in ["extra_message", "raw_features"] {
        let text = format!("{SMALL}\n[audit]\nfault = \"{fault}\"\n");
        let o = vfgnn(&["--config", s(&write_config(&dir, "fault.toml", &text)), "--quiet", "comm-audit"]);
        assert_eq!(o.status.code(), Some(1), "{fault}");
        assert!(stdout(&o).contains("MISMATCH"));
    }
    let text = format!("{SMALL}\n[audit]\nfault = \"raw_features\"\n");
    let o = vfgnn(&["--config", s(&write_config(&dir, "fault.toml", &text)), "--quiet", "comm-audit"]);
    assert!(stdout(&o).contains("locality violation"));
}

#[test]
fn dp_sweep_unbounded_row_matches_train() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[sweep]\nepsilons = [8, inf]\n");
    let cfg = write_config(&dir, "dp.toml", &text);
    let (train_out, sweep_out) = (dir.path().join("t.jsonl"), dir.path().join("d.jsonl"));
    assert!(vfgnn(&["--config", s(&cfg), "--out", s(&train_out), "--quiet", "train"]).status.success());
    let o = vfgnn(&["--config", s(&cfg), "--out", s(&sweep_out), "--quiet", "dp-sweep"]);
    // the tiny fixture may or may not show a trend; only a failed check may end the run early
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("inf")));

    let trained = records(&train_out);
    let swept = records(&sweep_out);
    assert_eq!(swept.len(), 2 * 2 * 2);
    for seed in [0u64, 1] {
        let last = trained.iter().rev().find(|r| r.seed == seed).unwrap().clone();
        let id = format!("dp-gaussian-epsinf-seed{seed}");
        let row = swept.iter().find(|r| r.run_id == id).unwrap().clone();
        assert_eq!(MetricsRecord { run_id: last.run_id.clone(), ..row }, last);
    }
}

#[test]
fn dp_sweep_rejects_an_empty_epsilon_list() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[sweep]\nepsilons = []\n");
    let o = vfgnn(&["--config", s(&write_config(&dir, "dp.toml", &text)), "dp-sweep"]);
    assert_eq!(o.status.code(), Some(2));
}
