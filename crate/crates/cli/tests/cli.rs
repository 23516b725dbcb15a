use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqsplit"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Three users; user 3 has only two items and is dropped by leave-one-out.
fn tiny_log(dir: &Path) -> PathBuf {
    let p = dir.join("log.tsv");
    let rows = "1 10 1\n1 11 2\n1 12 3\n1 10 4\n2 11 1\n2 12 2\n2 10 3\n2 11 4\n2 12 5\n3 10 1\n3 11 2\n";
    std::fs::write(&p, rows.replace(' ', "\t")).unwrap();
    p
}

fn synth_log(dir: &Path) -> PathBuf {
    let p = dir.join("synth.tsv");
    run(&["synth", "--out", p.to_str().unwrap(), "--users", "80", "--items", "40", "--seed", "3"]);
    p
}

#[test]
fn stats_reports_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let log = tiny_log(dir.path());
    let o = run(&["stats", "--data", log.to_str().unwrap(), "--k-core", "1"]);
    let s = stdout(&o);
    assert!(s.contains("users=3 items=3 interactions=11 avg_len=3.7"), "{s}");
    assert!(s.contains("sparsity=-22.22%"), "{s}");
    assert!(s.contains("dropped by leave-one-out"), "{s}");
}

#[test]
fn build_dumps_examples() {
    let dir = tempfile::tempdir().unwrap();
    let log = tiny_log(dir.path());
    let dump = dir.path().join("ex.tsv");
    let o = run(&[
        "build", "--data", log.to_str().unwrap(), "--k-core", "1", "--split", "prefix", "--target", "single", "--dump",
        dump.to_str().unwrap(),
    ]);
    // train parts: user 1 [1,2], user 2 [2,3,1]  (dense ids by first appearance: 10→1, 11→2, 12→3)
    assert!(stdout(&o).contains("examples=3"), "{}", stdout(&o));
    assert_eq!(std::fs::read_to_string(dump).unwrap(), "1\t2\n2\t3\n2,3\t1\n");
}

#[test]
fn window_flag_requires_sliding() {
    let dir = tempfile::tempdir().unwrap();
    let log = tiny_log(dir.path());
    let o = bin().args(["build", "--data", log.to_str().unwrap(), "--split", "prefix", "--window", "3"]).output().unwrap();
    assert!(!o.status.success());
    let o = run(&["build", "--data", log.to_str().unwrap(), "--k-core", "1", "--split", "sliding", "--window", "2"]);
    assert!(stdout(&o).contains("split=sliding:2"));
}

#[test]
fn bad_input_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.tsv");
    std::fs::write(&p, "1\t2\t3\nfoo\t2\t3\n").unwrap();
    let o = bin().args(["stats", "--data", p.to_str().unwrap()]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn train_then_eval_reproduces_best_validation() {
    let dir = tempfile::tempdir().unwrap();
    let log = synth_log(dir.path());
    let out = dir.path().join("run");
    let data = log.to_str().unwrap();
    run(&[
        "train", "--data", data, "--k-core", "2", "--model", "attn", "--dim", "8", "--max-len", "10", "--max-epochs", "3",
        "--seed", "4", "--out", out.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let best = report["best_valid"].as_f64().unwrap();
    let ckpt = out.join("model.ckpt");
    let o = run(&[
        "eval", "--data", data, "--k-core", "2", "--checkpoint", ckpt.to_str().unwrap(), "--phase", "valid", "--header",
    ]);
    let s = stdout(&o);
    let mut lines = s.lines();
    assert_eq!(lines.next().unwrap(), "model,split,target,loss,seed,H@10,N@10,H@20,N@20");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], &["attn", "prefix", "single", "ce", "4"]);
    let n10: f64 = row[6].parse().unwrap();
    assert!((n10 - best).abs() < 1e-6, "{n10} vs {best}");
}

#[test]
fn counting_eval_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let log = synth_log(dir.path());
    let o = run(&["eval", "--data", log.to_str().unwrap(), "--k-core", "2", "--model", "pop"]);
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 1);
    assert!(s.starts_with("pop,prefix,single,na,na,"));
}

#[test]
fn diagnose_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let log = synth_log(dir.path());
    let out = dir.path().join("diag");
    let o = run(&[
        "diagnose", "--data", log.to_str().unwrap(), "--k-core", "2", "--split", "suffix", "--out", out.to_str().unwrap(),
    ]);
    assert!(stdout(&o).contains("coverage="));
    let rank = std::fs::read_to_string(out.join("target_rank.csv")).unwrap();
    assert!(rank.starts_with("rank,probability\n1,"));
    let ipt = std::fs::read_to_string(out.join("inputs_per_target.csv")).unwrap();
    assert!(ipt.starts_with("target_item,example_count,distinct_inputs\n"));
}

#[test]
fn grid_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let log = synth_log(dir.path());
    let cfg = dir.path().join("grid.toml");
    std::fs::write(
        &cfg,
        r#"
[[datasets]]
name = "s"
path = "synth.tsv"
k_core = 2

[axes]
models = ["pop", "gru"]
splits = ["original", "prefix"]
targets = ["single"]
losses = ["ce", "bce"]
seeds = [1, 2]

[train]
dim = 8
max_len = 10
max_epochs = 2
"#,
    )
    .unwrap();
    assert!(log.exists());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(stdout(&o).contains("cells=16 succeeded=16 failed=0"), "{}", stdout(&o));
    }
    for f in ["results.csv", "summary_best_worst.csv", "summary_tallies.csv", "manifest.json", "failures.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let results = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 17);
}
