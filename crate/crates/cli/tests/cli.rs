//! Drives the `netgen` binary end to end on tiny configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netgen_core::dataset::load_dataset;

const SMALL: &str = r#"{
  "data": {"synth": {"v": 8, "t": 32, "n": 40, "module_sizes": [4, 4], "planted": "M1"}},
  "encoder": {"window": 4, "dim": 4},
  "train": {"epochs": 2, "lr": 0.001, "batch_size": 8},
  "seeds": [0, 1],
  "sweep": {"windows": [4, 8], "dims": [4]}
}"#;

fn netgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netgen")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_in(dir: &Path, cmd: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir, "cfg.json", SMALL);
    let out_dir = dir.join(out);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    netgen(&args)
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_writes_loadable_reproducible_data() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run_in(tmp.path(), "synth", "a", &["--seed", "5"]));
    ok(&run_in(tmp.path(), "synth", "b", &["--seed", "5"]));
    let ds = load_dataset(&tmp.path().join("a")).unwrap();
    assert_eq!((ds.n(), ds.rois(), ds.steps()), (40, 8, 32));
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    ok(&run_in(tmp.path(), "synth", "c", &["--seed", "6"]));
    assert_ne!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("c")));
}

#[test]
fn synth_default_spec_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.json", r#"{"data": {"synth": {}}, "output": "data"}"#);
    ok(&netgen(&["synth", "--config", cfg.to_str().unwrap()]));
    let ds = load_dataset(&tmp.path().join("data")).unwrap();
    assert_eq!((ds.n(), ds.rois(), ds.steps(), ds.partition().len()), (400, 20, 64, 4));
}

#[test]
fn bad_configs_exit_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = [
        SMALL.replace("\"M1\"", "\"M7\""),
        SMALL.replace("\"epochs\": 2", "\"epochs\": 0"),
        SMALL.replace("\"window\": 4", "\"window\": 40"),
        SMALL.replace("\"lr\"", "\"learning_rate\""),
        r#"{"data": {"path": "no/such/dir"}}"#.to_string(),
        "not json".to_string(),
    ];
    for (i, body) in bad.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        for cmd in ["synth", "train"] {
            let out = tmp.path().join(format!("{cmd}{i}"));
            let r = netgen(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            if cmd == "synth" && (i == 1 || i == 2) {
                // model and training settings are not consulted when only generating data
                continue;
            }
            assert_eq!(r.status.code(), Some(2), "{cmd} config {i}: {}", String::from_utf8_lossy(&r.stderr));
            assert!(!out.exists(), "{cmd} config {i} left {out:?}");
        }
    }
    assert_eq!(netgen(&["train"]).status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run_in(tmp.path(), "train", "a", &["--epochs", "3"]));
    ok(&run_in(tmp.path(), "train", "b", &["--epochs", "3"]));
    let a = tmp.path().join("a");
    for f in ["checkpoint.json", "history.csv", "metrics.json", "run.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(a.join("history.csv")).unwrap().lines().count(), 4);
    let (x, y) = (dir_bytes(&a), dir_bytes(&tmp.path().join("b")));
    // run.json records the output path, which differs
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != Path::new("run.json")).collect()
    };
    assert_eq!(strip(x), strip(y));
}

#[test]
fn table_commands_emit_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run_in(tmp.path(), "compare", "c", &["--epochs", "1"]));
    let compare = fs::read_to_string(tmp.path().join("c/compare.csv")).unwrap();
    let lines: Vec<&str> = compare.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].contains("auroc_mean") && lines[0].contains("accuracy_mean"));
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["fbnetgen-cnn", "fbnetgen-gru", "gnn-uniform", "gnn-pearson", "seq-cnn", "seq-gru"]);

    ok(&run_in(tmp.path(), "ablate", "a", &["--epochs", "1"]));
    let ablation = fs::read_to_string(tmp.path().join("a/ablation.csv")).unwrap();
    let variants: Vec<&str> = ablation.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["All", "CE", "CE+GL", "CE+SL"]);

    ok(&run_in(tmp.path(), "sweep", "s", &["--epochs", "1", "--seed", "3"]));
    let sweep = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().skip(1).all(|l| l.ends_with(",1")), "one seed per cell:\n{sweep}");
}

#[test]
fn interpret_emits_the_four_tables() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run_in(tmp.path(), "train", "t", &[]));
    let ck = tmp.path().join("t/checkpoint.json");
    ok(&run_in(tmp.path(), "interpret", "i", &["--checkpoint", ck.to_str().unwrap()]));
    let i = tmp.path().join("i");
    for f in ["mean_graph_all.csv", "mean_graph_class0.csv", "mean_graph_class1.csv", "edges_significant.csv", "module_scores.csv"] {
        assert!(i.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(i.join("mean_graph_all.csv")).unwrap().lines().count(), 8);
    let scores = fs::read_to_string(i.join("module_scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("module,score"));
    assert_eq!(scores.lines().count(), 3);
    let pgm = fs::read(i.join("mean_graph_all.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(pgm.len(), b"P5\n8 8\n255\n".len() + 64);

    let missing = tmp.path().join("none.json");
    let r = run_in(tmp.path(), "interpret", "j", &["--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!tmp.path().join("j").exists());
}
