use std::path::Path;
use std::process::{Command, Output};

fn mfkd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfkd"))
        .args(args)
        .current_dir(dir)
        .env_remove("MFKD_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(dir: &Path, name: &str, rows: &[&str]) -> String {
    let cols = rows[0].split_whitespace().count();
    let mut text = format!("{{\"rows\":{},\"cols\":{cols},\"role\":\"features\"}}\n", rows.len());
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_full_table() {
    let d = tempfile::tempdir().unwrap();
    let o = mfkd(d.path(), &["synth", "--edges", "6", "--ops", "3", "--tau", "0.47", "--seed", "1", "--out", "b.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.path().join("b.jsonl")).unwrap();
    let records = text.lines().filter(|l| l.contains("val_acc_high")).count();
    assert_eq!(records, 729);
    assert!(stdout(&o).contains("wrote 729 architectures"));
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["search", "--synthetic", "tau=0.47,size=81"],
        &["compare", "--synthetic", "tau=0.47,size=81", "--methods", "mfkd"],
        &["search", "--method", "mfkd"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(mfkd(d.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let o = mfkd(d.path(), &["correlate", "--bench", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mfkd(d.path(), &["synth", "--tau", "1.5", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn kd_eval_identical_and_orthogonal() {
    let d = tempfile::tempdir().unwrap();
    let a = fixture(d.path(), "a.txt", &["1 0 0", "0.3 0.7 0.2"]);
    let e1 = fixture(d.path(), "e1.txt", &["1 0"]);
    let e2 = fixture(d.path(), "e2.txt", &["0 1"]);

    let o = mfkd(d.path(), &["kd-eval", "--teacher-features", &a, "--student-features", &a]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("config: tau=1 lambda=0.5 nst_beta=12.5 kernel_c=0 kernel_b=2"), "{out}");
    assert!(out.contains("mmd2 = 0.0\n") || out.contains("mmd2 = 0\n"), "{out}");

    let o = mfkd(d.path(), &["kd-eval", "--teacher-features", &e1, "--student-features", &e2]);
    assert!(stdout(&o).contains("mmd2 = 2.0\n"), "{}", stdout(&o));
}

#[test]
fn compare_with_one_run_skips_significance() {
    let d = tempfile::tempdir().unwrap();
    let o = mfkd(
        d.path(),
        &["compare", "--synthetic", "tau=0.47,size=81", "--methods", "mfkd,random", "--runs", "1",
          "--n1", "10", "--n2", "4", "--budget", "100", "--seed", "3", "--out", "c"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("significance test skipped"));
    for f in ["results.json", "curves.csv", "manifest.json"] {
        assert!(d.path().join("c").join(f).exists(), "{f}");
    }
}

#[test]
fn search_writes_outputs_and_timestamps_only_in_manifest() {
    let d = tempfile::tempdir().unwrap();
    let o = mfkd(
        d.path(),
        &["search", "--synthetic", "tau=0.47,size=81", "--method", "mfkd", "--runs", "2",
          "--n1", "10", "--n2", "4", "--budget", "100", "--seed", "3", "--out", "s"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(d.path().join("s/results.json")).unwrap();
    assert!(!results.contains("started_at"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "search");
    assert!(manifest["started_at"].is_string());
    let traj = std::fs::read_to_string(d.path().join("s/trajectory.csv")).unwrap();
    assert!(traj.starts_with("run,step,arch,fidelity,"));
}

#[test]
fn data_dir_resolves_relative_bench() {
    let data = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let o = mfkd(data.path(), &["synth", "--edges", "3", "--ops", "3", "--tau", "0.47", "--seed", "2", "--out", "b.jsonl"]);
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_mfkd"))
        .args(["correlate", "--bench", "b.jsonl"])
        .current_dir(work.path())
        .env("MFKD_DATA_DIR", data.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("val_acc_low\t"), "{}", stdout(&o));
}
