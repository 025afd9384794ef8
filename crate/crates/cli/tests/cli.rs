use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spcot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcot"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn spcot")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &str = "epochs = 2\niters_per_epoch = 2\nn = 20\nhw = 16\nlabeled_ratio = 0.1\n";

#[test]
fn gen_data_reports_split_sizes_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--out", "d", "--seed", "7", "--n", "200", "--hw", "32", "--labeled-ratio", "0.05"];
    let o = spcot(&args, tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "labeled=10 unlabeled=190 test=40");

    let first: Vec<Vec<u8>> = ["images.spct", "masks.spct", "split.txt"]
        .iter()
        .map(|f| fs::read(tmp.path().join("d").join(f)).unwrap())
        .collect();
    let args2 = ["gen-data", "--out", "e", "--seed", "7", "--n", "200", "--hw", "32", "--labeled-ratio", "0.05"];
    assert_eq!(spcot(&args2, tmp.path()).status.code(), Some(0));
    for (i, f) in ["images.spct", "masks.spct", "split.txt"].iter().enumerate() {
        assert_eq!(first[i], fs::read(tmp.path().join("e").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = spcot(&["gen-data", "--seed", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
    let o = spcot(&["gen-data", "--out", "d", "--hw", "8"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = spcot(&["gen-data", "--out", "d", "--n", "10", "--labeled-ratio", "0.01"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_io_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "file, not a directory").unwrap();
    let o = spcot(&["gen-data", "--out", "blocker/d", "--n", "20", "--hw", "16", "--labeled-ratio", "0.1"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn train_writes_record_checkpoint_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.txt"), SHORT).unwrap();
    let o = spcot(&["train", "--config", "c.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("final_dsc=") && line.contains(" final_hd="), "{line}");

    let record = fs::read_to_string(tmp.path().join("run/record.csv")).unwrap();
    let lines: Vec<&str> = record.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch,gamma,alpha,lr,"));
    let manifest = fs::read_to_string(tmp.path().join("run/checkpoint/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 2 * 2 * 6);

    // evaluating the saved teachers reproduces the summary line
    assert_eq!(
        spcot(&["gen-data", "--out", "d", "--seed", "0", "--n", "20", "--hw", "16", "--labeled-ratio", "0.1"], tmp.path())
            .status
            .code(),
        Some(0)
    );
    let o = spcot(&["evaluate", "--checkpoint", "run/checkpoint", "--data", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dsc = line.split_whitespace().next().unwrap().trim_start_matches("final_dsc=");
    assert!(stdout(&o).contains(&format!("dsc={dsc} ")), "{} vs {line}", stdout(&o));
}

#[test]
fn train_is_deterministic_with_and_without_parallel_views() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("a.txt"), SHORT).unwrap();
    fs::write(tmp.path().join("b.txt"), format!("{SHORT}parallel_views = true\n")).unwrap();
    for (cfg, out) in [("a.txt", "r1"), ("a.txt", "r2"), ("b.txt", "r3")] {
        let o = spcot(&["train", "--config", cfg, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("record.csv")).unwrap();
    assert_eq!(read("r1"), read("r2"));
    assert_eq!(read("r1"), read("r3"));
}

#[test]
fn baseline_flags_give_zero_unsupervised_losses() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.txt"),
        format!("{SHORT}enable_spc = false\nenable_consistency = false\n"),
    )
    .unwrap();
    let o = spcot(&["train", "--config", "c.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let record = fs::read_to_string(tmp.path().join("run/record.csv")).unwrap();
    for row in record.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[5], f[6]), ("0", "0"), "{row}");
    }
}

#[test]
fn config_errors_exit_2_and_name_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.txt"), "epochs = 2\nfoo = 1\n").unwrap();
    let o = spcot(&["train", "--config", "c.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("foo") && msg.contains("line 2"), "{msg}");

    fs::write(tmp.path().join("v.txt"), "lambda1 = -1\n").unwrap();
    let o = spcot(&["train", "--config", "v.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda1"));

    let o = spcot(&["train", "--config", "missing.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_abort_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.txt"), format!("{SHORT}base_lr = 1e300\n")).unwrap();
    let o = spcot(&["train", "--config", "c.txt", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn ablate_single_seed_grid() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.txt"), SHORT).unwrap();
    let o = spcot(&["ablate", "--config", "c.txt", "--out", "abl", "--seeds", "3"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("abl/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[3], "1", "{row}");
        assert_eq!(f[5], "0", "one seed gives zero std: {row}");
    }
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count() >= 4, "{out}");

    let o = spcot(&["ablate", "--config", "c.txt", "--out", "abl", "--seeds", "1,x"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = spcot(&["verify", "--cases", "100", "--out", "v"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(tmp.path().join("v/verify.csv")).unwrap();
    assert!(csv.starts_with("name,cases,max_error,tolerance,pass"));

    assert_eq!(spcot(&["verify", "--cases", "0"], tmp.path()).status.code(), Some(2));
    let o = spcot(&["verify", "--cases", "100", "--out", "w", "--inject-wrong-gradient"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL grad_composite"));
}
