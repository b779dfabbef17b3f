use std::path::Path;
use std::process::{Command, Output};

fn irpe(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irpe"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("IRPE_NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn buckets_reports_product_count_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = irpe(dir.path(), &["buckets", "--grid", "14x14", "--cls", "--beta", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "buckets: 50"));
    let csv = std::fs::read_to_string(dir.path().join("buckets_product.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 197);
    assert_eq!(csv.lines().last().unwrap(), "-1,-1,49");
}

#[test]
fn cross_export_splits_axes() {
    let dir = tempfile::tempdir().unwrap();
    let o = irpe(dir.path(), &["buckets", "--method", "cross", "--grid", "3x3", "--ppm"]);
    assert!(o.status.success());
    for f in ["buckets_cross_horizontal.csv", "buckets_cross_vertical.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn equiv_passes_and_detects_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--grid", "4x4", "--heads", "2", "--dim", "8"];
    let ok = irpe(dir.path(), &[&["equiv", "--trials", "3"][..], &small].concat());
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("PASS"));
    let bad = irpe(dir.path(), &[&["equiv", "--trials", "3", "--inject-fault"][..], &small].concat());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn gradcheck_passes_for_relative_and_baseline_setups() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [&["--targets", "qkv"][..], &["--baseline", "sasa"], &["--mode", "bias", "--absolute", "learnable"]] {
        let o = irpe(dir.path(), &[&["gradcheck"][..], extra].concat());
        assert!(o.status.success(), "{extra:?}: {}", stdout(&o));
        assert!(stdout(&o).contains("gradcheck: PASS"));
    }
}

#[test]
fn macs_table_covers_target_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let o = irpe(dir.path(), &["macs", "--cls"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("4598.9"));
    let rows = std::fs::read_to_string(dir.path().join("macs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 7);
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = irpe(dir.path(), &["config", "--method", "cross", "--beta", "5", "--targets", "qv"]);
    assert!(first.status.success());
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, stdout(&first)).unwrap();
    let again = irpe(dir.path(), &["config", "--config", path.to_str().unwrap()]);
    assert_eq!(stdout(&again), stdout(&first));
    let flag_wins = irpe(dir.path(), &["config", "--config", path.to_str().unwrap(), "--beta", "8"]);
    assert!(stdout(&flag_wins).contains("\"beta\": 8"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(irpe(dir.path(), &["buckets", "--grid", "0x2"]).status.code(), Some(2));
    assert_eq!(irpe(dir.path(), &["equiv", "--mode", "bias"]).status.code(), Some(2));
    assert_eq!(irpe(dir.path(), &["config", "--beta", "0"]).status.code(), Some(2));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_irpe"))
        .args(["buckets", "--out"])
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
