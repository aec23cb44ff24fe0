use std::path::Path;
use std::process::{Command, Output};

use fracsde::SampledPath;

fn fracsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracsde")).args(args).output().expect("binary runs")
}

fn read_path(p: &Path) -> SampledPath {
    SampledPath::read_csv(std::fs::File::open(p).unwrap()).unwrap()
}

#[test]
fn fbm_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let o = fracsde(&["fbm", "--steps", "1024", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1026);
    assert_eq!(text.lines().next(), Some("t,value"));
    assert_eq!(read_path(&out).value(0), 0.0);
}

#[test]
fn same_seed_same_bytes() {
    let a = fracsde(&["fbm", "--steps", "64", "--seed", "9"]);
    let b = fracsde(&["fbm", "--steps", "64", "--seed", "9"]);
    let c = fracsde(&["fbm", "--steps", "64", "--seed", "10"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    assert!(fracsde(&["fbm", "--steps", "128", "--seed", "1", "--out", first.to_str().unwrap()]).status.success());
    let path = read_path(&first);
    path.write_csv(std::fs::File::create(&second).unwrap()).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn mc_prints_a_passing_json_report() {
    let o = fracsde(&["mc", "--experiment", "lognormal-mean", "--samples", "2000", "--steps", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["samples"], 2000);
}

#[test]
fn driver_file_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let driver = dir.path().join("b.csv");
    let out = dir.path().join("x.csv");
    assert!(fracsde(&["fbm", "--steps", "256", "--seed", "4", "--out", driver.to_str().unwrap()]).status.success());
    let o = fracsde(&[
        "solve-linear",
        "--driver",
        driver.to_str().unwrap(),
        "--a1",
        "0.5",
        "--beta1",
        "0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = read_path(&driver);
    let x = read_path(&out);
    let want = (0.1 + 0.5 * b.last() - 0.125).exp();
    assert!((x.last() - want).abs() / want < 1e-3, "{} vs {want}", x.last());
}

#[test]
fn nonlinear_past_the_horizon_exits_two_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = fracsde(&[
        "solve-nonlinear",
        "--coeff",
        "sine:4",
        "--seed",
        "7",
        "--steps",
        "2048",
        "--eta",
        "0.3",
        "--times",
        "0.25,0.5,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("horizon"), "{stderr}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_input_exit_codes() {
    assert_eq!(fracsde(&["fbm", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(fracsde(&["fbm", "--hurst", "0.4"]).status.code(), Some(1));
    assert_eq!(fracsde(&["frac", "ileft", "--alpha", "0.5", "--in", "/no/such/file.csv"]).status.code(), Some(3));
    assert_eq!(fracsde(&["--help"]).status.code(), Some(0));
}
