use std::path::Path;
use std::process::{Command, Output};

fn epiline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epiline")).args(args).output().expect("binary runs")
}

fn write_cam(path: &Path, tx: f64) {
    let text = format!(
        "extrinsic\n1 0 0 {tx}\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\nintrinsic\n100 0 0\n0 100 0\n0 0 1\n\n10 1\n"
    );
    std::fs::write(path, text).unwrap();
}

fn cams(dir: &Path, baseline: f64) -> (String, String) {
    let (r, s) = (dir.join("ref.txt"), dir.join("src.txt"));
    write_cam(&r, 0.0);
    write_cam(&s, -baseline);
    (r.display().to_string(), s.display().to_string())
}

#[test]
fn rectified_pairs_are_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (r, s) = cams(dir.path(), 0.2);
    let out = epiline(&["pairs", "--size", "8x8", "--sk", "0.1", "--sb", "1", "--ref-cam", &r, "--src-cam", &s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("\"ref_pixels\"").count(), 8, "{text}");
}

#[test]
fn zero_baseline_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (r, s) = cams(dir.path(), 0.0);
    let out = epiline(&["pairs", "--size", "8x8", "--ref-cam", &r, "--src-cam", &s]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));
}

#[test]
fn verify_rejects_zero_trials() {
    let out = epiline(&["verify", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn injected_fault_fails_verify() {
    let out = epiline(&["verify", "--trials", "1", "--inject-fault"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL collinearity"));
}

#[test]
fn verify_passes_small() {
    let out = epiline(&["verify", "--trials", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn sweep_and_bench_run() {
    let out = epiline(&["sweep", "--size", "32x40", "--grid", "0.1:10,0.2:20"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);
    let out = epiline(&[
        "bench", "--size", "16x20", "--channels", "8", "--heads", "2", "--repeats", "3", "--strategies", "l2l,p2p",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("line-to-line") && text.starts_with("# 16x20"), "{text}");
}

#[test]
fn augment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("aug");
    let p = prefix.display().to_string();
    let out = epiline(&["augment", "--size", "16x16", "--channels", "8", "--heads", "2", "--symmetric", "--out", &p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("aug_src.epfm").exists() && dir.path().join("aug_ref.epfm").exists());
}
