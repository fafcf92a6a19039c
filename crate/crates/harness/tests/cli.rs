use std::path::Path;
use std::process::{Command, Output};

use resil_core::io::read_matrix_bin;

fn resil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resil")).args(args).output().expect("spawn resil")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(out)).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_basis_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("basis.bin");
    stdout(&resil(&["gen", "--kind", "basis", "--n", "4", "--out", path(&out)]));
    let m = read_matrix_bin(&out, 4, 4).unwrap();
    assert_eq!(m, nalgebra::DMatrix::identity(4, 4));
    assert!(dir.path().join("basis.json").exists());
}

#[test]
fn gen_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        stdout(&resil(&["gen", "--kind", "gaussian", "--n", "50", "--d", "3", "--eps", "0.1", "--seed", seed, "--out", path(&p)]));
        std::fs::read(p).unwrap()
    };
    assert_eq!(bytes("a.bin", "7"), bytes("b.bin", "7"));
    assert_ne!(bytes("a.bin", "7"), bytes("c.bin", "8"));
}

#[test]
fn bad_eps_is_a_usage_error() {
    let out = resil(&["gen", "--kind", "gaussian", "--eps", "2", "--format", "json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn estimate_needs_a_sigma_choice() {
    let out = resil(&["estimate", "--points", "0,1,2,3", "--alpha", "0.9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_profile_on_four_points() {
    let text = stdout(&resil(&["certify", "--points", "0,0,0,3", "--norm", "l1", "--eps-grid", "0.25,0.75"]));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# resil-csv v1 profile"));
    let sigmas: Vec<f64> = lines.skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(sigmas, vec![0.75, 2.25]);
}

#[test]
fn basis_l1_resilience_about_origin() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("basis.bin");
    stdout(&resil(&["gen", "--kind", "basis", "--n", "6", "--out", path(&data)]));
    let text = stdout(&resil(&["certify", "--input", path(&data), "--norm", "l1", "--center", "zero", "--eps-grid", "0.5"]));
    let sigma: f64 = text.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((sigma - 1.0).abs() < 1e-9, "{sigma}");
}

#[test]
fn certify_core_drops_the_outlier() {
    let v = json(&resil(&["certify", "--points", "0,0,0,3", "--core", "0.75"]));
    assert_eq!(v["core"], serde_json::json!([0, 1, 2]));
}

#[test]
fn list_decoding_separates_mirror_copies() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("m.bin");
    stdout(&resil(&[
        "gen", "--kind", "gaussian", "--n", "200", "--d", "5", "--eps", "0.5", "--adversary", "mirror:2:40", "--seed", "3",
        "--out", path(&data),
    ]));
    for sigma in [&["--sigma", "1.2"][..], &["--auto-sigma"][..]] {
        let mut args = vec!["estimate", "--input", path(&data), "--alpha", "0.5", "--mode", "general"];
        args.extend_from_slice(sigma);
        let v = json(&resil(&args));
        let count = v["report"]["candidates"].as_array().unwrap().len();
        assert!(count >= 2, "{sigma:?}: {count} candidates");
        assert!(v["error"].as_f64().unwrap() < 1.0, "{sigma:?}: {}", v["error"]);
    }
}

#[test]
fn unknown_suite_lists_the_choices() {
    let out = resil(&["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("counterexample") && err.contains("fast-l2"), "{err}");
}

#[test]
fn verify_counterexample_suite() {
    let text = stdout(&resil(&["verify", "counterexample"]));
    assert!(text.starts_with("PASS"), "{text}");
}

#[test]
fn bench_rejects_empty_grid() {
    let out = resil(&["bench", "--eps", ""]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_without_timing_is_reproducible() {
    let args = ["bench", "--n", "60", "--d", "2", "--eps", "0.05,0.1", "--trials", "2", "--no-timing", "--seed", "4"];
    let a = stdout(&resil(&args));
    assert!(a.starts_with("# resil-csv v1 bench"));
    assert_eq!(a, stdout(&resil(&args)));
}
