//! End-to-end checks of the two binaries: exit codes, JSON output,
//! determinism modulo wall-clock fields, and configuration rejection.

use std::process::{Command, Output};

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

fn code_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_code"))
}

/// Overrides that shrink everything to seconds on one core.
fn small_args(out_dir: &std::path::Path) -> Vec<String> {
    let sets = [
        "code.k=8",
        "code.seed=5",
        "instance.m=4",
        "gd.t=128",
        "harness.trials=3",
        "harness.gd_trials=2",
        "harness.sweep_trials=6",
        "harness.sweep_j_max=4",
        "harness.probes_per_trial=40",
        "harness.eps_trials=2",
        "harness.eps_probes_per_trial=30",
        "harness.pair_samples=200",
        "harness.argmax_queries=30",
        "harness.lipschitz_samples=60",
        "harness.concentration_trials=200",
    ];
    let mut args = Vec::new();
    for s in sets {
        args.push("--set".to_string());
        args.push(s.to_string());
    }
    args.push("--out".to_string());
    args.push(out_dir.display().to_string());
    args
}

fn run_ok(mut cmd: Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn trial_json(out_dir: &std::path::Path, index: u64) -> serde_json::Value {
    let mut cmd = lab();
    cmd.args(small_args(out_dir));
    cmd.args(["trial", "--mode", "erm", "--index", &index.to_string()]);
    let out = run_ok(cmd);
    serde_json::from_slice(&out.stdout).expect("trial output is JSON")
}

#[test]
fn trial_output_is_deterministic_modulo_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = trial_json(dir.path(), 0);
    let mut b = trial_json(dir.path(), 0);
    assert!(a["certificates_ok"].as_bool().unwrap());
    assert!(a["runtime_ms"].as_f64().unwrap() > 0.0);
    a.as_object_mut().unwrap().remove("runtime_ms");
    b.as_object_mut().unwrap().remove("runtime_ms");
    assert_eq!(a, b, "identical trials must agree on every reproducible field");

    let mut c = trial_json(dir.path(), 1);
    c.as_object_mut().unwrap().remove("runtime_ms");
    assert_ne!(a, c, "different trial indices draw different samples");
}

#[test]
fn bad_configuration_is_rejected_with_nonzero_exit() {
    let out = lab()
        .args(["--set", "code.rho=0.9", "trial"])
        .output()
        .expect("spawn");
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("configuration"), "stderr was: {stderr}");
}

#[test]
fn converge_passes_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = lab();
    cmd.args(small_args(dir.path()));
    cmd.arg("converge");
    let out = run_ok(cmd);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["within_epsilon"].as_bool().unwrap());
    assert!(json["pass"].as_bool().unwrap());
}

#[test]
fn accept_prints_ten_pass_lines_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = lab();
    cmd.args(small_args(dir.path()));
    cmd.arg("accept");
    let out = run_ok(cmd);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let pass_lines = stdout.lines().filter(|l| l.starts_with("[PASS]")).count();
    assert_eq!(pass_lines, 10, "stdout was:\n{stdout}");
    assert!(stdout.contains("acceptance: PASS"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("acceptance.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["outcomes"].as_array().unwrap().len(), 10);
    assert!(report["all_pass"].as_bool().unwrap());
}

#[test]
fn run_writes_all_three_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = lab();
    cmd.args(small_args(dir.path()));
    cmd.arg("run");
    let out = run_ok(cmd);
    let paths: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let csv = std::fs::read_to_string(paths["trials_csv"].as_str().unwrap()).unwrap();
    assert!(csv.starts_with("seed,mode,m,k,eta,T,s,conditioned,"));
    // 3 exact-minimization trials plus 2 descent trials, after the header.
    assert_eq!(csv.lines().count(), 6);
    let agg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(paths["aggregate_json"].as_str().unwrap()).unwrap(),
    )
    .unwrap();
    assert!(agg["trials"]["all_certificates_ok"].as_bool().unwrap());
    assert!(agg["sweep"]["monotone_ok"].as_bool().unwrap());
    assert!(agg["convergence"]["pass"].as_bool().unwrap());
    assert!(std::fs::read_to_string(paths["summary_txt"].as_str().unwrap())
        .unwrap()
        .contains("sweep:"));
}

#[test]
fn concentration_reports_a_high_fraction_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = lab();
    cmd.args(small_args(dir.path()));
    cmd.arg("concentration");
    let out = run_ok(cmd);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["trials"], 200);
    assert!(json["fraction"].as_f64().unwrap() >= 0.9);
}

#[test]
fn code_build_verify_roundtrip_and_corruption_detection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("code.bin");
    let mut build = code_bin();
    build.args(["build", "--k", "8", "--rho", "0.10", "--seed", "5"]);
    build.args(["--out", path.to_str().unwrap()]);
    let out = run_ok(build);
    let built: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(built["k"], 8);
    assert!(built["rho"].as_f64().unwrap() >= 0.10);

    let mut verify = code_bin();
    verify.args(["verify", "--in", path.to_str().unwrap()]);
    let out = run_ok(verify);
    let verified: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verified, built, "verify must reproduce the build summary exactly");

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[40] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    let out = code_bin()
        .args(["verify", "--in", path.to_str().unwrap()])
        .output()
        .expect("spawn");
    assert!(!out.status.success(), "corrupted file must fail verification");
}
