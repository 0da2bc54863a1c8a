use std::path::Path;
use std::process::{Command, Output};

fn pmhdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmhdg"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("case.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh_n = 3\ndt = 0.05\nend_time = 0.2\n");
    let first = pmhdg(&["run", "gaussian-hump", "--config", &cfg, "--seed", "7"]);
    let second = pmhdg(&["run", "gaussian-hump", "--config", &cfg, "--seed", "7"]);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(!first.stdout.is_empty());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn flow_runs_are_deterministic_too() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh_n = 2\ndt = 0.1\nend_time = 0.3\n");
    let a = pmhdg(&["run", "taylor-green", "--config", &cfg]);
    let b = pmhdg(&["run", "taylor-green", "--config", &cfg]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn output_directory_receives_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mesh_n = 3\ndt = 0.05\nend_time = 0.1\n");
    let out = dir.path().join("out");
    let r = pmhdg(&[
        "run",
        "gaussian-hump",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(std::fs::read_dir(&out).unwrap().count() > 0);
}

#[test]
fn bad_input_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = pmhdg(&["run", "no-such-case"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown case"));

    let bad_key = write_config(dir.path(), "mesh_size = 3\n");
    assert!(!pmhdg(&["run", "gaussian-hump", "--config", &bad_key])
        .status
        .success());

    let bad_value = write_config(dir.path(), "dt = -1\n");
    assert!(!pmhdg(&["run", "gaussian-hump", "--config", &bad_value])
        .status
        .success());

    let missing = dir.path().join("missing.cfg");
    assert!(!pmhdg(&[
        "run",
        "gaussian-hump",
        "--config",
        missing.to_str().unwrap()
    ])
    .status
    .success());
}
