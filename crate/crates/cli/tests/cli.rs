use std::path::Path;
use std::process::{Command, Output};

fn hito(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hito"))
        .args(args)
        .current_dir(dir)
        .env("HITO_WORKERS", "1")
        .output()
        .expect("spawn hito")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn unknown_key_exits_2_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"ito-purejump\"\nmaster_seed = 1\noutput_dir = \"out\"\n[ito_purejump]\ntoll = 1e-8\n",
    );
    let out = hito(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5") && err.contains("toll"), "{err}");
}

#[test]
fn cushion_violation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"ito-brownian\"\nmaster_seed = 1\noutput_dir = \"out\"\n[ito_brownian]\nn_big = 30\nn_eval = 28\n",
    );
    let out = hito(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ito_brownian.n_eval"));
}

#[test]
fn missing_config_and_bad_usage_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hito(&["run", "nope.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(hito(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3_with_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"levy-spde\"\nmaster_seed = 1\noutput_dir = \"out\"\n[levy_spde]\npaths = 1\nlevel = 4\nno_jump_levels = []\nnorm_bound = 1e-30\n",
    );
    let out = hito(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("path 0"));
}

#[test]
fn passing_run_exits_0_and_writes_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"ito-purejump\"\nmaster_seed = 3\noutput_dir = \"out\"\n[ito_purejump]\npaths = 5\n",
    );
    let out = hito(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[PASS] criterion 4"));
    let v = hito::Verdict::read(&dir.path().join("out")).unwrap();
    assert!(v.pass && v.criteria() == vec![4]);
}

#[test]
fn failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"ito-purejump\"\nmaster_seed = 3\noutput_dir = \"out\"\n[ito_purejump]\npaths = 5\ntol = 0.0\n",
    );
    let out = hito(&["run", "c.toml"], dir.path());
    // round-off leaves residuals near 1e-17, above a zero tolerance
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] criterion 4"));
}

#[test]
fn summarize_needs_two_levels() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "level_08.csv", "dt,terminal_residual\n0.00390625,0.01\n");
    assert_eq!(hito(&["summarize", "."], dir.path()).status.code(), Some(2));
    write(dir.path(), "level_09.csv", "dt,terminal_residual\n0.001953125,0.005\n");
    let out = hito(&["summarize", "."], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope 1.0000"));
    assert!(dir.path().join("convergence.csv").exists() && dir.path().join("fit.csv").exists());
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = hito(&["list-presets"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("default"));
}
