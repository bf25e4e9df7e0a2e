use std::path::Path;
use std::process::{Command, Output};

fn ssnflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssnflow")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_passes_for_other_seeds() {
    for seed in ["42", "43"] {
        let o = ssnflow(&["verify", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
        assert!(!stdout(&o).contains("FAIL"));
    }
}

#[test]
fn verify_names_the_first_failing_property_under_mutation() {
    let o = ssnflow(&["verify", "--mutation", "flip-d2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("first failing property: pointwise_jacobian_fd"), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL pointwise_jacobian_fd"));
}

#[test]
fn verify_rejects_unknown_property() {
    let o = ssnflow(&["verify", "--only", "no_such_property"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(ssnflow(&["poiseuille", "--refinements", "-1"]).status.code(), Some(2));
    assert_eq!(ssnflow(&["cavity"]).status.code(), Some(2));
    assert_eq!(ssnflow(&["poiseuille", "--tau-star", "-1"]).status.code(), Some(2));
    assert_eq!(ssnflow(&["poiseuille", "--eps-schedule", "0.1,0.5"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "command = poiseuille\nbogus = 1\n").unwrap();
    let o = ssnflow(&["--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key 'bogus'"), "{}", stderr(&o));
}

#[test]
fn max_form_with_reuse_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssnflow(&[
        "poiseuille", "--form", "max", "--refinements", "0", "--eps-schedule", "0.5", "--out", path(dir.path()),
    ]);
    assert!(stderr(&o).to_lowercase().contains("warn"), "{}", stderr(&o));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("a"), dir.path().join("b"));
    let o = ssnflow(&[
        "poiseuille", "--refinements", "0", "--eps-schedule", "0.5,0.0166", "--out", path(&first),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(first.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = poiseuille") && manifest.contains("eps-schedule = 0.5,0.0166"));

    let o = ssnflow(&["--config", path(&first.join("manifest.txt")), "--out", path(&second)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = std::fs::read_to_string(first.join("errors.csv")).unwrap();
    let b = std::fs::read_to_string(second.join("errors.csv")).unwrap();
    assert_eq!(a, b);
    assert!(second.join("poiseuille_r0.vtk").exists());
}

#[test]
fn small_cavity_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssnflow(&[
        "cavity", "--tau-star", "2,5", "--refinements", "0", "--base-cells", "8", "--dt", "0.01", "--steady-tol", "1e-4",
        "--jobs", "2", "--out", path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows.len(), 3, "{metrics}");
    assert!(rows[0].starts_with("tau_star,"));
    assert!(rows[1].starts_with("2,") && rows[2].starts_with("5,"));
    assert!(dir.path().join("cavity_tau2.vtk").exists());
}

#[test]
fn version_reports_build() {
    let o = ssnflow(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("ssnflow 0.1.0 ("));
}
