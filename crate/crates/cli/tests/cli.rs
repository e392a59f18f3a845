use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qtraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtraj")).args(args).output().expect("qtraj starts")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_the_bundled_scenarios() {
    let o = qtraj(&["list-scenarios"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for id in ["free_gaussian", "coherent_state", "coupled_product", "coupled_entangled", "entangled_kick", "identical_symmetrized"] {
        assert!(text.contains(id), "{id} missing from\n{text}");
    }
}

#[test]
fn run_writes_reproducible_artifacts() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    for dir in [&first, &second] {
        let o = qtraj(&["run", "free_gaussian", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        assert!(stdout(&o).contains("PASS trajectory_error"));
    }
    for name in ["trajectories.csv", "wavefunction_0.csv", "wavefunction_8.csv"] {
        let a = fs::read(first.path().join(name)).unwrap();
        let b = fs::read(second.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    assert!(first.path().join("report.json").exists());
    assert!(first.path().join("manifest.json").exists());
}

#[test]
fn verify_reports_failing_metrics() {
    let o = qtraj(&["verify", fixture("unreachable_threshold.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL reconstruction_error"));
}

#[test]
fn coarse_step_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtraj(&["run", fixture("coarse_step.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL trajectory_error"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("jacobian collapse"));
}

#[test]
fn configuration_errors_exit_three() {
    let o = qtraj(&["verify", fixture("misspelled_key.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dtt"));
    assert_eq!(qtraj(&["verify", "no_such_scenario"]).status.code(), Some(3));
    assert_eq!(qtraj(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(qtraj(&["converge", "free_gaussian", "--levels", "0.1"]).status.code(), Some(3));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_qtraj")).arg("list-scenarios").env("QTRAJ_THREADS", "zero").output().unwrap();
    assert_eq!(bad_threads.status.code(), Some(3));
}

#[test]
fn converge_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = qtraj(&["converge", "free_gaussian", "--levels", "0.1:41,0.05:41,0.025:41", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("temporal order: 3.9"));
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("kind,dt,points,spacing,value\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("level,")).count(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    for (dir, n) in [(&one, "1"), (&four, "4")] {
        let o = Command::new(env!("CARGO_BIN_EXE_qtraj"))
            .args(["run", fixture("unreachable_threshold.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
            .env("QTRAJ_THREADS", n)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(1));
    }
    assert_eq!(fs::read(one.path().join("trajectories.csv")).unwrap(), fs::read(four.path().join("trajectories.csv")).unwrap());
}
