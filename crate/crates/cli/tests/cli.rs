//! End-to-end runs of the `cenreg` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
m = 2
horizon = 300
replications = 6
seed = 3
points_per_decade = 5

[thresholds]
l = -0.5
u = 1.0
L = -0.5
U = 1.0

[generator]
kind = "iid-bounded"
half_width = 1.0
intercept = true
"#;

fn cenreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cenreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// The single experiment directory created under `out`.
fn experiment_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn run_writes_curves_report_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = cenreg(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = experiment_dir(&out);
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-seed3"));
    let csv = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
    assert!(csv.starts_with("k,err_alg1,mse_alg1,crb,err_step1,mse_step1\n"), "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("300,"));
    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("efficiency_ratio_alg1 = "));

    // The echoed config reproduces the run exactly.
    let echoed = dir.join("config.toml");
    let out2 = tmp.path().join("out2");
    let o = cenreg(&["run", "--config", echoed.to_str().unwrap(), "--out", out2.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir2 = experiment_dir(&out2);
    assert_eq!(dir.file_name(), dir2.file_name());
    for f in ["curves.csv", "report.txt", "config.toml"] {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(dir2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_and_overrides_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = cenreg(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--set",
        "horizon=50",
        "--set",
        "estimator.mu_floor=0.25",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = experiment_dir(&out);
    assert!(dir.to_str().unwrap().ends_with("-seed7"));
    let echoed = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"), "{echoed}");
    assert!(echoed.contains("horizon = 50"), "{echoed}");
    assert!(echoed.contains("mu_floor = 0.25"), "{echoed}");
}

#[test]
fn invalid_thresholds_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("L = -0.5", "L = 2.0"));
    let o = cenreg(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[config]") && err.contains("L <= l <= u <= U"), "{err}");
}

#[test]
fn unknown_keys_and_syntax_errors_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = cenreg(&["run", "--config", cfg.to_str().unwrap(), "--set", "horizn=10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("horizn"));

    let bad = write_config(tmp.path(), "m = 2\nhorizon = = 3\n");
    let o = cenreg(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = cenreg(&["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_failures_exit_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cenreg(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), SMALL);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = cenreg(&["run", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn fisher_reports_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = cenreg(&["fisher", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "-v"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(experiment_dir(&out).join("fisher.txt")).unwrap();
    assert!(text.contains("column_0_delta = ") && text.contains("crb_scaled = "), "{text}");
    assert!(stdout(&o).contains("trace_inverse = "));
}

#[test]
fn check_lists_every_invariant_and_passes() {
    let o = cenreg(&["check"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    for area in ["kernel:", "projection:", "estimator:", "fisher:", "sim:"] {
        assert!(text.contains(area), "{text}");
    }
    assert!(text.contains("15 of 15 checks passed"), "{text}");
}

#[test]
fn bench_reports_all_dimensions() {
    let o = cenreg(&["bench", "--steps", "2000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for m in ["m =  2", "m = 10", "m = 50"] {
        assert!(text.contains(m), "{text}");
    }
    let o = cenreg(&["bench", "--steps", "200", "--floor", "1e30"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = cenreg(&["check", "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cenreg(&["check", "--threads", "lots"]);
    assert_eq!(o.status.code(), Some(2));
}
