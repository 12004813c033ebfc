use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn slem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slem")).args(args).output().unwrap()
}

fn golden_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden/config")
}

fn stage(work: &Path, cmd: &str, config: &str, out: &str) -> Output {
    let cfg = work.join(config);
    let out = work.join(out);
    slem(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn golden_pipeline_runs_end_to_end() {
    let work = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(golden_configs()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, work.path().join(p.file_name().unwrap())).unwrap();
    }
    for (cmd, cfg, out) in [
        ("simulate", "simulate.json", "sim"),
        ("fit", "fit.json", "fit"),
        ("predict", "predict.json", "predict"),
        ("score", "score.json", "score"),
    ] {
        let o = stage(work.path(), cmd, cfg, out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(summary.is_object(), "{cmd} summary");
    }
    for f in ["sim/Y_000.csv", "fit/theta.json", "fit/W_star.csv", "predict/local_var.csv", "score/score.json"] {
        assert!(work.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn grid_bins_points() {
    let work = tempfile::tempdir().unwrap();
    fs::write(work.path().join("pts.csv"), "x,y\n0.5,0.5\n1.5,0.5\n1.6,0.7\n9,9\n").unwrap();
    fs::write(
        work.path().join("grid.json"),
        r#"{"grid": {"n1": 2, "n2": 2, "x_min": 0, "x_max": 2, "y_min": 0, "y_max": 2}, "points": "pts.csv"}"#,
    )
    .unwrap();
    let o = stage(work.path(), "grid", "grid.json", "out");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["in_domain"], 3);
    assert_eq!(summary["out_of_domain"], 1);
}

#[test]
fn config_errors_exit_with_one() {
    let work = tempfile::tempdir().unwrap();
    fs::write(
        work.path().join("bad.json"),
        r#"{"grid": {"n1": 2, "n2": 2, "x_min": 0, "x_max": 2, "y_min": 0, "y_max": 2}, "points": "p.csv", "colour": 1}"#,
    )
    .unwrap();
    let o = stage(work.path(), "grid", "bad.json", "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = stage(work.path(), "fit", "missing.json", "out");
    assert_eq!(o.status.code(), Some(1));

    assert_eq!(slem(&["fit"]).status.code(), Some(1));
    assert_eq!(slem(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = slem(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
}
