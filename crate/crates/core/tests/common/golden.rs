//! The 16x16 simulate, fit, predict, score pipeline and its reference outputs.
//!
//! Set `SLEM_BLESS=1` to overwrite the reference outputs with a fresh run.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use slem::pipeline::{self, RunOptions};

pub const STAGES: [&str; 4] = ["sim", "fit", "predict", "score"];

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

/// Runs the whole pipeline inside `work`, one output directory per stage.
pub fn run_pipeline(work: &Path) -> slem::Result<()> {
    for entry in fs::read_dir(data_dir().join("config")).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, work.join(p.file_name().unwrap())).unwrap();
    }
    let opts = |stage: &str| RunOptions {
        out_dir: work.join(stage),
        ..RunOptions::default()
    };
    let (c, base) = pipeline::load_config(&work.join("simulate.json"))?;
    pipeline::cmd_simulate(&c, &base, &opts("sim"))?;
    let (c, base) = pipeline::load_config(&work.join("fit.json"))?;
    pipeline::cmd_fit(&c, &base, &opts("fit"))?;
    let (c, base) = pipeline::load_config(&work.join("predict.json"))?;
    pipeline::cmd_predict(&c, &base, &opts("predict"))?;
    let (c, base) = pipeline::load_config(&work.join("score.json"))?;
    pipeline::cmd_score(&c, &base, &opts("score"))?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct Comparison {
    pub files: usize,
    /// Every file matched byte for byte (runtime fields aside).
    pub exact: bool,
    pub max_rel_diff: f64,
    pub problems: Vec<String>,
}

impl Comparison {
    pub fn within(&self, tol: f64) -> bool {
        self.problems.is_empty() && self.max_rel_diff <= tol
    }
}

fn strip_runtime(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("runtime_seconds");
            map.values_mut().for_each(strip_runtime);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_runtime),
        _ => {}
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}

fn compare_json(a: &Value, b: &Value, path: &str, out: &mut Comparison) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let d = rel(x.as_f64().unwrap(), y.as_f64().unwrap());
            out.max_rel_diff = out.max_rel_diff.max(d);
        }
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() {
                out.problems.push(format!("{path}: different keys"));
                return;
            }
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => compare_json(v, w, &format!("{path}.{k}"), out),
                    None => out.problems.push(format!("{path}.{k}: missing")),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                out.problems.push(format!("{path}: array lengths differ"));
                return;
            }
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                compare_json(v, w, &format!("{path}[{i}]"), out);
            }
        }
        _ if a == b => {}
        _ => out.problems.push(format!("{path}: {a} != {b}")),
    }
}

fn compare_text_numbers(a: &str, b: &str, name: &str, out: &mut Comparison) {
    let la: Vec<&str> = a.lines().collect();
    let lb: Vec<&str> = b.lines().collect();
    if la.len() != lb.len() {
        out.problems.push(format!("{name}: line counts differ"));
        return;
    }
    for (x, y) in la.iter().zip(&lb) {
        let fx: Vec<&str> = x.split(',').collect();
        let fy: Vec<&str> = y.split(',').collect();
        if fx.len() != fy.len() {
            out.problems.push(format!("{name}: field counts differ"));
            return;
        }
        for (p, q) in fx.iter().zip(&fy) {
            if p == q {
                continue;
            }
            match (p.parse::<f64>(), q.parse::<f64>()) {
                (Ok(u), Ok(v)) => out.max_rel_diff = out.max_rel_diff.max(rel(u, v)),
                _ => out.problems.push(format!("{name}: {p:?} != {q:?}")),
            }
        }
    }
}

fn list(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

/// Compares the stage outputs in `actual` against `expected`.
pub fn compare_dirs(actual: &Path, expected: &Path) -> Comparison {
    let mut out = Comparison {
        exact: true,
        ..Comparison::default()
    };
    for stage in STAGES {
        let (da, de) = (actual.join(stage), expected.join(stage));
        let (na, ne) = (list(&da), list(&de));
        if na != ne {
            out.problems.push(format!("{stage}: files {na:?} vs {ne:?}"));
            continue;
        }
        for name in na {
            out.files += 1;
            let ta = fs::read_to_string(da.join(&name)).unwrap();
            let te = fs::read_to_string(de.join(&name)).unwrap();
            let label = format!("{stage}/{name}");
            if name.ends_with(".json") {
                let mut va: Value = serde_json::from_str(&ta).unwrap();
                let mut ve: Value = serde_json::from_str(&te).unwrap();
                strip_runtime(&mut va);
                strip_runtime(&mut ve);
                if va != ve {
                    out.exact = false;
                    compare_json(&va, &ve, &label, &mut out);
                }
            } else if ta != te {
                out.exact = false;
                compare_text_numbers(&ta, &te, &label, &mut out);
            }
        }
    }
    if !out.problems.is_empty() {
        out.exact = false;
    }
    out
}

/// Replaces the reference outputs with those in `work` when blessing is requested.
pub fn bless_if_requested(work: &Path) -> bool {
    if std::env::var_os("SLEM_BLESS").is_none() {
        return false;
    }
    let expected = data_dir().join("expected");
    let _ = fs::remove_dir_all(&expected);
    for stage in STAGES {
        let target = expected.join(stage);
        fs::create_dir_all(&target).unwrap();
        for name in list(&work.join(stage)) {
            fs::copy(work.join(stage).join(&name), target.join(&name)).unwrap();
        }
    }
    true
}
