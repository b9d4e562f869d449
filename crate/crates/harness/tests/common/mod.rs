#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tdi_harness::manifest::{Manifest, RunStatus};
use tdi_harness::tables::{self, num, write_table};
use tdi_harness::RunConfig;

pub fn classify_doc(n_train: usize, steps: usize) -> Value {
    json!({
        "experiment": {"kind": "classify"},
        "env": {"kind": "glyphs", "n_classes": 4},
        "model": {"hidden": 16},
        "n_train": n_train,
        "n_test": 40,
        "steps": steps,
        "checkpoint_every": steps / 2,
        "metrics": {"n_pairs": 16, "save_checkpoints": false},
    })
}

pub fn td_lambda_doc(lambda: f64) -> Value {
    json!({
        "experiment": {"kind": "policy-eval-tdλ", "lambda": lambda},
        "env": {"kind": "chain", "n_states": 6},
        "n_train": 100,
        "steps": 20,
        "metrics": {"n_pairs": 16},
    })
}

pub fn config(doc: Value) -> RunConfig {
    RunConfig::from_value(doc).expect("valid test config")
}

/// Every regular file below `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// A completed run directory holding the given `(checkpoint, metric, value)`
/// scalars, as a report would find it.
pub fn synthetic_run(root: &Path, id: &str, cfg: &RunConfig, scalars: &[(usize, &str, Option<f64>)]) -> PathBuf {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    let mut m = Manifest::new(id, cfg);
    m.status = RunStatus::Ok;
    m.write(&dir).unwrap();
    let rows: Vec<Vec<String>> = scalars
        .iter()
        .map(|(c, k, v)| vec![c.to_string(), k.to_string(), v.map_or("NA".into(), num)])
        .collect();
    write_table(&dir.join(tables::SCALARS), tables::SCALARS_HEADER, &rows).unwrap();
    dir
}

/// Write a curve table (`gain_curve.csv` or `stiffness_curve.csv`).
pub fn write_curve(dir: &Path, file: &str, points: &[(usize, i64, Option<f64>)]) {
    let header = if file == tables::GAIN_CURVE {
        tables::GAIN_CURVE_HEADER
    } else {
        tables::STIFFNESS_CURVE_HEADER
    };
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|(c, o, v)| vec![c.to_string(), o.to_string(), v.map_or("NA".into(), num), "1".into()])
        .collect();
    write_table(&dir.join(file), header, &rows).unwrap();
}
