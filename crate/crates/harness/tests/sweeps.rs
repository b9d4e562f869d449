mod common;

use common::{classify_doc, snapshot};
use proptest::prelude::*;
use serde_json::{json, Value};
use tdi_harness::manifest::{Manifest, RunStatus};
use tdi_harness::sweep::{PointStatus, SWEEP_SUMMARY};
use tdi_harness::{sweep, SweepConfig};

fn grid() -> SweepConfig {
    SweepConfig {
        name: "grid".into(),
        base: classify_doc(20, 10),
        axes: [
            ("model.hidden".to_string(), vec![json!(8), json!(16)]),
            ("n_train".to_string(), vec![json!(16), json!(25), json!(36)]),
        ]
        .into_iter()
        .collect(),
        seeds: 3,
    }
}

#[test]
fn two_by_three_grid_with_three_seeds_is_eighteen_runs() {
    let root = tempfile::tempdir().unwrap();
    let s = sweep(&grid(), root.path(), 4).unwrap();
    assert_eq!((s.n_runs, s.n_ok, s.n_failed), (18, 18, 0));
    let mut seen = std::collections::BTreeSet::new();
    for e in &s.entries {
        let m = Manifest::read(&e.dir).unwrap();
        assert_eq!(m.status, RunStatus::Ok);
        assert_eq!(m.run_id, e.name);
        assert!(seen.insert((m.config.model.hidden, m.config.n_train, m.config.seed)));
    }
    let seeds: std::collections::BTreeSet<u64> = s.entries.iter().map(|e| Manifest::read(&e.dir).unwrap().config.seed).collect();
    assert_eq!(seeds.len(), 3);
    let text = std::fs::read_to_string(root.path().join("grid").join(SWEEP_SUMMARY)).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap()["n_runs"], 18);
}

#[test]
fn a_failing_run_does_not_stop_its_siblings() {
    let root = tempfile::tempdir().unwrap();
    let cfg = grid();
    let victim = &cfg.expand()[7].name;
    std::fs::create_dir_all(root.path().join("grid")).unwrap();
    std::fs::write(root.path().join("grid").join(victim), "occupied").unwrap();
    let s = sweep(&cfg, root.path(), 4).unwrap();
    assert_eq!((s.n_runs, s.n_ok, s.n_failed), (18, 17, 1));
    let failed: Vec<_> = s.entries.iter().filter(|e| e.status == PointStatus::Failed).collect();
    assert_eq!(&failed[0].name, victim);
    assert!(failed[0].error.is_some());
}

#[test]
fn invalid_points_are_reported_not_run() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = grid();
    cfg.axes.insert("n_train".into(), vec![json!(16), json!(0)]);
    cfg.seeds = 1;
    let s = sweep(&cfg, root.path(), 2).unwrap();
    assert_eq!((s.n_runs, s.n_ok), (4, 2));
    for e in s.entries.iter().filter(|e| e.status != PointStatus::Ok) {
        assert_eq!(e.status, PointStatus::Invalid);
        assert!(e.error.as_deref().unwrap().contains("n_train"));
    }
}

#[test]
fn parallelism_does_not_change_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = grid();
    cfg.base = json!({
        "experiment": {"kind": "policy-eval-tdλ", "lambda": 0.5},
        "env": {"kind": "chain", "n_states": 6, "options": {"actions": 2, "slip": 0.2}},
        "n_train": 100,
        "steps": 40,
        "checkpoint_every": 20,
        "metrics": {"n_pairs": 16, "gain_curve": true, "stiffness_curve": true, "sign_variance": true},
    });
    cfg.axes = [("experiment.lambda".to_string(), vec![json!(0.0), json!(0.5), json!(1.0)])].into_iter().collect();
    let s1 = sweep(&cfg, a.path(), 1).unwrap();
    let s8 = sweep(&cfg, b.path(), 8).unwrap();
    assert_eq!(s1.n_ok, 9);
    assert_eq!(s8.n_ok, 9);
    assert_eq!(snapshot(&a.path().join("grid")).len(), snapshot(&b.path().join("grid")).len());
    for (e1, e8) in s1.entries.iter().zip(&s8.entries) {
        assert_eq!(e1.name, e8.name);
        assert_eq!(snapshot(&e1.dir), snapshot(&e8.dir), "{}", e1.name);
    }
}

#[test]
fn sweep_config_errors_name_keys() {
    let e = SweepConfig::from_json(r#"{"name": "x", "base": {}, "axes": {"seed": [1]}, "sedes": 2}"#).unwrap_err();
    assert!(e.to_string().contains("sedes"));
    let e = SweepConfig::from_json(r#"{"name": "x", "base": {}, "axes": {"seed": [1], "n_train": []}}"#).unwrap_err();
    let keys = e.keys();
    assert!(keys.contains(&"axes.seed") && keys.contains(&"axes.n_train"), "{keys:?}");
}

proptest! {
    #[test]
    fn expansion_is_the_cross_product(sizes in proptest::collection::vec(1usize..4, 0..4), seeds in 1usize..4) {
        let mut cfg = grid();
        cfg.seeds = seeds;
        cfg.axes = sizes
            .iter()
            .enumerate()
            .map(|(i, n)| (format!("labels.a{i}"), (0..*n).map(|v| json!(v)).collect()))
            .collect();
        let points = cfg.expand();
        prop_assert_eq!(points.len(), sizes.iter().product::<usize>() * seeds);
        let names: std::collections::BTreeSet<_> = points.iter().map(|p| p.name.clone()).collect();
        prop_assert_eq!(names.len(), points.len());
        for p in &points {
            prop_assert_eq!(p.assignment.len(), sizes.len());
        }
    }
}
