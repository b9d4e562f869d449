mod common;

use std::process::Command;

use common::{classify_doc, config, snapshot};
use serde_json::json;
use tdi_core::env::{chain_mdp, dp_policy_evaluation, ChainRewards, Policy};
use tdi_harness::manifest::{Manifest, RunStatus, MANIFEST};
use tdi_harness::tables::{read_table, SCALARS};
use tdi_harness::{run, run_id, ConfigError, RunConfig};

#[test]
fn identical_configs_give_byte_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut doc = td_doc();
    doc["metrics"] = json!({"n_pairs": 16, "gain_curve": true, "stiffness_curve": true, "rho_prime": true, "sign_variance": true});
    let cfg = config(doc);
    let ra = run(&cfg, a.path()).unwrap();
    let rb = run(&cfg, b.path()).unwrap();
    assert_eq!(ra.run_id, rb.run_id);
    let (sa, sb) = (snapshot(&ra.dir), snapshot(&rb.dir));
    assert!(sa.keys().any(|k| k.ends_with("rho_prime.csv")));
    assert_eq!(sa, sb);
}

fn td_doc() -> serde_json::Value {
    json!({
        "experiment": {"kind": "policy-eval-tdλ", "lambda": 0.5},
        "env": {"kind": "chain", "n_states": 6, "options": {"actions": 2, "slip": 0.2}},
        "n_train": 120,
        "steps": 60,
        "checkpoint_every": 30,
    })
}

#[test]
fn rerunning_into_the_same_directory_replaces_outputs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(classify_doc(20, 20));
    let first = snapshot(&run(&cfg, root.path()).unwrap().dir);
    let second = snapshot(&run(&cfg, root.path()).unwrap().dir);
    assert_eq!(first, second);
}

#[test]
fn toggles_off_leave_only_scalars() {
    let root = tempfile::tempdir().unwrap();
    let mut doc = td_doc();
    doc["metrics"] = json!({"interference": false, "save_checkpoints": false});
    let out = run(&config(doc), root.path()).unwrap();
    let files: Vec<String> = std::fs::read_dir(&out.dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f != MANIFEST)
        .collect();
    assert_eq!(files, vec![SCALARS.to_string()]);
    assert_eq!(out.manifest.files, vec![SCALARS.to_string()]);
}

#[test]
fn manifest_records_resolved_config_and_seeds() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(td_doc());
    let out = run(&cfg, root.path()).unwrap();
    let m = Manifest::read(&out.dir).unwrap();
    assert_eq!(m.status, RunStatus::Ok);
    assert_eq!(m.config, cfg.resolved());
    assert!(m.config.target.is_some() && m.config.n_test.is_some());
    assert_eq!(m.seeds.len(), 6);
    assert!(m.constants.contains_key("fd_alphas"));
    assert!(m.data.contains_key("buffer_len"));
    assert_eq!(m.run_id, run_id(&cfg));
    let back = RunConfig::from_value(serde_json::to_value(&m.config).unwrap()).unwrap();
    assert_eq!(back, m.config);
}

#[test]
fn tabular_run_reproduces_dynamic_programming() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": {"kind": "tabular", "alpha": 0.1, "policy": {"kind": "deterministic", "actions": [1, 1, 1, 1, 1, 1]}},
        "env": {"kind": "chain", "n_states": 5, "gamma": 0.9, "rewards": {"goal": 1.0, "step": -0.1}},
        "n_train": 0,
        "steps": 100000,
        "checkpoint_every": 100000,
    }));
    let out = run(&cfg, root.path()).unwrap();
    let rows = read_table(&out.dir.join(SCALARS)).unwrap();
    let get = |m: &str| rows.iter().find(|r| r["metric"] == m).map(|r| r["value"].parse::<f64>().unwrap());

    let mdp = chain_mdp(5, ChainRewards { goal: 1.0, step: -0.1 }, 0.9).unwrap();
    let pi = Policy::deterministic(2, &vec![1; mdp.n_states()]).unwrap();
    let v = dp_policy_evaluation(&mdp, &pi).unwrap();
    let mut sup = 0.0f64;
    for (s, vs) in v.iter().enumerate() {
        let td = get(&format!("v_td/s{s}")).unwrap();
        assert_eq!(get(&format!("v_dp/s{s}")).unwrap(), *vs);
        sup = sup.max((td - vs).abs());
    }
    assert!(sup < 1e-2, "sup-norm {sup}");
    assert_eq!(get("sup_error").unwrap(), sup);
}

#[test]
fn invalid_configs_list_offending_keys() {
    let e = RunConfig::from_json(r#"{"experiment": {"kind": "classify"}, "env": {"kind": "glyphs"}, "n_train": 20, "steps": 10, "stpes": 3}"#)
        .unwrap_err();
    assert!(e.to_string().contains("stpes"), "{e}");

    let mut doc = classify_doc(20, 10);
    doc["steps"] = json!(0);
    doc["metrics"]["n_pairs"] = json!(10);
    let e: ConfigError = RunConfig::from_value(doc).unwrap_err();
    let keys = e.keys();
    assert!(keys.contains(&"steps") && keys.contains(&"metrics.n_pairs"), "{keys:?}");
}

#[test]
fn too_few_samples_are_missing_not_zero() {
    let root = tempfile::tempdir().unwrap();
    let mut doc = classify_doc(3, 10);
    doc["metrics"]["n_pairs"] = json!(64);
    let out = run(&config(doc), root.path()).unwrap();
    let rows = read_table(&out.dir.join(SCALARS)).unwrap();
    let rho: Vec<_> = rows.iter().filter(|r| r["metric"] == "rho_bar_mean").collect();
    assert_eq!(rho.len(), 3);
    assert!(rho.iter().all(|r| r["value"] == "NA"));
}

fn tdi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tdi"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": {"kind": "classify"}, "env": {"kind": "glyphs"}, "n_train": 20, "steps": 10, "sed": 1}"#).unwrap();
    let out = tdi().args(["run", "-c"]).arg(&bad).env("TDI_OUTPUT_ROOT", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));

    let good = dir.path().join("good.json");
    std::fs::write(&good, serde_json::to_string(&classify_doc(20, 10)).unwrap()).unwrap();
    let out = tdi().args(["run", "-c"]).arg(&good).env("TDI_OUTPUT_ROOT", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(std::path::Path::new(printed.trim()).join(MANIFEST).is_file());

    let out = tdi().args(["env", "inspect", "-c"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "glyphs");

    let out = tdi().args(["verify", "--suite", "stats"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = tdi().args(["verify", "--suite", "rho_prime", "--draws", "5", "--r2-coefficient", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
