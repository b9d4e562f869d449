//! Figure pipelines over completed run directories. Reports only read runs;
//! everything they produce lands in a separate output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tdi_core::metrics::{bootstrap_pearson_ci, linear_fit, pearson_r, zscore};
use tdi_core::rng;

use crate::error::{HarnessError, Result};
use crate::manifest::{Manifest, RunStatus, MANIFEST};
use crate::svg::{heatmap, line_chart, scatter, Line, Series};
use crate::tables::{self, num, opt, parse_cell, read_table, write_table};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const CI_LEVEL: f64 = 0.9;
pub const MIN_GROUP_RUNS: usize = 3;
pub const REPORT_JSON: &str = "report.json";
pub const NORMALIZATION: &str = "z-score of gap and ln rho_bar within each experiment before pooling";

pub const CORRELATIONS_HEADER: &[&str] = &[
    "experiment",
    "n_train",
    "n_runs",
    "n_used",
    "n_dropped_nonpositive",
    "r",
    "ci_low",
    "ci_high",
    "status",
];
pub const POOLED_HEADER: &[&str] =
    &["run_id", "experiment", "n_train", "log_rho_bar", "gap", "z_log_rho_bar", "z_gap"];
pub const FITS_HEADER: &[&str] = &["experiment", "n_runs", "slope", "intercept", "r"];
pub const GAP_HEADER: &[&str] = &["experiment", "n_train", "n_runs", "mean_gap", "sd_gap"];
pub const CAPACITY_HEADER: &[&str] =
    &["experiment", "hidden", "extra_layers", "n_train", "n_runs", "mean_rho_bar", "sd_rho_bar"];
pub const CURVE_HEADER: &[&str] = &["group", "checkpoint", "offset", "mean", "n_runs"];
pub const STIFFNESS_SUMMARY_HEADER: &[&str] = &["group", "lambda", "checkpoint", "mean_stiffness", "n_runs"];
pub const SIGN_VARIANCE_HEADER: &[&str] = &["run_id", "group", "sign_variance", "return", "rho_bar_mean"];
pub const TAYLOR_HEADER: &[&str] =
    &["run_id", "checkpoint", "gain0_mean", "gain0_first_order_mean", "taylor_relative_error"];

/// One completed run as seen by a report.
#[derive(Clone, Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// `scalars[metric][checkpoint]`.
    pub scalars: BTreeMap<String, BTreeMap<usize, Option<f64>>>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        let mut scalars: BTreeMap<String, BTreeMap<usize, Option<f64>>> = BTreeMap::new();
        let p = dir.join(tables::SCALARS);
        if p.exists() {
            for row in read_table(&p)? {
                let ck = row["checkpoint"]
                    .parse()
                    .map_err(|_| HarnessError::Report(format!("{}: bad checkpoint {}", p.display(), row["checkpoint"])))?;
                scalars.entry(row["metric"].clone()).or_default().insert(ck, parse_cell(&row["value"]));
            }
        }
        Ok(RunData { dir: dir.to_path_buf(), manifest, scalars })
    }

    pub fn final_checkpoint(&self) -> Option<usize> {
        self.scalars.values().filter_map(|m| m.keys().next_back()).max().copied()
    }

    /// The metric at the run's last checkpoint.
    pub fn final_value(&self, metric: &str) -> Option<f64> {
        let ck = self.final_checkpoint()?;
        self.scalars.get(metric)?.get(&ck).copied().flatten()
    }

    /// Mean over the checkpoints where the metric is present.
    pub fn training_mean(&self, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self.scalars.get(metric)?.values().filter_map(|v| *v).collect();
        mean(&vals)
    }

    fn id(&self) -> &str {
        &self.manifest.run_id
    }
}

/// Completed runs below the given directories plus a count of the run
/// directories skipped because they are not `ok`.
#[derive(Debug)]
pub struct Collection {
    pub runs: Vec<RunData>,
    pub skipped: usize,
}

pub fn collect(inputs: &[PathBuf]) -> Result<Collection> {
    let mut dirs = BTreeSet::new();
    for root in inputs {
        if !root.is_dir() {
            return Err(HarnessError::Report(format!("{}: not a directory", root.display())));
        }
        walk(root, &mut dirs)?;
    }
    let mut runs = Vec::new();
    let mut skipped = 0;
    for d in dirs {
        let run = RunData::load(&d)?;
        if run.manifest.status == RunStatus::Ok {
            runs.push(run);
        } else {
            skipped += 1;
        }
    }
    Ok(Collection { runs, skipped })
}

fn walk(dir: &Path, out: &mut BTreeSet<PathBuf>) -> Result<()> {
    if dir.join(MANIFEST).is_file() {
        out.insert(dir.to_path_buf());
        return Ok(());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for e in entries {
        let e = e.map_err(|e| HarnessError::io(dir, e))?;
        if e.file_type().map_err(|err| HarnessError::io(e.path(), err))?.is_dir() {
            walk(&e.path(), out)?;
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; `None` below two values.
fn sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    (xs.len() > 1).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| HarnessError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCorrelation {
    pub experiment: String,
    pub n_train: usize,
    pub n_runs: usize,
    pub n_used: usize,
    pub n_dropped_nonpositive: usize,
    pub r: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// `ok`, `missing` (too few usable runs) or `undefined` (zero spread).
    pub status: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    pub groups: Vec<GroupCorrelation>,
    pub notices: Vec<String>,
    pub files: Vec<String>,
}

struct Point<'a> {
    run: &'a RunData,
    log_rho_bar: f64,
    gap: f64,
}

/// Pearson r between ln ρ̄ (averaged over training) and the final
/// generalization gap per experiment and training-set size, with pooled, gap
/// and capacity tables.
pub fn report_correlations(inputs: &[PathBuf], out: &Path) -> Result<CorrelationReport> {
    let coll = collect(inputs)?;
    create_out(out)?;
    let mut notices = Vec::new();
    if coll.skipped > 0 {
        notices.push(format!("{} run directories skipped because they did not complete", coll.skipped));
    }

    let mut by_group: BTreeMap<(String, usize), Vec<&RunData>> = BTreeMap::new();
    for r in &coll.runs {
        by_group
            .entry((r.manifest.labels.experiment.clone(), r.manifest.labels.n_train))
            .or_default()
            .push(r);
    }

    let mut groups = Vec::new();
    let mut points: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    for ((experiment, n_train), runs) in &by_group {
        let mut dropped = 0;
        let mut used = Vec::new();
        for r in runs {
            match (r.training_mean("rho_bar_mean"), r.final_value("gap")) {
                (Some(rb), Some(gap)) if rb > 0.0 => used.push(Point { run: r, log_rho_bar: rb.ln(), gap }),
                (Some(_), Some(_)) => dropped += 1,
                _ => {}
            }
        }
        let xs: Vec<f64> = used.iter().map(|p| p.log_rho_bar).collect();
        let ys: Vec<f64> = used.iter().map(|p| p.gap).collect();
        let (r, ci, status) = if used.len() < MIN_GROUP_RUNS {
            (None, None, "missing")
        } else {
            let seed = rng::derive(0, &format!("bootstrap/{experiment}/{n_train}"));
            match pearson_r(&xs, &ys) {
                Some(r) => (Some(r), bootstrap_pearson_ci(&xs, &ys, BOOTSTRAP_RESAMPLES, CI_LEVEL, seed), "ok"),
                None => (None, None, "undefined"),
            }
        };
        if status != "ok" {
            notices.push(format!("{experiment} n_train={n_train}: {status} ({} usable runs)", used.len()));
        }
        if dropped > 0 {
            notices.push(format!("{experiment} n_train={n_train}: {dropped} runs dropped for nonpositive rho_bar"));
        }
        groups.push(GroupCorrelation {
            experiment: experiment.clone(),
            n_train: *n_train,
            n_runs: runs.len(),
            n_used: used.len(),
            n_dropped_nonpositive: dropped,
            r,
            ci,
            status,
        });
        points.entry(experiment.clone()).or_default().extend(used);
    }

    let mut files = vec![];
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            vec![
                g.experiment.clone(),
                g.n_train.to_string(),
                g.n_runs.to_string(),
                g.n_used.to_string(),
                g.n_dropped_nonpositive.to_string(),
                opt(g.r),
                opt(g.ci.map(|c| c.0)),
                opt(g.ci.map(|c| c.1)),
                g.status.to_string(),
            ]
        })
        .collect();
    write_table(&out.join("correlations.csv"), CORRELATIONS_HEADER, &rows)?;
    files.push("correlations.csv".to_string());

    let mut pooled_rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut series = Vec::new();
    let mut lines = Vec::new();
    for (experiment, pts) in &points {
        let xs: Vec<f64> = pts.iter().map(|p| p.log_rho_bar).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.gap).collect();
        let (zx, zy) = (zscore(&xs), zscore(&ys));
        if zx.is_none() || zy.is_none() {
            notices.push(format!("{experiment}: zero spread, excluded from the pooled scatter"));
        }
        for (i, p) in pts.iter().enumerate() {
            pooled_rows.push(vec![
                p.run.id().to_string(),
                experiment.clone(),
                p.run.manifest.labels.n_train.to_string(),
                num(p.log_rho_bar),
                num(p.gap),
                opt(zx.as_ref().map(|z| z[i])),
                opt(zy.as_ref().map(|z| z[i])),
            ]);
        }
        let (fit, r) = match (&zx, &zy) {
            (Some(zx), Some(zy)) => {
                series.push(Series {
                    label: experiment.clone(),
                    points: zx.iter().copied().zip(zy.iter().copied()).collect(),
                });
                (linear_fit(zx, zy), pearson_r(zx, zy))
            }
            _ => (None, None),
        };
        if let Some((slope, intercept)) = fit {
            lines.push(Line { label: experiment.clone(), slope, intercept });
        }
        fit_rows.push(vec![
            experiment.clone(),
            pts.len().to_string(),
            opt(fit.map(|f| f.0)),
            opt(fit.map(|f| f.1)),
            opt(r),
        ]);
    }
    write_table(&out.join("pooled.csv"), POOLED_HEADER, &pooled_rows)?;
    write_table(&out.join("fits.csv"), FITS_HEADER, &fit_rows)?;
    files.extend(["pooled.csv".to_string(), "fits.csv".to_string()]);

    let mut gap_rows = Vec::new();
    for ((experiment, n_train), runs) in &by_group {
        let gaps: Vec<f64> = runs.iter().filter_map(|r| r.final_value("gap")).collect();
        gap_rows.push(vec![
            experiment.clone(),
            n_train.to_string(),
            gaps.len().to_string(),
            opt(mean(&gaps)),
            opt(sd(&gaps)),
        ]);
    }
    write_table(&out.join("gap_vs_ntrain.csv"), GAP_HEADER, &gap_rows)?;
    files.push("gap_vs_ntrain.csv".to_string());

    let mut by_capacity: BTreeMap<(String, usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &coll.runs {
        let l = &r.manifest.labels;
        let e = by_capacity.entry((l.experiment.clone(), l.hidden, l.extra_layers, l.n_train)).or_default();
        if let Some(v) = r.training_mean("rho_bar_mean") {
            e.push(v);
        }
    }
    let cap_rows: Vec<Vec<String>> = by_capacity
        .iter()
        .map(|((e, h, l, n), v)| {
            vec![
                e.clone(),
                h.to_string(),
                l.to_string(),
                n.to_string(),
                v.len().to_string(),
                opt(mean(v)),
                opt(sd(v)),
            ]
        })
        .collect();
    write_table(&out.join("interference_vs_capacity.csv"), CAPACITY_HEADER, &cap_rows)?;
    files.push("interference_vs_capacity.csv".to_string());

    let mut by_exp: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for g in &groups {
        if let Some(r) = g.r {
            by_exp.entry(&g.experiment).or_default().push((g.n_train as f64, r));
        }
    }
    if by_exp.is_empty() {
        notices.push("no group has a defined correlation: r-vs-n_train panel omitted".into());
    } else {
        let s: Vec<Series> = by_exp
            .into_iter()
            .map(|(e, p)| Series { label: e.to_string(), points: p })
            .collect();
        line_chart(&out.join("r_vs_ntrain.svg"), "Pearson r of (ln rho_bar, gap)", "n_train", "r", &s)?;
        files.push("r_vs_ntrain.svg".to_string());
    }
    if series.is_empty() {
        notices.push("no experiment has usable spread: pooled scatter omitted".into());
    } else {
        scatter(&out.join("pooled.svg"), "Gap vs interference (z-scored)", "z(ln rho_bar)", "z(gap)", &series, &lines)?;
        files.push("pooled.svg".to_string());
    }
    files.push(REPORT_JSON.to_string());

    write_json(
        &out.join(REPORT_JSON),
        &json!({
            "kind": "correlations",
            "inputs": inputs,
            "n_runs": coll.runs.len(),
            "n_skipped": coll.skipped,
            "x": "ln of rho_bar_mean averaged over checkpoints",
            "y": "gap at the final checkpoint",
            "gap_convention": crate::manifest::constants().get("gap"),
            "normalization": NORMALIZATION,
            "bootstrap": {"method": "percentile", "resamples": BOOTSTRAP_RESAMPLES, "level": CI_LEVEL},
            "min_group_runs": MIN_GROUP_RUNS,
            "groups": groups,
            "notices": notices,
            "files": files,
        }),
    )?;
    Ok(CorrelationReport { groups, notices, files })
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveReport {
    /// `(group, λ, checkpoint, mean stiffness, runs)` over offsets ≠ 0.
    pub stiffness_summary: Vec<(String, Option<f64>, usize, Option<f64>, usize)>,
    pub r_sign_variance_return: Option<f64>,
    pub r_sign_variance_rho_bar: Option<f64>,
    pub notices: Vec<String>,
    pub files: Vec<String>,
}

type Curve = BTreeMap<(usize, i64), f64>;

fn read_curve(dir: &Path, file: &str, column: &str) -> Result<Option<Curve>> {
    let p = dir.join(file);
    if !p.exists() {
        return Ok(None);
    }
    let mut c = Curve::new();
    for row in read_table(&p)? {
        let bad = || HarnessError::Report(format!("{}: malformed row", p.display()));
        let ck: usize = row["checkpoint"].parse().map_err(|_| bad())?;
        let off: i64 = row["offset"].parse().map_err(|_| bad())?;
        if let Some(v) = parse_cell(&row[column]) {
            c.insert((ck, off), v);
        }
    }
    Ok(Some(c))
}

/// Per group, the mean over runs at every (checkpoint, offset) and the number
/// of runs contributing.
fn group_means(curves: &[(String, Curve)]) -> BTreeMap<String, BTreeMap<(usize, i64), (f64, usize)>> {
    let mut acc: BTreeMap<String, BTreeMap<(usize, i64), (f64, usize)>> = BTreeMap::new();
    for (g, c) in curves {
        let m = acc.entry(g.clone()).or_default();
        for (k, v) in c {
            let e = m.entry(*k).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    for m in acc.values_mut() {
        for e in m.values_mut() {
            e.0 /= e.1 as f64;
        }
    }
    acc
}

fn curve_rows(means: &BTreeMap<String, BTreeMap<(usize, i64), (f64, usize)>>) -> Vec<Vec<String>> {
    means
        .iter()
        .flat_map(|(g, m)| {
            m.iter()
                .map(move |((ck, off), (v, n))| vec![g.clone(), ck.to_string(), off.to_string(), num(*v), n.to_string()])
        })
        .collect()
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Mean-over-runs gain and stiffness curves, sign-variance scatter data and
/// Taylor checks.
pub fn report_curves(inputs: &[PathBuf], out: &Path) -> Result<CurveReport> {
    let coll = collect(inputs)?;
    create_out(out)?;
    let mut notices = Vec::new();
    if coll.skipped > 0 {
        notices.push(format!("{} run directories skipped because they did not complete", coll.skipped));
    }
    let mut files = Vec::new();

    let mut gains = Vec::new();
    let mut stiffs = Vec::new();
    let mut lambda_of: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for r in &coll.runs {
        let g = r.manifest.labels.curve_group.clone();
        lambda_of.insert(g.clone(), r.manifest.labels.lambda);
        if let Some(c) = read_curve(&r.dir, tables::GAIN_CURVE, "mean_gain")? {
            gains.push((g.clone(), c));
        }
        if let Some(c) = read_curve(&r.dir, tables::STIFFNESS_CURVE, "mean_stiffness")? {
            stiffs.push((g, c));
        }
    }

    let gain_means = group_means(&gains);
    let stiff_means = group_means(&stiffs);
    if gain_means.is_empty() {
        notices.push("no run carries gain_curve.csv: gain curves and heatmaps omitted".into());
    } else {
        write_table(&out.join("curves_gain.csv"), CURVE_HEADER, &curve_rows(&gain_means))?;
        files.push("curves_gain.csv".to_string());
        let mut finals = Vec::new();
        for (g, m) in &gain_means {
            let cks: Vec<usize> = m.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
            let offs: Vec<i64> = m.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
            let cells: Vec<Vec<Option<f64>>> = cks
                .iter()
                .map(|ck| offs.iter().map(|o| m.get(&(*ck, *o)).map(|v| v.0)).collect())
                .collect();
            let name = format!("gain_heatmap_{}.svg", slug(g));
            let cols: Vec<f64> = offs.iter().map(|o| *o as f64).collect();
            let rows: Vec<f64> = cks.iter().map(|c| *c as f64).collect();
            heatmap(&out.join(&name), &format!("TD gain: {g}"), "offset", "checkpoint", &cols, &rows, &cells)?;
            files.push(name);
            let last = *cks.last().expect("nonempty curve");
            finals.push(Series {
                label: g.clone(),
                points: offs.iter().filter_map(|o| m.get(&(last, *o)).map(|v| (*o as f64, v.0))).collect(),
            });
        }
        line_chart(&out.join("gain_final.svg"), "Gain at the final checkpoint", "offset", "mean gain", &finals)?;
        files.push("gain_final.svg".to_string());
    }

    let mut summary = Vec::new();
    if stiff_means.is_empty() {
        notices.push("no run carries stiffness_curve.csv: stiffness panels omitted".into());
    } else {
        write_table(&out.join("curves_stiffness.csv"), CURVE_HEADER, &curve_rows(&stiff_means))?;
        files.push("curves_stiffness.csv".to_string());
        let mut finals = Vec::new();
        for (g, m) in &stiff_means {
            let mut per_ck: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
            for ((ck, off), (v, n)) in m {
                let e = per_ck.entry(*ck).or_default();
                if *off != 0 {
                    e.0.push(*v);
                }
                e.1 = e.1.max(*n);
            }
            for (ck, (vals, n)) in &per_ck {
                summary.push((g.clone(), lambda_of.get(g).copied().flatten(), *ck, mean(vals), *n));
            }
            let last = *per_ck.keys().next_back().expect("nonempty curve");
            finals.push(Series {
                label: g.clone(),
                points: m.iter().filter(|(k, _)| k.0 == last).map(|(k, v)| (k.1 as f64, v.0)).collect(),
            });
        }
        let rows: Vec<Vec<String>> = summary
            .iter()
            .map(|(g, l, ck, v, n)| vec![g.clone(), opt(*l), ck.to_string(), opt(*v), n.to_string()])
            .collect();
        write_table(&out.join("stiffness_summary.csv"), STIFFNESS_SUMMARY_HEADER, &rows)?;
        line_chart(&out.join("stiffness_final.svg"), "Stiffness at the final checkpoint", "offset", "mean stiffness", &finals)?;
        files.extend(["stiffness_summary.csv".to_string(), "stiffness_final.svg".to_string()]);
    }

    let mut sv_rows = Vec::new();
    let (mut sv_ret, mut sv_rb) = (Vec::new(), Vec::new());
    for r in &coll.runs {
        let Some(sv) = r.final_value("sign_variance") else { continue };
        let ret = r.final_value("return");
        let rb = r.final_value("rho_bar_mean");
        if let Some(v) = ret {
            sv_ret.push((sv, v));
        }
        if let Some(v) = rb {
            sv_rb.push((sv, v));
        }
        sv_rows.push(vec![
            r.id().to_string(),
            r.manifest.labels.curve_group.clone(),
            num(sv),
            opt(ret),
            opt(rb),
        ]);
    }
    let corr = |pts: &[(f64, f64)]| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        pearson_r(&x, &y)
    };
    let (r_ret, r_rb) = (corr(&sv_ret), corr(&sv_rb));
    if sv_rows.is_empty() {
        notices.push("no run carries a sign_variance scalar: sign-variance panels omitted".into());
    } else {
        write_table(&out.join("sign_variance.csv"), SIGN_VARIANCE_HEADER, &sv_rows)?;
        files.push("sign_variance.csv".to_string());
        for (pts, name, ylabel, r) in [
            (&sv_ret, "sign_variance_return.svg", "return", r_ret),
            (&sv_rb, "sign_variance_rho_bar.svg", "rho_bar", r_rb),
        ] {
            if pts.is_empty() {
                notices.push(format!("no run pairs sign_variance with {ylabel}: {name} omitted"));
                continue;
            }
            let title = format!("Sign variance vs {ylabel}, r = {}", opt(r));
            let s = [Series { label: ylabel.to_string(), points: pts.clone() }];
            scatter(&out.join(name), &title, "sign variance", ylabel, &s, &[])?;
            files.push(name.to_string());
        }
    }

    let mut taylor = Vec::new();
    for r in &coll.runs {
        let Some(errs) = r.scalars.get("taylor_relative_error") else { continue };
        for (ck, e) in errs {
            let at = |m: &str| r.scalars.get(m).and_then(|s| s.get(ck)).copied().flatten();
            taylor.push(vec![
                r.id().to_string(),
                ck.to_string(),
                opt(at("gain0_mean")),
                opt(at("gain0_first_order_mean")),
                opt(*e),
            ]);
        }
    }
    if taylor.is_empty() {
        notices.push("no SGD run carries Taylor checks: taylor.csv omitted".into());
    } else {
        write_table(&out.join("taylor.csv"), TAYLOR_HEADER, &taylor)?;
        files.push("taylor.csv".to_string());
    }
    files.push(REPORT_JSON.to_string());

    write_json(
        &out.join(REPORT_JSON),
        &json!({
            "kind": "curves",
            "inputs": inputs,
            "n_runs": coll.runs.len(),
            "n_skipped": coll.skipped,
            "grouping": "objective/optimizer/target",
            "r_sign_variance_return": r_ret,
            "r_sign_variance_rho_bar": r_rb,
            "notices": notices,
            "files": files,
        }),
    )?;
    Ok(CurveReport {
        stiffness_summary: summary,
        r_sign_variance_return: r_ret,
        r_sign_variance_rho_bar: r_rb,
        notices,
        files,
    })
}
