//! Per-checkpoint measurements shared by every experiment kind.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use tdi_autodiff::{ParamVector, Tensor};
use tdi_core::env::ReplayBuffer;
use tdi_core::learners::{BufferLearner, Learner};
use tdi_core::metrics::stats::SIGN_WINDOW;
use tdi_core::metrics::{pair_sample_metrics, sign_variance, stiffness_curve, td_gain_curve, GainCurve};
use tdi_core::models::ValueModel;
use tdi_core::rho_dynamics::{
    fd_oracle_rho_prime, fd_oracle_td, rho_prime_general, rho_prime_reg_terms, rho_prime_td_terms, FdReport,
    OracleObjective, TdOptions, TdSample,
};
use tdi_core::rng;
use tdi_core::sample::LossSample;

use crate::config::MetricToggles;
use crate::error::Result;
use crate::tables::{self, num, opt, Table};

/// Forward-difference step sizes for the `ρ′` slope column; the last one is
/// reported.
pub const FD_ALPHAS: [f64; 2] = [1e-5, 1e-6];

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Open tables of one run.
pub struct Recorder {
    dir: PathBuf,
    toggles: MetricToggles,
    scalars: Table,
    interference: Option<Table>,
    gain: Option<Table>,
    stiffness: Option<Table>,
    rho_prime: Option<Table>,
    metrics_seed: u64,
    pub files: Vec<String>,
}

impl Recorder {
    /// `interference` is false for experiments without pairwise samples.
    pub fn create(dir: &Path, toggles: &MetricToggles, interference: bool, metrics_seed: u64) -> Result<Self> {
        let mut files = vec![tables::SCALARS.to_string()];
        let mut open = |on: bool, name: &str, header: &[&str]| -> Result<Option<Table>> {
            if !on {
                return Ok(None);
            }
            files.push(name.to_string());
            Table::create(&dir.join(name), header).map(Some)
        };
        let interference_t = open(toggles.interference && interference, tables::INTERFERENCE, tables::INTERFERENCE_HEADER)?;
        let gain = open(toggles.gain_curve, tables::GAIN_CURVE, tables::GAIN_CURVE_HEADER)?;
        let stiffness = open(toggles.stiffness_curve, tables::STIFFNESS_CURVE, tables::STIFFNESS_CURVE_HEADER)?;
        let rho_prime = open(toggles.rho_prime && interference, tables::RHO_PRIME, tables::RHO_PRIME_HEADER)?;
        Ok(Recorder {
            dir: dir.to_path_buf(),
            toggles: toggles.clone(),
            scalars: Table::create(&dir.join(tables::SCALARS), tables::SCALARS_HEADER)?,
            interference: interference_t,
            gain,
            stiffness,
            rho_prime,
            metrics_seed,
            files,
        })
    }

    pub fn toggles(&self) -> &MetricToggles {
        &self.toggles
    }

    pub fn scalar(&mut self, checkpoint: usize, metric: &str, value: Option<f64>) -> Result<()> {
        self.scalars.row(&[checkpoint.to_string(), metric.to_string(), opt(value)])
    }

    fn stream(&self, checkpoint: usize, name: &str) -> rng::Rng {
        rng::stream(rng::derive(self.metrics_seed, &format!("{name}@{checkpoint}")), name)
    }

    pub fn save_checkpoint(&mut self, model: &ValueModel, checkpoint: usize, seed: u64) -> Result<()> {
        if self.toggles.save_checkpoints {
            let dir = self.dir.join("checkpoints");
            model.save_checkpoint(&dir, &format!("step{checkpoint:08}"), seed)?;
            if !self.files.iter().any(|f| f == "checkpoints/") {
                self.files.push("checkpoints/".into());
            }
        }
        Ok(())
    }

    /// Pairwise `ρ`, `ρ̄` and stiffness plus their means as scalars.
    pub fn interference(
        &mut self,
        checkpoint: usize,
        model: &ValueModel,
        params: &ParamVector,
        samples: &[LossSample],
        ids: &[usize],
    ) -> Result<()> {
        let Some(table) = self.interference.as_mut() else {
            return Ok(());
        };
        let side = (self.toggles.n_pairs as f64).sqrt().round() as usize;
        if samples.len() < side {
            for m in ["rho_mean", "rho_bar_mean", "stiffness_mean"] {
                self.scalars.row(&[checkpoint.to_string(), m.to_string(), opt(None)])?;
            }
            return Ok(());
        }
        let seed = rng::derive(self.metrics_seed, &format!("pairs@{checkpoint}"));
        let recs = pair_sample_metrics(model, params, samples, ids, self.toggles.n_pairs, seed, checkpoint)?;
        for r in &recs {
            table.row(&[
                r.checkpoint.to_string(),
                r.pair_a.to_string(),
                r.pair_b.to_string(),
                num(r.rho),
                num(r.rho_bar),
                opt(r.stiffness),
                opt(r.delta_a),
                opt(r.delta_b),
            ])?;
        }
        let rho = mean(recs.iter().map(|r| r.rho));
        let rho_bar = mean(recs.iter().map(|r| r.rho_bar));
        let stiff = mean(recs.iter().filter_map(|r| r.stiffness));
        self.scalar(checkpoint, "rho_mean", rho)?;
        self.scalar(checkpoint, "rho_bar_mean", rho_bar)?;
        self.scalar(checkpoint, "stiffness_mean", stiff)
    }

    fn pairs(&self, checkpoint: usize, n: usize) -> Vec<(usize, usize)> {
        if n < 2 {
            return vec![];
        }
        let mut r = self.stream(checkpoint, "rho-prime");
        (0..self.toggles.rho_prime_pairs)
            .map(|_| {
                let a = r.random_range(0..n);
                let mut b = r.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            })
            .collect()
    }

    fn rho_prime_row(
        &mut self,
        checkpoint: usize,
        objective: &str,
        ids: (usize, usize),
        terms: Option<(f64, f64, f64)>,
        total: f64,
        fd: Option<FdReport>,
    ) -> Result<()> {
        let entry = fd.as_ref().and_then(|f| f.entries.last().copied());
        let table = self.rho_prime.as_mut().expect("rho_prime table open");
        table.row(&[
            checkpoint.to_string(),
            objective.to_string(),
            ids.0.to_string(),
            ids.1.to_string(),
            opt(terms.map(|t| t.0)),
            opt(terms.map(|t| t.1)),
            opt(terms.map(|t| t.2)),
            num(total),
            opt(entry.map(|e| e.slope)),
            opt(entry.map(|e| e.alpha)),
            opt(entry.map(|e| e.residual)),
        ])
    }

    /// `ρ′` of random sample pairs: the regression breakdown for squared
    /// losses, otherwise the general form.
    pub fn rho_prime_samples(
        &mut self,
        checkpoint: usize,
        model: &ValueModel,
        params: &ParamVector,
        samples: &[LossSample],
        ids: &[usize],
        regression: bool,
    ) -> Result<()> {
        if self.rho_prime.is_none() {
            return Ok(());
        }
        let mut totals = Vec::new();
        for (i, j) in self.pairs(checkpoint, samples.len()) {
            let (a, b) = (&samples[i], &samples[j]);
            if regression {
                let t = rho_prime_reg_terms(model, params, a, b)?;
                let obj = OracleObjective::Regression { r2_coefficient: 1.0 };
                let fd = fd_oracle_rho_prime(model, params, &obj, a, b, &FD_ALPHAS)?;
                self.rho_prime_row(checkpoint, "reg", (ids[i], ids[j]), Some((t.r1, t.r2, t.r3)), t.total, Some(fd))?;
                totals.push(t.total);
            } else {
                let total = rho_prime_general(model, params, a, b)?;
                let fd = fd_oracle_rho_prime(model, params, &OracleObjective::General, a, b, &FD_ALPHAS)?;
                self.rho_prime_row(checkpoint, "general", (ids[i], ids[j]), None, total, Some(fd))?;
                totals.push(total);
            }
        }
        self.scalar(checkpoint, "rho_prime_mean", mean(totals))
    }

    /// TD breakdown of random transition pairs.
    #[allow(clippy::too_many_arguments)]
    pub fn rho_prime_td(
        &mut self,
        checkpoint: usize,
        model: &ValueModel,
        online: &ParamVector,
        shadow: &ParamVector,
        samples: &[TdSample],
        ids: &[usize],
        opts: &TdOptions,
    ) -> Result<()> {
        if self.rho_prime.is_none() {
            return Ok(());
        }
        let mut totals = Vec::new();
        for (i, j) in self.pairs(checkpoint, samples.len()) {
            let (a, b) = (&samples[i], &samples[j]);
            let t = rho_prime_td_terms(model, online, shadow, a, b, opts)?;
            let fd = fd_oracle_td(model, online, shadow, a, b, opts, &FD_ALPHAS)?;
            let name = opts.kind().name();
            self.rho_prime_row(checkpoint, name, (ids[i], ids[j]), Some((t.r1, t.r2, t.r3)), t.total, Some(fd))?;
            totals.push(t.total);
        }
        self.scalar(checkpoint, "rho_prime_mean", mean(totals))
    }

    /// Sign variance of per-transition TD errors grouped by trajectory.
    pub fn sign_variance(&mut self, checkpoint: usize, buffer: &ReplayBuffer, deltas: &[f64]) -> Result<()> {
        if !self.toggles.sign_variance {
            return Ok(());
        }
        let trajs: Vec<Vec<f64>> = buffer.trajectories().into_iter().map(|r| deltas[r].to_vec()).collect();
        self.scalar(checkpoint, "sign_variance", sign_variance(&trajs, SIGN_WINDOW))
    }

    /// Gain and stiffness curves around random update samples. With plain
    /// SGD also records the first-order prediction `−α‖∇J_t‖²` of the gain
    /// at the update sample.
    pub fn curves(&mut self, checkpoint: usize, learner: &mut BufferLearner, sgd_lr: Option<f64>) -> Result<()> {
        if self.gain.is_none() && self.stiffness.is_none() {
            return Ok(());
        }
        let k = self.toggles.max_offset as i64;
        let offsets: Vec<i64> = (-k..=k).collect();
        let n = learner.buffer().len();
        let mut r = self.stream(checkpoint, "curve-updates");
        let updates: Vec<usize> = (0..self.toggles.curve_updates).map(|_| r.random_range(0..n)).collect();
        if self.gain.is_some() {
            let mut curves = Vec::with_capacity(updates.len());
            let (mut worst, mut gains, mut firsts) = (None::<f64>, vec![], vec![]);
            let params = learner.model().params().clone();
            for &t in &updates {
                let c = td_gain_curve(learner, t, &offsets)?;
                if let (Some(lr), Some(g0)) = (sgd_lr, c[k as usize]) {
                    let g = learner.training_grad(&params, &[t])?.grad;
                    let first = -lr * g.dot(&g)?;
                    if first != 0.0 {
                        let rel = (g0 - first).abs() / first.abs();
                        worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
                    }
                    gains.push(g0);
                    firsts.push(first);
                }
                curves.push(c);
            }
            let m = GainCurve::mean_of(&offsets, &curves);
            let table = self.gain.as_mut().expect("gain table open");
            for ((o, g), c) in m.offsets.iter().zip(&m.mean_gain).zip(&m.counts) {
                table.row(&[checkpoint.to_string(), o.to_string(), opt(*g), c.to_string()])?;
            }
            if sgd_lr.is_some() {
                self.scalar(checkpoint, "gain0_mean", mean(gains))?;
                self.scalar(checkpoint, "gain0_first_order_mean", mean(firsts))?;
                self.scalar(checkpoint, "taylor_relative_error", worst)?;
            }
        }
        if self.stiffness.is_some() {
            let mut curves = Vec::with_capacity(updates.len());
            for &t in &updates {
                curves.push(stiffness_curve(learner, t, &offsets)?);
            }
            let m = GainCurve::mean_of(&offsets, &curves);
            let off_centre = mean(
                m.offsets
                    .iter()
                    .zip(&m.mean_gain)
                    .filter(|(o, _)| **o != 0)
                    .filter_map(|(_, v)| *v),
            );
            let table = self.stiffness.as_mut().expect("stiffness table open");
            for ((o, g), c) in m.offsets.iter().zip(&m.mean_gain).zip(&m.counts) {
                table.row(&[checkpoint.to_string(), o.to_string(), opt(*g), c.to_string()])?;
            }
            self.scalar(checkpoint, "curve_stiffness_mean", off_centre)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<String>> {
        self.scalars.finish()?;
        for t in [self.interference, self.gain, self.stiffness, self.rho_prime].into_iter().flatten() {
            t.finish()?;
        }
        Ok(self.files)
    }
}

/// Action-selected predictions for every buffer transition.
pub fn buffer_predictions(model: &ValueModel, params: &ParamVector, buffer: &ReplayBuffer) -> Result<Vec<f64>> {
    let xs: Vec<&Tensor> = buffer.iter().map(|t| t.state.x.as_ref()).collect();
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(256).zip(buffer.iter().collect::<Vec<_>>().chunks(256)) {
        let batch = Tensor::stack(chunk.0)?;
        let q = model.forward_with(params, &batch)?;
        for (i, t) in chunk.1.iter().enumerate() {
            let row = q.row(i);
            out.push(if row.len() == 1 { row[0] } else { row[t.action] });
        }
    }
    Ok(out)
}

/// Squared-loss samples for buffer transitions against `targets`.
pub fn buffer_samples(model: &ValueModel, buffer: &ReplayBuffer, targets: &[f64]) -> Vec<LossSample> {
    let multi = model.spec().outputs > 1;
    buffer
        .iter()
        .zip(targets)
        .map(|(t, &y)| LossSample::half_squared(t.state.x.clone(), multi.then_some(t.action), y))
        .collect()
}

/// Mean of `values`, `None` when empty.
pub fn mean_of(values: &[f64]) -> Option<f64> {
    mean(values.iter().copied())
}
