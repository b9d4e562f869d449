//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};
use tdi_autodiff::{AdError, ParamVector};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    /// `μ_t = (1−β)g + βμ_{t−1}`, `θ′ = θ − αμ_t`.
    Momentum {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    RmsProp {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}

impl OptimizerKind {
    pub fn momentum() -> Self {
        OptimizerKind::Momentum { beta: default_beta() }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            decay: default_decay(),
            eps: default_eps(),
        }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::RmsProp { .. } => "rmsprop",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        let ok = match *self {
            OptimizerKind::Sgd => true,
            OptimizerKind::Momentum { beta } => unit(beta),
            OptimizerKind::RmsProp { decay, eps } => unit(decay) && eps > 0.0,
            OptimizerKind::Adam { beta1, beta2, eps } => unit(beta1) && unit(beta2) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument(format!("invalid optimizer constants {self:?}")))
        }
    }
}

/// Optimizer kind, step size and accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Option<ParamVector>,
    second: Option<ParamVector>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        kind.validate()?;
        if !lr.is_finite() || lr < 0.0 {
            return Err(CoreError::InvalidArgument(format!("step size {lr} must be finite and ≥ 0")));
        }
        Ok(Optimizer {
            kind,
            lr,
            first: None,
            second: None,
            steps: 0,
        })
    }

    /// Momentum buffer `μ_{t−1}` (zero before the first step).
    pub fn momentum_buffer(&self) -> Option<&ParamVector> {
        self.first.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The update direction `d` such that the step is `θ′ = θ − α·d`,
    /// without touching any state.
    pub fn peek_direction(&self, params: &ParamVector, grad: &ParamVector) -> Result<ParamVector> {
        let mut probe = self.clone();
        let mut p = params.clone();
        probe.lr = 1.0;
        probe.step(&mut p, grad)?;
        params.plus(-1.0, &p).map_err(Into::into)
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if !params.same_layout(grad) {
            return Err(AdError::LayoutMismatch.into());
        }
        for acc in [&self.first, &self.second].into_iter().flatten() {
            if !acc.same_layout(params) {
                return Err(AdError::LayoutMismatch.into());
            }
        }
        self.steps += 1;
        let lr = self.lr;
        let zeros = || ParamVector::zeros(params.layout().clone());
        match self.kind {
            OptimizerKind::Sgd => {
                params.axpy(-lr, grad)?;
            }
            OptimizerKind::Momentum { beta } => {
                let mu = self.first.get_or_insert_with(zeros);
                for (m, g) in mu.data_mut().iter_mut().zip(grad.data()) {
                    *m = (1.0 - beta) * g + beta * *m;
                }
                params.axpy(-lr, mu)?;
            }
            OptimizerKind::RmsProp { decay, eps } => {
                let v = self.second.get_or_insert_with(zeros);
                for ((p, s), g) in params.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                    *s = decay * *s + (1.0 - decay) * g * g;
                    *p -= lr * g / (s.sqrt() + eps);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                let m = self.first.get_or_insert_with(zeros);
                let v = self.second.get_or_insert_with(zeros);
                for (((p, m), v), g) in params
                    .data_mut()
                    .iter_mut()
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                    .zip(grad.data())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
