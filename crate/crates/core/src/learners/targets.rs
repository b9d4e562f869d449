//! Bootstrap-target parameter rules.

use serde::{Deserialize, Serialize};
use tdi_autodiff::ParamVector;

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TargetKind {
    /// Bootstrap from the online parameters.
    #[serde(rename = "self")]
    Online,
    /// Copy the online parameters every `period` steps.
    Frozen { period: u64 },
    /// `shadow ← (1−τ)·shadow + τ·θ` after every step.
    Ema { tau: f64 },
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::Online => "self",
            TargetKind::Frozen { .. } => "frozen",
            TargetKind::Ema { .. } => "ema",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetRule {
    kind: TargetKind,
    shadow: Option<ParamVector>,
    counter: u64,
    generation: u64,
}

impl TargetRule {
    pub fn new(kind: TargetKind, online: &ParamVector) -> Result<Self> {
        match kind {
            TargetKind::Frozen { period: 0 } => {
                return Err(CoreError::InvalidArgument("frozen period must be positive".into()))
            }
            TargetKind::Ema { tau } if !(0.0..=1.0).contains(&tau) => {
                return Err(CoreError::InvalidArgument(format!("ema rate {tau} outside [0, 1]")))
            }
            _ => {}
        }
        let shadow = match kind {
            TargetKind::Online => None,
            _ => Some(online.clone()),
        };
        Ok(TargetRule {
            kind,
            shadow,
            counter: 0,
            generation: 0,
        })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Parameters used for bootstrap values.
    pub fn params<'a>(&'a self, online: &'a ParamVector) -> &'a ParamVector {
        self.shadow.as_ref().unwrap_or(online)
    }

    pub fn shadow(&self) -> Option<&ParamVector> {
        self.shadow.as_ref()
    }

    /// Incremented whenever the bootstrap parameters change.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Call after each optimizer step.
    pub fn after_step(&mut self, online: &ParamVector) -> Result<()> {
        self.counter += 1;
        match self.kind {
            TargetKind::Online => self.generation += 1,
            TargetKind::Frozen { period } => {
                if self.counter % period == 0 {
                    self.shadow = Some(online.clone());
                    self.generation += 1;
                }
            }
            TargetKind::Ema { tau } => {
                let s = self.shadow.as_mut().expect("ema keeps a shadow");
                if !s.same_layout(online) {
                    return Err(tdi_autodiff::AdError::LayoutMismatch.into());
                }
                for (a, b) in s.data_mut().iter_mut().zip(online.data()) {
                    *a = (1.0 - tau) * *a + tau * b;
                }
                self.generation += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use tdi_autodiff::Layout;

    use super::*;

    fn pv(v: f64) -> ParamVector {
        let mut l = Layout::new();
        l.push("w", vec![1]);
        ParamVector::from_data(Arc::new(l), vec![v]).unwrap()
    }

    #[test]
    fn frozen_refreshes_every_period() {
        let mut r = TargetRule::new(TargetKind::Frozen { period: 3 }, &pv(0.0)).unwrap();
        for step in 1..=7u64 {
            let online = pv(step as f64);
            r.after_step(&online).unwrap();
            let expect = (step / 3 * 3) as f64;
            assert_eq!(r.params(&online).data()[0], expect);
        }
    }

    #[test]
    fn ema_converges_geometrically() {
        let tau = 0.1;
        let mut r = TargetRule::new(TargetKind::Ema { tau }, &pv(0.0)).unwrap();
        let online = pv(1.0);
        for k in 1..=50 {
            r.after_step(&online).unwrap();
            let gap = 1.0 - r.params(&online).data()[0];
            assert!((gap - (1.0 - tau).powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn online_rule_tracks_parameters() {
        let r = TargetRule::new(TargetKind::Online, &pv(0.0)).unwrap();
        let online = pv(5.0);
        assert_eq!(r.params(&online), &online);
        assert!(TargetRule::new(TargetKind::Frozen { period: 0 }, &online).is_err());
    }
}
