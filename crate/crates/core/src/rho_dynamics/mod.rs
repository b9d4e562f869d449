//! Second-order interference dynamics: how `ρ` changes under an update.
//!
//! Per-example losses here use `J = ½δ²`, so `∂J/∂f = δ`. Against the
//! unhalved training loss `(f − y)²`, `ρ` scales by 4 and `ρ′` by 8.

pub mod analytic;
pub mod momentum;
pub mod oracle;
mod precise;
pub mod terms;

use serde::{Deserialize, Serialize};

pub use analytic::{hessian_free_rho_prime, loss_hvp, prediction_hvp, rho_bar_prime, rho_prime_general};
pub use momentum::{momentum_direction, momentum_interference, rho_mu, MomentumInterference};
pub use oracle::{fd_oracle_rho_prime, fd_oracle_td, fd_report, FdEntry, FdReport, OracleObjective};
pub use terms::{
    rho_prime_reg_terms, rho_prime_td_terms, BreakdownKind, DeltaSource, RhoPrimeBreakdown, TdOptions, TdSample,
};

#[doc(hidden)]
pub use terms::rho_prime_reg_terms_with_r2_coefficient;

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermAggregate {
    pub mean: f64,
    /// Mean over the positive samples; 0 when there are none.
    pub positive_mean: f64,
    /// Mean over the negative samples; 0 when there are none.
    pub negative_mean: f64,
}

impl TermAggregate {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(CoreError::InsufficientData("no samples".into()));
        }
        let part = |keep: fn(f64) -> bool| {
            let v: Vec<f64> = xs.iter().copied().filter(|&x| keep(x)).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(TermAggregate {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            positive_mean: part(|x| x > 0.0),
            negative_mean: part(|x| x < 0.0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermStatistics {
    pub r1: TermAggregate,
    pub r2: TermAggregate,
    pub r3: TermAggregate,
}

pub fn term_statistics(breakdowns: &[RhoPrimeBreakdown]) -> Result<TermStatistics> {
    let col = |f: fn(&RhoPrimeBreakdown) -> f64| breakdowns.iter().map(f).collect::<Vec<_>>();
    Ok(TermStatistics {
        r1: TermAggregate::of(&col(|b| b.r1))?,
        r2: TermAggregate::of(&col(|b| b.r2))?,
        r3: TermAggregate::of(&col(|b| b.r3))?,
    })
}
