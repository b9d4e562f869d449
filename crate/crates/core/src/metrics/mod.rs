//! First-order measurements: interference, gain curves and statistics.

pub mod gain;
pub mod interference;
pub mod stats;

pub use gain::{default_offsets, gain_curve_from, pointwise_loss, stiffness_curve, td_gain_curve, GainCurve};
pub use interference::{cosine, pair_sample_metrics, rho, rho_bar, stiffness, InterferenceRecord};
pub use stats::{
    bootstrap_pearson_ci, generalization_gap, linear_fit, pearson_r, sign_variance, singular_values, zscore,
    GapMetric, SIGN_WINDOW,
};
