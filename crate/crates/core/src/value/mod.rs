//! Value-function learning for a fixed policy and conversion of the learned
//! value into a barrier.
//!
//! Rollouts terminate on leaving the safe set, and the TD target for an
//! exiting transition is `L/(1 - gamma)`: the discounted cost of a virtual
//! system frozen outside the safe set that pays `L` forever.

mod approx;
mod buffer;
pub mod checkpoint;
mod extract;
mod td;

pub use approx::{FeatureMapped, FunctionApproximator, GridApproximator, MlpApproximator, ScaledField};
pub use buffer::ReplayBuffer;
pub use extract::{
    extract_ldcbf, extract_with_residual, refine_exit_points, ExtractOptions, ExtractReport, LearnedLdcbf,
};
pub use td::{
    collect_rollouts, hjb_residual, n_step_backup, sweep_grid_value, Backup, mean_td_residual, push_unsafe_states, td_target, train_value, RolloutConfig,
    TdConfig, TdReport,
};

use crate::system::RealVec;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: RealVec,
    pub u: RealVec,
    pub cost: f64,
    pub x_next: RealVec,
    pub next_safe: bool,
}

/// Continuous discount rate of a per-step factor: `beta = -ln(gamma) / dt`.
pub fn beta_from_gamma(gamma: f64, dt: f64) -> f64 {
    -gamma.ln() / dt
}

/// Inverse of [`beta_from_gamma`].
pub fn gamma_from_beta(beta: f64, dt: f64) -> f64 {
    (-beta * dt).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discount_conversion() {
        assert!((beta_from_gamma(0.99, 0.01) - 1.00503).abs() < 1e-5);
        let b = beta_from_gamma(0.999, 0.01);
        assert!((b - 0.10005).abs() < 1e-5);
        assert!((1.0 / b - 9.995).abs() < 1e-3);
        for g in [0.5, 0.9, 0.99, 0.9999] {
            assert!((gamma_from_beta(beta_from_gamma(g, 0.01), 0.01) - g).abs() < 1e-12);
        }
    }
}
