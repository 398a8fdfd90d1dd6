//! Deterministic actor-critic training with optional learned-barrier penalties,
//! and the cart-pole balance and move tasks built on it.

pub mod cartpole;
pub mod ddpg;

pub use crate::nn::Optimizer;
pub use ddpg::{ConstraintRecord, Ddpg, DdpgConfig, Experience, UpdateStats};

use crate::error::{Error, Result};
use crate::qp::{solve_qp, Halfspace, QpProblem};
use crate::system::{Polytope, RealVec};

/// Smooth, everywhere-finite surrogate for the indicator of `z <= 0`.
///
/// `-ln(-z)/t` for `z <= -1/t^2`, continued linearly with matching value and slope.
pub fn log_barrier_extension(z: f64, t: f64) -> f64 {
    debug_assert!(t > 0.0);
    if z <= -1.0 / (t * t) {
        -(-z).ln() / t
    } else {
        t * z - (1.0 / (t * t)).ln() / t + 1.0 / t
    }
}

/// Derivative of [`log_barrier_extension`] in `z`.
pub fn log_barrier_slope(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -1.0 / (t * z)
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStep {
    pub theta: RealVec,
    /// The constraints had no common point; `theta` is the unprojected step.
    pub infeasible: bool,
}

/// Gradient ascent step on a linear policy followed by Euclidean projection
/// onto `{theta : a_i' theta <= c_i}`.
pub fn projected_update(theta: &RealVec, grad: &RealVec, halfspaces: &[Halfspace], step: f64) -> Result<ProjectedStep> {
    let target = theta + grad * step;
    if halfspaces.iter().all(|h| h.violation(&target) <= 0.0) {
        return Ok(ProjectedStep {
            theta: target,
            infeasible: false,
        });
    }
    let p = QpProblem::projection(&target, halfspaces.to_vec(), Polytope::unconstrained(theta.len()))?;
    match solve_qp(&p) {
        Ok(s) => Ok(ProjectedStep {
            theta: s.u,
            infeasible: false,
        }),
        Err(Error::Infeasible) => Ok(ProjectedStep {
            theta: target,
            infeasible: true,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_extension_values() {
        let t = 1.0;
        assert!(log_barrier_extension(-1.0, t).abs() < 1e-15);
        assert!((log_barrier_extension(1.0, 1.0) - 2.0).abs() < 1e-15);
        assert!(log_barrier_extension(-1e6, 5.0).abs() < 3.0);
        assert!(log_barrier_extension(-1e300, 5.0) < 0.0);
        for t in [0.5, 1.0, 5.0, 25.0] {
            let knee = -1.0 / (t * t);
            let (a, b) = (log_barrier_extension(knee - 1e-12, t), log_barrier_extension(knee + 1e-12, t));
            assert!((a - b).abs() < 1e-9);
            assert!((log_barrier_slope(knee - 1e-15, t) - t).abs() < 1e-6 * t);
            let z = knee * 3.0;
            let fd = (log_barrier_extension(z + 1e-7, t) - log_barrier_extension(z - 1e-7, t)) / 2e-7;
            assert!((fd - log_barrier_slope(z, t)).abs() < 1e-5 * t);
        }
    }

    fn v(x: &[f64]) -> RealVec {
        RealVec::from_column_slice(x)
    }

    #[test]
    fn projected_steps() {
        let theta = v(&[0.0, 0.0]);
        let g = v(&[1.0, 2.0]);
        let free = projected_update(&theta, &g, &[], 0.5).unwrap();
        assert_eq!(free.theta, v(&[0.5, 1.0]));
        let h = Halfspace::new(v(&[0.0, 1.0]), 0.25);
        let one = projected_update(&theta, &g, &[h.clone()], 0.5).unwrap();
        assert!((one.theta[1] - 0.25).abs() < 1e-12 && (one.theta[0] - 0.5).abs() < 1e-12);
        let h2 = Halfspace::new(v(&[1.0, 1.0]), 0.5);
        let two = projected_update(&theta, &g, &[h.clone(), h2.clone()], 0.5).unwrap();
        let oracle = solve_qp(&QpProblem::projection(&v(&[0.5, 1.0]), vec![h, h2], Polytope::unconstrained(2)).unwrap()).unwrap();
        assert!((two.theta - oracle.u).amax() < 1e-12);
        let clash = [Halfspace::new(v(&[1.0, 0.0]), -1.0), Halfspace::new(v(&[-1.0, 0.0]), -1.0)];
        let bad = projected_update(&theta, &g, &clash, 0.5).unwrap();
        assert!(bad.infeasible);
        assert_eq!(bad.theta, v(&[0.5, 1.0]));
    }
}
