use crate::error::{Error, Result};

use super::{ControlAffine, RealVec};

/// Uniformly sampled states and the zero-order-hold controls between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<RealVec>,
    /// `controls[k]` is held on `[k dt, (k+1) dt)`.
    pub controls: Vec<RealVec>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.time(self.states.len().saturating_sub(1))
    }

    pub fn final_state(&self) -> &RealVec {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// One classical Runge–Kutta step with `u` held constant.
pub fn rk4_step(model: &dyn ControlAffine, x: &RealVec, u: &RealVec, dt: f64) -> RealVec {
    let h = |s: &RealVec| model.drift(s) + model.input_matrix(s) * u;
    let k1 = h(x);
    let k2 = h(&(x + &k1 * (0.5 * dt)));
    let k3 = h(&(x + &k2 * (0.5 * dt)));
    let k4 = h(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Integrates `round(horizon / dt)` RK4 steps under `policy`.
pub fn simulate(
    model: &dyn ControlAffine,
    policy: impl FnMut(&RealVec) -> RealVec,
    x0: &RealVec,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::InvalidProblem(format!(
            "need dt > 0 and horizon >= dt (dt={dt}, horizon={horizon})"
        )));
    }
    let steps = (horizon / dt).round() as usize;
    simulate_until(model, policy, x0, dt, steps, |_| false)
}

/// Like [`simulate`] with a step budget, stopping right after the first state
/// for which `stop` holds (that state is recorded).
pub fn simulate_until(
    model: &dyn ControlAffine,
    mut policy: impl FnMut(&RealVec) -> RealVec,
    x0: &RealVec,
    dt: f64,
    steps: usize,
    stop: impl Fn(&RealVec) -> bool,
) -> Result<Trajectory> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension {
            expected: model.state_dim(),
            got: x0.len(),
            context: "initial state",
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        if stop(&x) {
            break;
        }
        let u = policy(&x);
        if u.len() != model.control_dim() {
            return Err(Error::Dimension {
                expected: model.control_dim(),
                got: u.len(),
                context: "policy output",
            });
        }
        x = rk4_step(model, &x, &u, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                index: k + 1,
                context: "state became non-finite during simulation".into(),
            });
        }
        controls.push(u);
        states.push(x.clone());
    }
    Ok(Trajectory { dt, states, controls })
}

/// Earliest grid time whose state fails `in_safe`.
pub fn first_exit_time(traj: &Trajectory, in_safe: impl Fn(&RealVec) -> bool) -> Option<f64> {
    traj.states.iter().position(|x| !in_safe(x)).map(|k| traj.time(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnModel, RealMat};

    fn decay() -> FnModel {
        FnModel::linear_drift(RealMat::from_element(1, 1, -1.0))
    }

    fn v(x: f64) -> RealVec {
        RealVec::from_vec(vec![x])
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let t = simulate(&decay(), |_| v(0.0), &v(1.0), 0.01, 1.0).unwrap();
        assert_eq!(t.len(), 101);
        assert!((t.final_state()[0] - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64| {
            let t = simulate(&decay(), |_| v(0.0), &v(1.0), dt, 1.0).unwrap();
            (t.final_state()[0] - (-1f64).exp()).abs()
        };
        assert!(err(0.1) / err(0.05) >= 14.0);
    }

    #[test]
    fn ramp_and_constant() {
        let m = FnModel::single_integrator(1);
        let t = simulate(&m, |_| v(1.0), &v(0.0), 0.01, 2.0).unwrap();
        assert!((t.final_state()[0] - 2.0).abs() < 1e-9);
        assert_eq!(t.controls.len(), t.states.len() - 1);
        let c = simulate(&m, |_| v(0.0), &v(0.7), 0.01, 0.5).unwrap();
        assert!(c.states.iter().all(|s| s[0] == 0.7));
    }

    #[test]
    fn exit_times() {
        let m = FnModel::single_integrator(1);
        let t = simulate(&m, |_| v(1.0), &v(0.0), 0.01, 2.0).unwrap();
        let exit = first_exit_time(&t, |x| x[0] < 1.0).unwrap();
        assert!((exit - 1.0).abs() <= 0.01 + 1e-12);
        assert_eq!(first_exit_time(&t, |_| true), None);
        assert_eq!(first_exit_time(&t, |_| false), Some(0.0));
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let m = FnModel::linear_drift(RealMat::from_element(1, 1, 1e300));
        let err = simulate(&m, |_| v(0.0), &v(1.0), 1.0, 5.0).unwrap_err();
        assert!(matches!(err, Error::Numerical { index: 1, .. }));
    }
}
