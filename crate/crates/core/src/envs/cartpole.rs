//! Frictionless cart-pole with the pole angle measured from upright.
//!
//! State `[p, p_dot, psi, psi_dot]`, one control in `[-1, 1]` scaled to a force.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{ControlAffine, RealMat, RealVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    /// Newtons per unit control.
    pub force_scale: f64,
    pub track_bound: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_scale: 10.0,
            track_bound: 3.8,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.cart_mass, self.pole_mass, self.half_length, self.force_scale, self.track_bound];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !self.gravity.is_finite() {
            return Err(Error::Config(format!("cart-pole parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    fn total_mass(&self) -> f64 {
        self.params.cart_mass + self.params.pole_mass
    }

    /// Angular acceleration `drift + gain * F` at the given state.
    fn angular(&self, x: &RealVec) -> (f64, f64) {
        let CartPoleParams {
            pole_mass: m,
            half_length: l,
            gravity: g,
            ..
        } = self.params;
        let total = self.total_mass();
        let (s, c) = x[2].sin_cos();
        let w = x[3];
        let den = l * (4.0 / 3.0 - m * c * c / total);
        ((g * s - c * m * l * w * w * s / total) / den, -c / (total * den))
    }

    /// Mechanical energy; conserved when the control is zero.
    pub fn energy(&self, x: &RealVec) -> f64 {
        let CartPoleParams {
            pole_mass: m,
            half_length: l,
            gravity: g,
            ..
        } = self.params;
        let (pd, psi, w) = (x[1], x[2], x[3]);
        0.5 * self.total_mass() * pd * pd + m * l * pd * w * psi.cos() + 2.0 / 3.0 * m * l * l * w * w + m * g * l * psi.cos()
    }

    pub fn within_track(&self, x: &RealVec) -> bool {
        x[0].abs() <= self.params.track_bound
    }
}

impl ControlAffine for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &RealVec) -> RealVec {
        let CartPoleParams {
            pole_mass: m,
            half_length: l,
            ..
        } = self.params;
        let (psi_acc, _) = self.angular(x);
        let (s, c) = x[2].sin_cos();
        let p_acc = m * l * (x[3] * x[3] * s - psi_acc * c) / self.total_mass();
        RealVec::from_vec(vec![x[1], p_acc, x[3], psi_acc])
    }

    fn input_matrix(&self, x: &RealVec) -> RealMat {
        let CartPoleParams {
            pole_mass: m,
            half_length: l,
            force_scale,
            ..
        } = self.params;
        let (_, gain) = self.angular(x);
        let p_gain = (1.0 - m * l * gain * x[2].cos()) / self.total_mass();
        RealMat::from_column_slice(4, 1, &[0.0, p_gain * force_scale, 0.0, gain * force_scale])
    }
}

/// Velocity weights of the observation `(sin psi, k p_dot, k psi_dot)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    /// `k = 0.1`.
    Balance,
    /// `k = 1`.
    Unit,
}

impl FeatureScaling {
    pub fn factor(self) -> f64 {
        match self {
            FeatureScaling::Balance => 0.1,
            FeatureScaling::Unit => 1.0,
        }
    }
}

pub fn features(x: &RealVec, scaling: FeatureScaling) -> RealVec {
    let k = scaling.factor();
    RealVec::from_vec(vec![x[2].sin(), k * x[1], k * x[3]])
}

/// Jacobian of [`features`] with respect to the state, `3 x 4`.
pub fn features_jacobian(x: &RealVec, scaling: FeatureScaling) -> RealMat {
    let k = scaling.factor();
    let mut j = RealMat::zeros(3, 4);
    j[(0, 2)] = x[2].cos();
    j[(1, 1)] = k;
    j[(2, 3)] = k;
    j
}

/// Per-step cost for barrier learning: 1 once the pole is below the angle threshold.
pub fn ldcbf_cost(x: &RealVec) -> f64 {
    if x[2].cos() < 0.2 {
        1.0
    } else {
        0.1
    }
}

pub fn pole_up(x: &RealVec, cos_threshold: f64) -> bool {
    x[2].cos() >= cos_threshold
}

/// `sqrt(-2 ln 0.1)`: a Gaussian tail that equals 0.1 one margin past the bound.
const GAUSSIAN_SCALE: f64 = 2.145_966_026_289_347;

/// 1 on `[lo, hi]`, Gaussian decay outside with value 0.1 at distance `margin`.
pub fn tolerance(z: f64, lo: f64, hi: f64, margin: f64) -> f64 {
    let d = if z < lo {
        lo - z
    } else if z > hi {
        z - hi
    } else {
        return 1.0;
    };
    if margin <= 0.0 {
        return 0.0;
    }
    (-0.5 * (d * GAUSSIAN_SCALE / margin).powi(2)).exp()
}

/// Reward for driving the cart left with the pole up.
pub fn move_reward(x: &RealVec) -> f64 {
    (1.0 + x[2].cos()) / 2.0 * tolerance(x[1] + 1.0, -2.0, 0.0, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::rk4_step;

    fn s(p: f64, pd: f64, psi: f64, w: f64) -> RealVec {
        RealVec::from_vec(vec![p, pd, psi, w])
    }

    #[test]
    fn equilibria() {
        let cp = CartPole::new(CartPoleParams::default()).unwrap();
        assert!(cp.drift(&s(0.3, 0.0, 0.0, 0.0)).amax() < 1e-15);
        assert!(cp.drift(&s(0.0, 0.0, std::f64::consts::PI, 0.0)).amax() < 1e-14);
    }

    #[test]
    fn force_direction() {
        let cp = CartPole::new(CartPoleParams::default()).unwrap();
        let g = cp.input_matrix(&s(0.0, 0.0, 0.0, 0.0));
        assert!(g[(1, 0)] > 0.0);
        assert!(g[(3, 0)] < 0.0);
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn angle_gain_vanishes_only_when_horizontal() {
        let cp = CartPole::new(CartPoleParams::default()).unwrap();
        for i in 0..=400 {
            let psi = -std::f64::consts::PI + i as f64 * std::f64::consts::PI / 200.0;
            for w in [-3.0, 0.0, 2.0] {
                let gain = cp.input_matrix(&s(0.0, 1.0, psi, w))[(3, 0)];
                if psi.cos().abs() > 1e-9 {
                    assert!(gain.abs() > 1e-9, "psi {psi}");
                } else {
                    assert!(gain.abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn matches_textbook_equations() {
        // direct evaluation of the coupled equations with an explicit force
        let prm = CartPoleParams::default();
        let cp = CartPole::new(prm).unwrap();
        let x = s(0.2, -0.4, 0.7, 1.3);
        let u = 0.6;
        let force = prm.force_scale * u;
        let total = prm.cart_mass + prm.pole_mass;
        let (m, l) = (prm.pole_mass, prm.half_length);
        let (sn, c) = x[2].sin_cos();
        let tmp = (force + m * l * x[3] * x[3] * sn) / total;
        let psi_acc = (prm.gravity * sn - c * tmp) / (l * (4.0 / 3.0 - m * c * c / total));
        let p_acc = tmp - m * l * psi_acc * c / total;
        let xdot = cp.drift(&x) + cp.input_matrix(&x) * RealVec::from_element(1, u);
        assert!((xdot[1] - p_acc).abs() < 1e-12);
        assert!((xdot[3] - psi_acc).abs() < 1e-12);
    }

    #[test]
    fn energy_is_conserved_without_force() {
        let cp = CartPole::new(CartPoleParams::default()).unwrap();
        let mut x = s(0.0, 0.3, 0.9, -0.5);
        let e0 = cp.energy(&x);
        let u = RealVec::zeros(1);
        let mut drift = 0.0f64;
        for _ in 0..10_000 {
            x = rk4_step(&cp, &x, &u, 1e-3);
            drift = drift.max((cp.energy(&x) - e0).abs());
        }
        assert!(drift <= 1e-5, "{drift}");
    }

    #[test]
    fn features_and_costs() {
        let up = s(0.0, 0.0, 0.0, 0.0);
        assert_eq!(features(&up, FeatureScaling::Balance), RealVec::zeros(3));
        assert!((features(&s(0.0, 1.0, 0.0, 0.0), FeatureScaling::Balance)[1] - 0.1).abs() < 1e-15);
        assert_eq!(features(&s(0.0, 1.0, 0.0, 0.0), FeatureScaling::Unit)[1], 1.0);
        assert_eq!(ldcbf_cost(&s(0.0, 0.0, 0.1f64.acos(), 0.0)), 1.0);
        assert_eq!(ldcbf_cost(&s(0.0, 0.0, 0.3f64.acos(), 0.0)), 0.1);
        let x = s(0.0, 0.0, 0.2f64.acos(), 0.0);
        assert_eq!(ldcbf_cost(&x), if x[2].cos() < 0.2 { 1.0 } else { 0.1 });
    }

    #[test]
    fn rewards() {
        assert_eq!(move_reward(&s(0.0, -1.0, 0.0, 0.0)), 1.0);
        assert!(move_reward(&s(0.0, -1.0, std::f64::consts::PI, 0.0)) < 1e-15);
        assert!((tolerance(0.5, -2.0, 0.0, 0.5) - 0.1).abs() < 1e-12);
        let far = tolerance(1.5, -2.0, 0.0, 0.5);
        assert!(far > 0.0 && far < 1e-8);
    }
}
