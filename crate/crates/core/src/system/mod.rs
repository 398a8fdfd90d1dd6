//! Dynamics, safe sets and barrier types shared by every other module.
//!
//! States and controls are dense [`RealVec`]s. A system is anything that
//! implements [`ControlAffine`], i.e. `xdot = f(x) + g(x) u`.

mod barrier;
mod polytope;
mod sim;

pub use barrier::{
    check_gradient, ldcbf_threshold, AlphaFn, FnField, GradientCheck, Ldcbf, ScalarField, Shifted,
};
pub use polytope::Polytope;
pub use sim::{first_exit_time, rk4_step, simulate, simulate_until, Trajectory};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type RealVec = DVector<f64>;
pub type RealMat = DMatrix<f64>;

/// Input-affine dynamics `xdot = f(x) + g(x) u`.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Drift `f(x)`.
    fn drift(&self, x: &RealVec) -> RealVec;
    /// Input matrix `g(x)`, `n_x x n_u`.
    fn input_matrix(&self, x: &RealVec) -> RealMat;
}

type DriftFn = dyn Fn(&RealVec) -> RealVec + Send + Sync;
type InputFn = dyn Fn(&RealVec) -> RealMat + Send + Sync;

/// A [`ControlAffine`] system assembled from closures.
#[derive(Clone)]
pub struct FnModel {
    n_x: usize,
    n_u: usize,
    f: Arc<DriftFn>,
    g: Arc<InputFn>,
}

impl FnModel {
    pub fn new(
        n_x: usize,
        n_u: usize,
        f: impl Fn(&RealVec) -> RealVec + Send + Sync + 'static,
        g: impl Fn(&RealVec) -> RealMat + Send + Sync + 'static,
    ) -> Self {
        Self {
            n_x,
            n_u,
            f: Arc::new(f),
            g: Arc::new(g),
        }
    }

    /// `xdot = u` in `n` dimensions.
    pub fn single_integrator(n: usize) -> Self {
        Self::new(
            n,
            n,
            move |_| RealVec::zeros(n),
            move |_| RealMat::identity(n, n),
        )
    }

    /// Autonomous linear drift `xdot = A x` with a zero input matrix.
    pub fn linear_drift(a: RealMat) -> Self {
        let n = a.nrows();
        Self::new(n, 1, move |x| &a * x, move |_| RealMat::zeros(n, 1))
    }
}

impl ControlAffine for FnModel {
    fn state_dim(&self) -> usize {
        self.n_x
    }

    fn control_dim(&self) -> usize {
        self.n_u
    }

    fn drift(&self, x: &RealVec) -> RealVec {
        (self.f)(x)
    }

    fn input_matrix(&self, x: &RealVec) -> RealMat {
        (self.g)(x)
    }
}

/// Evaluates `f(x) + g(x) u`, rejecting non-finite output.
pub fn eval_dynamics(model: &dyn ControlAffine, x: &RealVec, u: &RealVec) -> Result<RealVec> {
    if x.len() != model.state_dim() {
        return Err(Error::Dimension {
            expected: model.state_dim(),
            got: x.len(),
            context: "state",
        });
    }
    if u.len() != model.control_dim() {
        return Err(Error::Dimension {
            expected: model.control_dim(),
            got: u.len(),
            context: "control",
        });
    }
    let xdot = model.drift(x) + model.input_matrix(x) * u;
    ensure_finite(&xdot, "dynamics")?;
    Ok(xdot)
}

pub(crate) fn ensure_finite(v: &RealVec, context: &str) -> Result<()> {
    match v.iter().position(|e| !e.is_finite()) {
        Some(index) => Err(Error::Numerical {
            index,
            context: context.to_string(),
        }),
        None => Ok(()),
    }
}

/// Axis-aligned box used as the state space `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lo: RealVec,
    pub hi: RealVec,
}

impl StateBox {
    pub fn new(lo: impl Into<Vec<f64>>, hi: impl Into<Vec<f64>>) -> Result<Self> {
        let lo = RealVec::from_vec(lo.into());
        let hi = RealVec::from_vec(hi.into());
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidProblem("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidProblem("box needs lo < hi in every coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &RealVec) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn sample(&self, rng: &mut Rng) -> RealVec {
        RealVec::from_iterator(
            self.dim(),
            self.lo.iter().zip(self.hi.iter()).map(|(l, h)| rng.random_range(*l..=*h)),
        )
    }

    /// Tensor grid with `per_dim` points per coordinate (endpoints included).
    pub fn grid(&self, per_dim: usize) -> Vec<RealVec> {
        assert!(per_dim >= 2);
        let n = self.dim();
        let total = per_dim.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            out.push(RealVec::from_iterator(
                n,
                (0..n).map(|d| {
                    let t = idx[d] as f64 / (per_dim - 1) as f64;
                    self.lo[d] + t * (self.hi[d] - self.lo[d])
                }),
            ));
            for d in 0..n {
                idx[d] += 1;
                if idx[d] < per_dim {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
}

/// Largest observed slope `|h(x1,u) - h(x2,u)| / |x1 - x2|` over random nearby pairs.
///
/// A cheap spot check of local Lipschitz continuity; returns an error on any
/// non-finite evaluation.
pub fn lipschitz_estimate(
    model: &dyn ControlAffine,
    states: &StateBox,
    controls: &[RealVec],
    pairs: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut worst = 0.0f64;
    let scale = (&states.hi - &states.lo).amax();
    for k in 0..pairs {
        let x1 = states.sample(rng);
        let dir = RealVec::from_iterator(x1.len(), (0..x1.len()).map(|_| rng.random_range(-1.0..1.0)));
        let x2 = &x1 + dir * (1e-3 * scale);
        let u = &controls[k % controls.len()];
        let d1 = eval_dynamics(model, &x1, u)?;
        let d2 = eval_dynamics(model, &x2, u)?;
        let dx = (&x1 - &x2).norm();
        if dx > 0.0 {
            worst = worst.max((d1 - d2).norm() / dx);
        }
    }
    Ok(worst)
}
