use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{RealMat, RealVec};

/// A differentiable scalar function of the state.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &RealVec) -> f64;
    fn gradient(&self, x: &RealVec) -> RealVec;

    /// Analytic Hessian, if the implementation has one.
    fn hessian(&self, _x: &RealVec) -> Option<RealMat> {
        None
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &RealVec) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &RealVec) -> RealVec {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &RealVec) -> Option<RealMat> {
        (**self).hessian(x)
    }
}

type ValueFn = dyn Fn(&RealVec) -> f64 + Send + Sync;
type GradFn = dyn Fn(&RealVec) -> RealVec + Send + Sync;
type HessFn = dyn Fn(&RealVec) -> RealMat + Send + Sync;

/// A [`ScalarField`] built from closures.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
    hess: Option<Arc<HessFn>>,
}

impl FnField {
    pub fn new(
        dim: usize,
        value: impl Fn(&RealVec) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&RealVec) -> RealVec + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            grad: Arc::new(grad),
            hess: None,
        }
    }

    pub fn with_hessian(mut self, hess: impl Fn(&RealVec) -> RealMat + Send + Sync + 'static) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    /// `sum_i w_i (x_i - c_i)^2`, the workhorse of the analytic test suites.
    pub fn weighted_square(center: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(center.len(), weights.len());
        let n = center.len();
        let (c1, w1) = (center.clone(), weights.clone());
        let (c2, w2) = (center, weights.clone());
        Self::new(
            n,
            move |x| (0..n).map(|i| w1[i] * (x[i] - c1[i]).powi(2)).sum(),
            move |x| RealVec::from_iterator(n, (0..n).map(|i| 2.0 * w2[i] * (x[i] - c2[i]))),
        )
        .with_hessian(move |_| RealMat::from_diagonal(&RealVec::from_iterator(n, weights.iter().map(|w| 2.0 * w))))
    }
}

impl ScalarField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &RealVec) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &RealVec) -> RealVec {
        (self.grad)(x)
    }
    fn hessian(&self, x: &RealVec) -> Option<RealMat> {
        self.hess.as_ref().map(|h| h(x))
    }
}

/// `inner(x) + offset`.
#[derive(Clone)]
pub struct Shifted<F> {
    pub inner: F,
    pub offset: f64,
}

impl<F: ScalarField> ScalarField for Shifted<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &RealVec) -> f64 {
        self.inner.value(x) + self.offset
    }
    fn gradient(&self, x: &RealVec) -> RealVec {
        self.inner.gradient(x)
    }
    fn hessian(&self, x: &RealVec) -> Option<RealMat> {
        self.inner.hessian(x)
    }
}

/// Rectified linear comparison function `q -> max(k q, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFn {
    pub slope: f64,
}

impl AlphaFn {
    pub fn new(slope: f64) -> Result<Self> {
        if !(slope >= 0.0 && slope.is_finite()) {
            return Err(Error::InvalidProblem(format!("alpha slope must be nonnegative, got {slope}")));
        }
        Ok(Self { slope })
    }

    pub fn apply(&self, q: f64) -> f64 {
        (self.slope * q).max(0.0)
    }
}

/// `L e^{-beta T} / beta`, the sublevel bound of the initial set.
pub fn ldcbf_threshold(cost_cap: f64, beta: f64, horizon: f64) -> f64 {
    cost_cap * (-beta * horizon).exp() / beta
}

/// A limited-duration barrier: safe set `{B < L/beta}`, initial set
/// `{B <= L e^{-beta T}/beta}`.
#[derive(Clone)]
pub struct Ldcbf {
    pub field: Arc<dyn ScalarField>,
    /// `L`, the bound on the immediate cost.
    pub cost_cap: f64,
    /// Discount rate `beta`.
    pub beta: f64,
    /// Guaranteed horizon `T`.
    pub horizon: f64,
    pub alpha: AlphaFn,
}

impl fmt::Debug for Ldcbf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ldcbf")
            .field("dim", &self.field.dim())
            .field("cost_cap", &self.cost_cap)
            .field("beta", &self.beta)
            .field("horizon", &self.horizon)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl Ldcbf {
    pub fn new(
        field: Arc<dyn ScalarField>,
        cost_cap: f64,
        beta: f64,
        horizon: f64,
        alpha: AlphaFn,
    ) -> Result<Self> {
        if !(cost_cap > 0.0 && cost_cap.is_finite()) {
            return Err(Error::InvalidProblem(format!("L must be positive, got {cost_cap}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidProblem(format!("beta must be positive, got {beta}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!("T must be nonnegative, got {horizon}")));
        }
        Ok(Self {
            field,
            cost_cap,
            beta,
            horizon,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn value(&self, x: &RealVec) -> f64 {
        self.field.value(x)
    }

    pub fn gradient(&self, x: &RealVec) -> RealVec {
        self.field.gradient(x)
    }

    pub fn threshold(&self) -> f64 {
        ldcbf_threshold(self.cost_cap, self.beta, self.horizon)
    }

    /// `L / beta`, the level of the safe-set boundary.
    pub fn safe_level(&self) -> f64 {
        self.cost_cap / self.beta
    }

    pub fn in_safe_set(&self, x: &RealVec) -> bool {
        // compared as beta*B < L so that B = V + c/beta stays consistent with L = min beta*B
        self.beta * self.value(x) < self.cost_cap
    }

    pub fn in_initial_set(&self, x: &RealVec) -> bool {
        self.value(x) <= self.threshold()
    }

    /// Same barrier with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_alpha(&self, alpha: AlphaFn) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest `|g - g_fd|_inf / (1 + |g_fd|_inf)` seen.
    pub max_error: f64,
    pub worst_point: Option<RealVec>,
    pub checked: usize,
}

impl GradientCheck {
    pub fn passes(&self, rtol: f64) -> bool {
        self.max_error <= rtol
    }
}

/// Compares `field.gradient` with central differences of `field.value` at each point.
pub fn check_gradient(field: &dyn ScalarField, points: &[RealVec], h: f64) -> GradientCheck {
    let mut report = GradientCheck {
        max_error: 0.0,
        worst_point: None,
        checked: 0,
    };
    for x in points {
        let g = field.gradient(x);
        let mut fd = RealVec::zeros(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = field.value(&xp);
            xp[i] = orig - h;
            let down = field.value(&xp);
            xp[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        let err = (&g - &fd).amax() / (1.0 + fd.amax());
        let err = if err.is_finite() { err } else { f64::INFINITY };
        if err > report.max_error || report.worst_point.is_none() {
            report.max_error = report.max_error.max(err);
            report.worst_point = Some(x.clone());
        }
        report.checked += 1;
    }
    report
}
