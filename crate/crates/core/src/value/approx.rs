use std::sync::Arc;

use crate::nn::{Mlp, OptimizerState, Optimizer, OutputActivation};
use crate::rng::Rng;
use crate::system::{RealMat, RealVec, ScalarField, StateBox};

/// A parametric scalar field that can be fitted to regression targets.
pub trait FunctionApproximator: ScalarField + Clone + 'static {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// One step towards `targets` on the squared error `(1/N) sum (y - V(x))^2`.
    fn fit_step(&mut self, inputs: &[RealVec], targets: &[f64], step: f64);

    /// `self <- mu local + (1 - mu) self`.
    fn soft_update(&mut self, local: &Self, mu: f64) {
        for (t, l) in self.params_mut().iter_mut().zip(local.params()) {
            *t = mu * l + (1.0 - mu) * *t;
        }
    }
}

/// Multilinear interpolation on a regular grid over a box; clamped outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridApproximator {
    lo: Vec<f64>,
    spacing: Vec<f64>,
    nodes: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl GridApproximator {
    /// `nodes[d] >= 2` points per coordinate, every value set to `init`.
    pub fn new(domain: &StateBox, nodes: &[usize], init: f64) -> Self {
        assert_eq!(domain.dim(), nodes.len());
        assert!(nodes.iter().all(|n| *n >= 2));
        let lo: Vec<f64> = domain.lo.iter().copied().collect();
        let spacing = (0..nodes.len())
            .map(|d| (domain.hi[d] - domain.lo[d]) / (nodes[d] - 1) as f64)
            .collect();
        let mut strides = vec![1; nodes.len()];
        for d in 1..nodes.len() {
            strides[d] = strides[d - 1] * nodes[d - 1];
        }
        let total = nodes.iter().product();
        Self {
            lo,
            spacing,
            nodes: nodes.to_vec(),
            strides,
            values: vec![init; total],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    /// Coordinates of node `k`.
    pub fn node(&self, k: usize) -> RealVec {
        RealVec::from_iterator(
            self.nodes.len(),
            (0..self.nodes.len()).map(|d| self.lo[d] + ((k / self.strides[d]) % self.nodes[d]) as f64 * self.spacing[d]),
        )
    }

    /// Cell index and local coordinate `t in [0,1]` along each dimension.
    fn locate(&self, x: &RealVec) -> (Vec<usize>, Vec<f64>) {
        let n = self.nodes.len();
        let mut base = vec![0; n];
        let mut t = vec![0.0; n];
        for d in 0..n {
            let s = ((x[d] - self.lo[d]) / self.spacing[d]).clamp(0.0, (self.nodes[d] - 1) as f64);
            let i = (s.floor() as usize).min(self.nodes[d] - 2);
            base[d] = i;
            t[d] = s - i as f64;
        }
        (base, t)
    }

    fn corners(&self, base: &[usize]) -> Vec<usize> {
        let n = base.len();
        (0..1usize << n)
            .map(|mask| (0..n).map(|d| (base[d] + ((mask >> d) & 1)) * self.strides[d]).sum())
            .collect()
    }

    /// Reduces corner values along each dimension with `v0 + t (v1 - v0)`,
    /// replacing dimension `skip` (if any) by the difference `v1 - v0`.
    fn reduce(&self, mut vals: Vec<f64>, t: &[f64], skip: Option<usize>) -> f64 {
        for d in 0..t.len() {
            let half = vals.len() / 2;
            // corner mask bit 0 is the current leading dimension after earlier reductions
            vals = (0..half)
                .map(|j| {
                    let (v0, v1) = (vals[2 * j], vals[2 * j + 1]);
                    if skip == Some(d) {
                        v1 - v0
                    } else {
                        v0 + t[d] * (v1 - v0)
                    }
                })
                .collect();
        }
        vals[0]
    }

    /// Interpolation weight of every corner (same order as `corners`).
    fn weights(t: &[f64]) -> Vec<f64> {
        let n = t.len();
        (0..1usize << n)
            .map(|mask| (0..n).map(|d| if (mask >> d) & 1 == 1 { t[d] } else { 1.0 - t[d] }).product())
            .collect()
    }

    /// Interpolation stencil of `x`: node indices with nonzero weight.
    pub fn stencil(&self, x: &RealVec) -> Vec<(usize, f64)> {
        let (base, t) = self.locate(x);
        self.corners(&base)
            .into_iter()
            .zip(Self::weights(&t))
            .filter(|(_, w)| *w > 0.0)
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set_values(&mut self, f: impl Fn(&RealVec) -> f64) {
        for k in 0..self.values.len() {
            self.values[k] = f(&self.node(k));
        }
    }
}

impl ScalarField for GridApproximator {
    fn dim(&self) -> usize {
        self.nodes.len()
    }

    fn value(&self, x: &RealVec) -> f64 {
        let (base, t) = self.locate(x);
        let vals = self.corners(&base).into_iter().map(|k| self.values[k]).collect();
        self.reduce(vals, &t, None)
    }

    fn gradient(&self, x: &RealVec) -> RealVec {
        let (base, t) = self.locate(x);
        let vals: Vec<f64> = self.corners(&base).into_iter().map(|k| self.values[k]).collect();
        RealVec::from_iterator(
            self.nodes.len(),
            (0..self.nodes.len()).map(|d| {
                let outside = x[d] < self.lo[d] || x[d] > self.lo[d] + (self.nodes[d] - 1) as f64 * self.spacing[d];
                if outside {
                    0.0
                } else {
                    self.reduce(vals.clone(), &t, Some(d)) / self.spacing[d]
                }
            }),
        )
    }
}

impl FunctionApproximator for GridApproximator {
    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Jacobi-preconditioned gradient step: each node moves by `step` times the
    /// weight-averaged residual of the samples touching it. With samples on the
    /// nodes and `step = 1` this is exact tabular averaging.
    fn fit_step(&mut self, inputs: &[RealVec], targets: &[f64], step: f64) {
        let mut num = vec![0.0; self.values.len()];
        let mut den = vec![0.0; self.values.len()];
        for (x, y) in inputs.iter().zip(targets) {
            let resid = y - self.value(x);
            let (base, t) = self.locate(x);
            for (k, w) in self.corners(&base).into_iter().zip(Self::weights(&t)) {
                num[k] += w * resid;
                den[k] += w;
            }
        }
        for k in 0..self.values.len() {
            if den[k] > 1e-12 {
                self.values[k] += step * num[k] / den[k];
            }
        }
    }
}

/// Scalar-output ReLU network trained by momentum SGD or Adam.
#[derive(Debug, Clone)]
pub struct MlpApproximator {
    pub net: Mlp,
    state: OptimizerState,
    pub optimizer: Optimizer,
    /// Momentum coefficient, or Adam's first-moment decay.
    pub momentum: f64,
}

impl MlpApproximator {
    pub fn new(input: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_net(Mlp::new(&sizes, OutputActivation::Linear, rng))
    }

    pub fn from_net(net: Mlp) -> Self {
        let n = net.n_params();
        Self {
            net,
            state: OptimizerState::new(n),
            optimizer: Optimizer::Momentum,
            momentum: 0.9,
        }
    }

    /// Sets the output bias, e.g. to start from a pessimistic constant.
    pub fn set_output_bias(&mut self, v: f64) {
        let n = self.net.n_params();
        self.net.params_mut()[n - 1] = v;
    }
}

impl ScalarField for MlpApproximator {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn value(&self, x: &RealVec) -> f64 {
        self.net.forward(x.as_slice(), &[])[0]
    }

    fn gradient(&self, x: &RealVec) -> RealVec {
        let cache = self.net.forward_cached(x.as_slice(), &[]);
        let mut scratch = vec![0.0; self.net.n_params()];
        let (dx, _) = self.net.backward(&cache, &[1.0], &mut scratch);
        RealVec::from_vec(dx)
    }
}

impl FunctionApproximator for MlpApproximator {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn fit_step(&mut self, inputs: &[RealVec], targets: &[f64], step: f64) {
        let mut grad = vec![0.0; self.net.n_params()];
        let scale = 1.0 / inputs.len().max(1) as f64;
        for (x, y) in inputs.iter().zip(targets) {
            let cache = self.net.forward_cached(x.as_slice(), &[]);
            let resid = cache.output()[0] - y;
            self.net.backward(&cache, &[resid * scale], &mut grad);
        }
        self.state.step(self.optimizer, self.net.params_mut(), &grad, step, self.momentum);
    }

    fn soft_update(&mut self, local: &Self, mu: f64) {
        for (t, l) in self.net.params_mut().iter_mut().zip(local.net.params()) {
            *t = mu * l + (1.0 - mu) * *t;
        }
    }
}

/// `scale * inner(x)`; turns a per-step discrete value into a continuous-time one.
#[derive(Clone)]
pub struct ScaledField<F> {
    pub inner: F,
    pub scale: f64,
}

impl<F: ScalarField> ScalarField for ScaledField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &RealVec) -> f64 {
        self.scale * self.inner.value(x)
    }
    fn gradient(&self, x: &RealVec) -> RealVec {
        self.inner.gradient(x) * self.scale
    }
}

type FeatureFn = dyn Fn(&RealVec) -> RealVec + Send + Sync;
type JacobianFn = dyn Fn(&RealVec) -> RealMat + Send + Sync;

/// `inner(phi(x))` with gradient `J_phi(x)' grad inner`.
#[derive(Clone)]
pub struct FeatureMapped<F> {
    pub inner: F,
    state_dim: usize,
    features: Arc<FeatureFn>,
    jacobian: Arc<JacobianFn>,
}

impl<F: ScalarField> FeatureMapped<F> {
    pub fn new(
        inner: F,
        state_dim: usize,
        features: impl Fn(&RealVec) -> RealVec + Send + Sync + 'static,
        jacobian: impl Fn(&RealVec) -> RealMat + Send + Sync + 'static,
    ) -> Self {
        Self {
            inner,
            state_dim,
            features: Arc::new(features),
            jacobian: Arc::new(jacobian),
        }
    }
}

impl<F: ScalarField> ScalarField for FeatureMapped<F> {
    fn dim(&self) -> usize {
        self.state_dim
    }
    fn value(&self, x: &RealVec) -> f64 {
        self.inner.value(&(self.features)(x))
    }
    fn gradient(&self, x: &RealVec) -> RealVec {
        (self.jacobian)(x).transpose() * self.inner.gradient(&(self.features)(x))
    }
}

impl<F: FunctionApproximator> FunctionApproximator for FeatureMapped<F> {
    fn params(&self) -> &[f64] {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.inner.params_mut()
    }

    fn fit_step(&mut self, inputs: &[RealVec], targets: &[f64], step: f64) {
        let mapped: Vec<RealVec> = inputs.iter().map(|x| (self.features)(x)).collect();
        self.inner.fit_step(&mapped, targets, step);
    }
}
