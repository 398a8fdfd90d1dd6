//! Small fully connected ReLU networks with hand-written backprop.
//!
//! Parameters live in one flat vector (per layer: weights row-major, then
//! biases) so that optimizers, soft updates and checkpoints treat every
//! approximator the same way.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    inp: usize,
    out: usize,
    offset: usize,
}

/// Serializes as a checkpoint of shape and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    /// `(layer, dim)`: an extra input concatenated to the input of `layer`.
    side: Option<(usize, usize)>,
    output: OutputActivation,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Momentum,
    Adam,
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descent step on `grad`.
    pub fn step(&mut self, kind: Optimizer, params: &mut [f64], grad: &[f64], step: f64, momentum: f64) {
        match kind {
            Optimizer::Momentum => {
                for ((p, m), g) in params.iter_mut().zip(self.m.iter_mut()).zip(grad) {
                    *m = momentum * *m + g;
                    *p -= step * *m;
                }
            }
            Optimizer::Adam => {
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - momentum.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for (((p, m), v), g) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()).zip(grad) {
                    *m = momentum * *m + (1.0 - momentum) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= step * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// Intermediate activations from [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each layer (including any side input), then the final output.
    inputs: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds the output")
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut Rng) -> Self {
        Self::build(sizes, None, output, rng)
    }

    /// Network whose layer `layer` (>= 1) also receives a `dim`-vector side input.
    pub fn with_side_input(sizes: &[usize], layer: usize, dim: usize, output: OutputActivation, rng: &mut Rng) -> Self {
        assert!(layer >= 1 && layer < sizes.len() - 1, "side input must feed a layer after the first");
        Self::build(sizes, Some((layer, dim)), output, rng)
    }

    fn build(sizes: &[usize], side: Option<(usize, usize)>, output: OutputActivation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0));
        let mut layers = Vec::new();
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let extra = match side {
                Some((k, d)) if k == l => d,
                _ => 0,
            };
            let inp = sizes[l] + extra;
            let out = sizes[l + 1];
            layers.push(Layer { inp, out, offset });
            offset += inp * out + out;
        }
        let mut params = vec![0.0; offset];
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let bound = if l == last { 3e-3 } else { 1.0 / (layer.inp as f64).sqrt() };
            for p in &mut params[layer.offset..layer.offset + layer.inp * layer.out + layer.out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self {
            sizes: sizes.to_vec(),
            layers,
            side,
            output,
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn side_dim(&self) -> usize {
        self.side.map_or(0, |(_, d)| d)
    }

    pub fn side_layer(&self) -> Option<usize> {
        self.side.map(|(l, _)| l)
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scales the first-layer weights attached to input coordinate `i`.
    pub fn scale_input_column(&mut self, i: usize, factor: f64) {
        let l = self.layers[0];
        for r in 0..l.out {
            self.params[l.offset + r * l.inp + i] *= factor;
        }
    }

    pub fn forward(&self, x: &[f64], side: &[f64]) -> Vec<f64> {
        self.forward_cached(x, side).inputs.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64], side: &[f64]) -> Cache {
        debug_assert_eq!(x.len(), self.input_dim());
        debug_assert_eq!(side.len(), self.side_dim());
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if matches!(self.side, Some((k, _)) if k == l) {
                h.extend_from_slice(side);
            }
            let w = &self.params[layer.offset..layer.offset + layer.inp * layer.out];
            let b = &self.params[layer.offset + layer.inp * layer.out..layer.offset + layer.inp * layer.out + layer.out];
            let mut z = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * layer.inp..(r + 1) * layer.inp];
                *zr += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if l < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            } else if self.output == OutputActivation::Tanh {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        inputs.push(h);
        Cache { inputs }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the network output), adding the
    /// parameter gradient into `grad` and returning `(d_input, d_side)`.
    pub fn backward(&self, cache: &Cache, d_out: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let out = cache.output();
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Linear => d_out.to_vec(),
            OutputActivation::Tanh => d_out.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect(),
        };
        let mut d_side = Vec::new();
        for l in (0..=last).rev() {
            let layer = self.layers[l];
            let input = &cache.inputs[l];
            let wo = layer.offset;
            let bo = layer.offset + layer.inp * layer.out;
            let mut d_in = vec![0.0; layer.inp];
            for r in 0..layer.out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grad[bo + r] += d;
                let row = wo + r * layer.inp;
                for c in 0..layer.inp {
                    grad[row + c] += d * input[c];
                    d_in[c] += d * self.params[row + c];
                }
            }
            if matches!(self.side, Some((k, _)) if k == l) {
                d_side = d_in.split_off(self.sizes[l]);
            }
            if l > 0 {
                // input to layer l is the ReLU output of layer l-1
                for (d, a) in d_in.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        (delta, d_side)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fd_check(net: &mut Mlp, x: &[f64], side: &[f64]) -> f64 {
        let cache = net.forward_cached(x, side);
        let mut grad = vec![0.0; net.n_params()];
        let (dx, ds) = net.backward(&cache, &[1.0], &mut grad);
        let h = 1e-6;
        let mut worst = 0.0f64;
        let rel = |a: f64, b: f64| (a - b).abs() / (1e-6 + a.abs().max(b.abs()));
        for i in 0..net.n_params() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.forward(x, side)[0];
            net.params[i] = orig - h;
            let down = net.forward(x, side)[0];
            net.params[i] = orig;
            worst = worst.max(rel(grad[i], (up - down) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let up = net.forward(&xp, side)[0];
            xp[i] -= 2.0 * h;
            let down = net.forward(&xp, side)[0];
            worst = worst.max(rel(dx[i], (up - down) / (2.0 * h)));
        }
        for i in 0..side.len() {
            let mut sp = side.to_vec();
            sp[i] += h;
            let up = net.forward(x, &sp)[0];
            sp[i] -= 2.0 * h;
            let down = net.forward(x, &sp)[0];
            worst = worst.max(rel(ds[i], (up - down) / (2.0 * h)));
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = stream(3, 0);
        for trial in 0..20 {
            let mut plain = Mlp::new(&[3, 8, 6, 1], OutputActivation::Linear, &mut rng);
            let mut squashed = Mlp::new(&[3, 5, 1], OutputActivation::Tanh, &mut rng);
            let mut critic = Mlp::with_side_input(&[3, 8, 6, 1], 1, 1, OutputActivation::Linear, &mut rng);
            // larger output weights so the checks are not dominated by tiny values
            for net in [&mut plain, &mut squashed, &mut critic] {
                for p in net.params_mut() {
                    *p *= 3.0;
                }
            }
            let x = [0.1 * trial as f64 - 1.0, 0.3, -0.2];
            assert!(fd_check(&mut plain, &x, &[]) < 1e-3);
            assert!(fd_check(&mut squashed, &x, &[]) < 1e-3);
            assert!(fd_check(&mut critic, &x, &[0.4]) < 1e-3);
        }
    }

    #[test]
    fn side_input_changes_output() {
        let mut rng = stream(4, 0);
        let net = Mlp::with_side_input(&[2, 4, 4, 1], 1, 1, OutputActivation::Linear, &mut rng);
        assert_eq!(net.n_params(), (2 * 4 + 4) + (5 * 4 + 4) + (4 + 1));
        let a = net.forward(&[0.5, 0.5], &[0.0]);
        let b = net.forward(&[0.5, 0.5], &[1.0]);
        assert_ne!(a, b);
    }

    #[test]
    fn column_scaling() {
        let mut rng = stream(5, 0);
        let mut net = Mlp::new(&[2, 3, 1], OutputActivation::Linear, &mut rng);
        let before = net.forward(&[0.0, 2.0], &[]);
        net.scale_input_column(1, 0.5);
        let after = net.forward(&[0.0, 4.0], &[]);
        assert!((before[0] - after[0]).abs() < 1e-12);
    }
}
