//! Deterministic policy gradient with replay and soft target updates.
//!
//! Networks are trained by momentum SGD. When experiences carry a stored
//! halfspace `a'u <= c`, the actor loss adds a log-barrier extension of the
//! normalized violation `(a'u - c) / |a|`.

use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, OptimizerState, Optimizer, OutputActivation};
use crate::rng::Rng;

use super::{log_barrier_extension, log_barrier_slope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub minibatch: usize,
    pub soft_mu: f64,
    pub actor_step: f64,
    pub critic_step: f64,
    pub optimizer: Optimizer,
    /// Momentum coefficient, or Adam's first-moment decay.
    pub momentum: f64,
    /// Exploration noise standard deviation, decayed linearly over training.
    pub noise_start: f64,
    pub noise_end: f64,
    pub buffer_capacity: usize,
    /// Experiences collected before the first update.
    pub warmup: usize,
    /// Number of initial exploration actions drawn uniformly from `[-1, 1]`.
    pub random_actions: usize,
    pub barrier_t: f64,
    pub barrier_weight: f64,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            actor_hidden: vec![32, 24],
            critic_hidden: vec![32, 24],
            minibatch: 64,
            soft_mu: 1e-3,
            actor_step: 1e-3,
            critic_step: 1e-2,
            optimizer: Optimizer::Momentum,
            momentum: 0.9,
            noise_start: 0.2,
            noise_end: 0.02,
            buffer_capacity: 100_000,
            warmup: 256,
            random_actions: 0,
            barrier_t: 5.0,
            barrier_weight: 1.0,
            reward_scale: 0.01,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.gamma)
            && self.minibatch > 0
            && (0.0..=1.0).contains(&self.soft_mu)
            && self.actor_step >= 0.0
            && self.critic_step >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.noise_start >= 0.0
            && self.noise_end >= 0.0
            && self.buffer_capacity >= self.minibatch
            && self.barrier_t > 0.0
            && self.barrier_weight >= 0.0
            && !self.actor_hidden.is_empty()
            && self.critic_hidden.len() >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid actor-critic settings: {self:?}")))
        }
    }

    /// Noise level at training progress `frac` in `[0, 1]`.
    pub fn noise_at(&self, frac: f64) -> f64 {
        self.noise_start + (self.noise_end - self.noise_start) * frac.clamp(0.0, 1.0)
    }
}

/// Halfspace `a'u <= c` in control space, stored with an experience.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub a: Vec<f64>,
    pub c: f64,
}

impl ConstraintRecord {
    /// `(a'u - c) / |a|`, or `None` when `a` vanishes.
    pub fn normalized_violation(&self, u: &[f64]) -> Option<f64> {
        let norm = self.a.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 1e-12).then(|| (self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() - self.c) / norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Vec<f64>,
    pub u: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// No bootstrapping past this transition.
    pub done: bool,
    pub constraint: Option<ConstraintRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub barrier_penalty: f64,
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    pub cfg: DdpgConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    buffer: VecDeque<Experience>,
    pub updates: usize,
    explored: usize,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn soft_update(target: &mut Mlp, local: &Mlp, mu: f64) {
    for (t, l) in target.params_mut().iter_mut().zip(local.params()) {
        *t = mu * l + (1.0 - mu) * *t;
    }
}

impl Ddpg {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: DdpgConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let actor = Mlp::new(&sizes(obs_dim, &cfg.actor_hidden, act_dim), OutputActivation::Tanh, rng);
        Self::with_actor(actor, cfg, rng)
    }

    /// Starts from a given actor (e.g. a policy trained on another task) and a fresh critic.
    pub fn with_actor(actor: Mlp, cfg: DdpgConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let critic = Mlp::with_side_input(
            &sizes(actor.input_dim(), &cfg.critic_hidden, 1),
            1,
            actor.output_dim(),
            OutputActivation::Linear,
            rng,
        );
        Ok(Self {
            actor_opt: OptimizerState::new(actor.n_params()),
            critic_opt: OptimizerState::new(critic.n_params()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            buffer: VecDeque::with_capacity(cfg.buffer_capacity.min(1 << 16)),
            actor,
            critic,
            cfg,
            updates: 0,
            explored: 0,
        })
    }

    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.forward(obs, &[])
    }

    /// Policy output plus Gaussian noise, clipped to `[-1, 1]`; uniform for
    /// the first `random_actions` calls.
    pub fn act_noisy(&mut self, obs: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
        self.explored += 1;
        if self.explored <= self.cfg.random_actions {
            return (0..self.actor.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        let mut u = self.act(obs);
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("sigma is positive");
            for v in &mut u {
                *v = (*v + n.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        u
    }

    pub fn q(&self, obs: &[f64], u: &[f64]) -> f64 {
        self.critic.forward(obs, u)[0]
    }

    pub fn push(&mut self, e: Experience) {
        if self.buffer.len() == self.cfg.buffer_capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(e);
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Whether enough experience has been collected to start updating.
    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup.max(self.cfg.minibatch)
    }

    /// Copies local into target networks with weight `mu`.
    pub fn soft_update_targets(&mut self, mu: f64) {
        soft_update(&mut self.actor_target, &self.actor, mu);
        soft_update(&mut self.critic_target, &self.critic, mu);
    }

    /// One critic step and one actor step on a uniform minibatch.
    pub fn update(&mut self, rng: &mut Rng) -> Result<UpdateStats> {
        let n = self.cfg.minibatch;
        if self.buffer.len() < n {
            return Err(Error::EmptyPool {
                pool: "replay",
                requested: n,
            });
        }
        let batch: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.buffer.len())).collect();
        let inv = 1.0 / n as f64;

        let mut grad = vec![0.0; self.critic.n_params()];
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for &i in &batch {
            let e = &self.buffer[i];
            let mut y = self.cfg.reward_scale * e.reward;
            if !e.done {
                let u_next = self.actor_target.forward(&e.next_obs, &[]);
                y += self.cfg.gamma * self.critic_target.forward(&e.next_obs, &u_next)[0];
            }
            let cache = self.critic.forward_cached(&e.obs, &e.u);
            let q = cache.output()[0];
            let d = q - y;
            loss += d * d * inv;
            mean_q += q * inv;
            self.critic.backward(&cache, &[2.0 * d * inv], &mut grad);
        }
        if !loss.is_finite() || loss > 1e6 {
            return Err(Error::Divergence(format!(
                "critic loss {loss:e} after {} updates",
                self.updates
            )));
        }
        self.critic_opt
            .step(self.cfg.optimizer, self.critic.params_mut(), &grad, self.cfg.critic_step, self.cfg.momentum);

        let mut agrad = vec![0.0; self.actor.n_params()];
        let mut scratch = vec![0.0; self.critic.n_params()];
        let mut penalty = 0.0;
        for &i in &batch {
            let e = &self.buffer[i];
            let acache = self.actor.forward_cached(&e.obs, &[]);
            let u = acache.output().to_vec();
            let ccache = self.critic.forward_cached(&e.obs, &u);
            let (_, dq_du) = self.critic.backward(&ccache, &[1.0], &mut scratch);
            // minimize -Q + w * barrier
            let mut d_u: Vec<f64> = dq_du.iter().map(|g| -g * inv).collect();
            if let Some(rec) = &e.constraint {
                if let Some(z) = rec.normalized_violation(&u) {
                    let w = self.cfg.barrier_weight;
                    penalty += w * log_barrier_extension(z, self.cfg.barrier_t) * inv;
                    let norm = rec.a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let s = w * log_barrier_slope(z, self.cfg.barrier_t) * inv / norm;
                    for (d, a) in d_u.iter_mut().zip(&rec.a) {
                        *d += s * a;
                    }
                }
            }
            self.actor.backward(&acache, &d_u, &mut agrad);
        }
        self.actor_opt
            .step(self.cfg.optimizer, self.actor.params_mut(), &agrad, self.cfg.actor_step, self.cfg.momentum);
        if self.actor.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence("actor parameters became non-finite".into()));
        }
        self.soft_update_targets(self.cfg.soft_mu);
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: loss,
            mean_q,
            barrier_penalty: penalty,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn agent(cfg: DdpgConfig) -> Ddpg {
        Ddpg::new(2, 1, cfg, &mut stream(0, 0)).unwrap()
    }

    fn fill(a: &mut Ddpg, constraint: Option<ConstraintRecord>, rng: &mut Rng) {
        for _ in 0..200 {
            let obs = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            a.push(Experience {
                u: vec![rng.random_range(-1.0..1.0)],
                reward: -obs[0] * obs[0],
                next_obs: obs.iter().map(|v| v * 0.9).collect(),
                obs,
                done: false,
                constraint: constraint.clone(),
            });
        }
    }

    #[test]
    fn full_soft_update_copies() {
        let mut a = agent(DdpgConfig::default());
        a.actor.params_mut()[0] += 1.0;
        a.critic.params_mut()[3] -= 1.0;
        assert_ne!(a.actor, a.actor_target);
        a.soft_update_targets(1.0);
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic, a.critic_target);
    }

    #[test]
    fn slack_constraints_do_not_change_the_step() {
        // deep inside the feasible side the barrier slope is ~1/(t |z|)
        let cfg = DdpgConfig {
            barrier_weight: 1e-6,
            ..Default::default()
        };
        let mut rng = stream(1, 0);
        let mut plain = agent(cfg.clone());
        let mut constrained = agent(cfg);
        fill(&mut plain, None, &mut rng);
        let mut rng = stream(1, 0);
        fill(
            &mut constrained,
            Some(ConstraintRecord {
                a: vec![1.0],
                c: 1e3,
            }),
            &mut rng,
        );
        let (mut r1, mut r2) = (stream(2, 0), stream(2, 0));
        plain.update(&mut r1).unwrap();
        constrained.update(&mut r2).unwrap();
        let diff = plain
            .actor
            .params()
            .iter()
            .zip(constrained.actor.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn barrier_pushes_actions_into_the_halfspace() {
        let cfg = DdpgConfig {
            actor_step: 1e-2,
            critic_step: 0.0,
            barrier_weight: 1.0,
            ..Default::default()
        };
        let mut a = agent(cfg);
        let mut rng = stream(3, 0);
        fill(&mut a, Some(ConstraintRecord { a: vec![1.0], c: -0.5 }), &mut rng);
        for _ in 0..300 {
            a.update(&mut rng).unwrap();
        }
        let u = a.act(&[0.1, -0.2])[0];
        assert!(u < -0.5, "{u}");
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut a = agent(DdpgConfig::default());
            let mut rng = stream(4, 0);
            fill(&mut a, None, &mut rng);
            for _ in 0..20 {
                a.update(&mut rng).unwrap();
            }
            a.actor.params().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        let mut a = agent(DdpgConfig {
            reward_scale: 1e6,
            ..Default::default()
        });
        let mut rng = stream(5, 0);
        fill(&mut a, None, &mut rng);
        assert!(matches!(a.update(&mut rng), Err(Error::Divergence(_))));
    }
}
