//! Cart-pole tasks: balancing, learning a barrier from the balance policy, and
//! transferring the policy to moving the cart left.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::cartpole::{self, features, features_jacobian, CartPole, FeatureScaling};
use crate::error::{Error, Result};
use crate::filter::{filter_halfspace, ldcbf_halfspace};
use crate::nn::{Mlp, Optimizer};
use crate::rng::{stream, Rng};
use crate::system::{rk4_step, AlphaFn, Ldcbf, Polytope, RealMat, RealVec, ScalarField, StateBox};
use crate::value::{
    beta_from_gamma, collect_rollouts, extract_ldcbf, push_unsafe_states, refine_exit_points, sweep_grid_value,
    train_value, ExtractOptions, ExtractReport, FeatureMapped, GridApproximator, LearnedLdcbf, MlpApproximator,
    n_step_backup, Backup, RolloutConfig, ScaledField, TdConfig, TdReport,
};

use super::ddpg::{ConstraintRecord, Ddpg, DdpgConfig, Experience};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Balance,
    Move,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub dt: f64,
    pub steps: usize,
    /// Episode ends once `cos psi` drops below this.
    pub cos_threshold: f64,
    /// Episode ends once `|p|` exceeds this.
    pub p_threshold: f64,
    /// Initial angle is uniform on `[-init_psi, init_psi]`.
    pub init_psi: f64,
    pub scaling: FeatureScaling,
    /// Move task only: success requires the final position at or below this.
    pub success_p: f64,
}

impl TaskConfig {
    pub fn balance() -> Self {
        Self {
            kind: TaskKind::Balance,
            dt: 0.01,
            steps: 300,
            cos_threshold: 0.75,
            p_threshold: 1.8,
            init_psi: 0.2,
            scaling: FeatureScaling::Balance,
            success_p: 0.0,
        }
    }

    pub fn movement() -> Self {
        Self {
            kind: TaskKind::Move,
            dt: 0.01,
            steps: 300,
            cos_threshold: 0.75,
            p_threshold: 3.8,
            init_psi: 0.5,
            scaling: FeatureScaling::Unit,
            success_p: -1.8,
        }
    }

    /// Small random cart offset and velocities, uniform angle.
    pub fn reset(&self, rng: &mut Rng) -> RealVec {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let (pd, w) = (0.01 * n(), 0.01 * n());
        let p = rng.random_range(-0.1..0.1);
        let psi = if self.init_psi > 0.0 {
            rng.random_range(-self.init_psi..self.init_psi)
        } else {
            0.0
        };
        RealVec::from_vec(vec![p, pd, psi, w])
    }

    pub fn reward(&self, x: &RealVec) -> f64 {
        match self.kind {
            TaskKind::Balance => balance_reward(x),
            TaskKind::Move => cartpole::move_reward(x),
        }
    }

    pub fn failed(&self, x: &RealVec) -> bool {
        x[2].cos() < self.cos_threshold || x[0].abs() > self.p_threshold
    }
}

/// Upright, centered and slow: each factor is 1 at the goal.
pub fn balance_reward(x: &RealVec) -> f64 {
    let upright = (1.0 + x[2].cos()) / 2.0;
    let centered = (1.0 + cartpole::tolerance(x[0], 0.0, 0.0, 2.0)) / 2.0;
    let slow = (1.0 + cartpole::tolerance(x[3], 0.0, 0.0, 5.0)) / 2.0;
    upright * centered * slow
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub reward: f64,
    pub steps: usize,
    pub failed: bool,
    pub success: bool,
    pub mean_slack: f64,
    pub final_state: RealVec,
}

/// How a learned barrier takes part in an episode.
#[derive(Clone, Copy)]
pub struct Shield<'a> {
    pub barrier: &'a Ldcbf,
    /// Also project executed actions onto the admissible set.
    pub filter_actions: bool,
}

/// Runs one episode; with `learn`, experiences are stored and one update is made per step.
pub fn run_episode(
    cp: &CartPole,
    task: &TaskConfig,
    agent: &mut Ddpg,
    sigma: f64,
    learn: bool,
    shield: Option<Shield<'_>>,
    rng: &mut Rng,
) -> Result<EpisodeStats> {
    let set = Polytope::cube(1, 1.0)?;
    let mut x = task.reset(rng);
    let mut reward = 0.0;
    let mut slack = 0.0;
    let mut steps = 0;
    let mut failed = false;
    for _ in 0..task.steps {
        let obs = features(&x, task.scaling);
        let mut u = if learn {
            agent.act_noisy(obs.as_slice(), sigma, rng)
        } else {
            agent.act(obs.as_slice())
        };
        let mut constraint = None;
        if let Some(s) = shield {
            let h = ldcbf_halfspace(s.barrier, cp, &x);
            if s.filter_actions {
                let r = filter_halfspace(&h, &RealVec::from_vec(u.clone()), &set)?;
                slack += r.slack;
                u = r.u.as_slice().to_vec();
            }
            constraint = Some(ConstraintRecord {
                a: h.a.as_slice().to_vec(),
                c: h.c,
            });
        }
        let x_next = rk4_step(cp, &x, &RealVec::from_vec(u.clone()), task.dt);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                index: steps,
                context: "cart-pole state became non-finite".into(),
            });
        }
        let r = task.reward(&x_next);
        failed = task.failed(&x_next);
        reward += r;
        steps += 1;
        if learn {
            agent.push(Experience {
                obs: obs.as_slice().to_vec(),
                u,
                reward: r,
                next_obs: features(&x_next, task.scaling).as_slice().to_vec(),
                done: failed,
                constraint,
            });
            if agent.ready() {
                agent.update(rng)?;
            }
        }
        x = x_next;
        if failed {
            break;
        }
    }
    let success = !failed
        && match task.kind {
            TaskKind::Balance => true,
            TaskKind::Move => x[0] <= task.success_p,
        };
    Ok(EpisodeStats {
        reward,
        steps,
        failed,
        success,
        mean_slack: slack / steps.max(1) as f64,
        final_state: x,
    })
}

/// Trains on the balance task; returns the agent and per-episode training stats.
pub fn train_balance(cp: &CartPole, task: &TaskConfig, cfg: DdpgConfig, episodes: usize, seed: u64) -> Result<(Ddpg, Vec<EpisodeStats>)> {
    let mut rng = stream(seed, 0);
    let mut agent = Ddpg::new(3, 1, cfg, &mut rng)?;
    let mut stats = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let sigma = agent.cfg.noise_at(ep as f64 / episodes.max(2).saturating_sub(1) as f64);
        stats.push(run_episode(cp, task, &mut agent, sigma, true, None, &mut rng)?);
    }
    Ok((agent, stats))
}

/// Deterministic policy on state vectors, from an actor on scaled features.
pub fn actor_policy(actor: &Mlp, scaling: FeatureScaling) -> impl Fn(&RealVec) -> RealVec + Send + Sync + Clone {
    let actor = actor.clone();
    move |x: &RealVec| RealVec::from_vec(actor.forward(features(x, scaling).as_slice(), &[]))
}

/// Time until `cos psi < 0.2`, capped at `seconds`.
pub fn pole_duration(
    cp: &CartPole,
    x0: &RealVec,
    dt: f64,
    seconds: f64,
    mut control: impl FnMut(&RealVec) -> Result<RealVec>,
) -> Result<f64> {
    let steps = (seconds / dt).round() as usize;
    let mut x = x0.clone();
    for k in 0..steps {
        if !cartpole::pole_up(&x, 0.2) {
            return Ok(k as f64 * dt);
        }
        let u = control(&x)?;
        x = rk4_step(cp, &x, &u, dt);
    }
    Ok(if cartpole::pole_up(&x, 0.2) { seconds } else { steps as f64 * dt })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierLearnConfig {
    pub gamma: f64,
    pub dt: f64,
    pub episodes: usize,
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub iters: usize,
    pub step: f64,
    pub optimizer: Optimizer,
    pub approximator: ValueApproximator,
    /// Grid nodes along `(psi, p_dot, psi_dot)`.
    pub grid_nodes: Vec<usize>,
    /// Policy steps per grid backup; longer backups blur the value less.
    pub grid_backup_steps: usize,
    pub grid_sweeps: usize,
    /// Sweeps stop once no normalized node value moves by more than this.
    pub grid_tol: f64,
    pub soft_mu: f64,
    pub minibatch: usize,
    pub pos_per_batch: usize,
    /// Cost inside / outside the safe set `{cos psi >= 0.2}`.
    pub cost_in: f64,
    pub cost_out: f64,
    pub init_psi: f64,
    /// Multipliers on standard normal cart and pole velocities at episode start.
    pub init_p_dot_scale: f64,
    pub init_psi_dot_scale: f64,
    /// Uniform draws from each side of the safe set for the offset and `L` estimates.
    pub extra_samples: usize,
    /// Whether the uniform unsafe draws enter the `L` estimate (rollout exits always do).
    pub l_from_draws: bool,
    /// Fraction of safe samples on which the shifted immediate cost must be nonnegative.
    pub c_coverage: f64,
    pub p_dot_range: f64,
    pub psi_dot_range: f64,
}

impl Default for BarrierLearnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            dt: 0.01,
            episodes: 200,
            steps: 50,
            hidden: vec![32, 24],
            iters: 20_000,
            step: 1e-2,
            optimizer: Optimizer::Momentum,
            approximator: ValueApproximator::Grid,
            grid_nodes: vec![11, 7, 13],
            grid_backup_steps: 50,
            grid_sweeps: 20_000,
            grid_tol: 1e-7,
            soft_mu: 1e-2,
            minibatch: 64,
            pos_per_batch: 4,
            cost_in: 0.1,
            cost_out: 1.0,
            init_psi: 1.5,
            init_p_dot_scale: 1.0,
            init_psi_dot_scale: 2.0,
            extra_samples: 10_000,
            l_from_draws: false,
            c_coverage: 0.5,
            p_dot_range: 3.0,
            psi_dot_range: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueApproximator {
    /// Network on the unit features trained by minibatch TD.
    Mlp,
    /// Multilinear grid over `(psi, p_dot, psi_dot)` trained by full-batch
    /// sweeps on one multi-step backup per grid node.
    Grid,
}

#[derive(Debug, Clone)]
pub struct BarrierLearnReport {
    pub td: TdReport,
    pub extract: ExtractReport,
    pub transitions: usize,
    pub exits: usize,
}

/// Learns a barrier for `{cos psi >= 0.2}` from the value of `policy`.
///
/// The network is fitted on the unit-scaled features to the discrete value
/// times `1 - gamma`, so its targets lie in `[0, cost_out]`; the continuous-time
/// value is that output times `dt / (1 - gamma)`.
pub fn learn_barrier(
    cp: &CartPole,
    policy: &(dyn Fn(&RealVec) -> RealVec + Sync),
    cfg: &BarrierLearnConfig,
    horizon: f64,
    alpha: AlphaFn,
    seed: u64,
) -> Result<(LearnedLdcbf, BarrierLearnReport)> {
    let fit = fit_barrier_value(cp, policy, cfg, seed)?;
    let opts = ExtractOptions {
        beta: fit.beta,
        horizon,
        alpha,
        c_margin: None,
        c_coverage: cfg.c_coverage,
        delta: 0.0,
    };
    let unsafe_samples = if cfg.l_from_draws {
        &fit.unsafe_samples[..]
    } else {
        &fit.unsafe_samples[..fit.exits]
    };
    let (learned, extract) = extract_ldcbf(fit.value.clone(), cp, policy, &fit.safe_samples, unsafe_samples, &opts)?;
    Ok((
        learned,
        BarrierLearnReport {
            td: fit.td,
            extract,
            transitions: fit.transitions,
            exits: fit.exits,
        },
    ))
}

/// Continuous-time value estimate plus the samples used for extraction.
#[derive(Clone)]
pub struct BarrierValueFit {
    pub value: Arc<dyn ScalarField>,
    pub beta: f64,
    pub safe_samples: Vec<RealVec>,
    /// Refined rollout exits first (`exits` of them), then uniform draws.
    pub unsafe_samples: Vec<RealVec>,
    pub td: TdReport,
    pub transitions: usize,
    pub exits: usize,
}

/// The value-fitting half of [`learn_barrier`].
pub fn fit_barrier_value(
    cp: &CartPole,
    policy: &(dyn Fn(&RealVec) -> RealVec + Sync),
    cfg: &BarrierLearnConfig,
    seed: u64,
) -> Result<BarrierValueFit> {
    let norm = 1.0 - cfg.gamma;
    let safe = |x: &RealVec| cartpole::pole_up(x, 0.2);
    let cost = |x: &RealVec| norm * if safe(x) { cfg.cost_in } else { cfg.cost_out };
    let mut init = |rng: &mut Rng| {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let (pd, w) = (cfg.init_p_dot_scale * n(), cfg.init_psi_dot_scale * n());
        let p = rng.random_range(-0.1..0.1);
        RealVec::from_vec(vec![p, pd, rng.random_range(-cfg.init_psi..cfg.init_psi), w])
    };
    let rollout = RolloutConfig {
        dt: cfg.dt,
        steps: cfg.steps,
        episodes: cfg.episodes,
        seed,
        pos_capacity: cfg.episodes * cfg.steps,
        neg_capacity: cfg.episodes + cfg.extra_samples,
    };
    let mut buffer = collect_rollouts(cp, &mut |x, _| policy(x), &mut init, &cost, &safe, &rollout)?;
    let exits: Vec<RealVec> = {
        let neg: Vec<_> = buffer.negative().iter().collect();
        refine_exit_points(&neg, &safe, 40)
    };

    let mut rng = stream(seed, u64::MAX);
    let psi_edge = 0.2f64.acos();
    let draw = |unsafe_side: bool, rng: &mut Rng| {
        let psi = if unsafe_side {
            let m = rng.random_range(psi_edge..std::f64::consts::FRAC_PI_2);
            if rng.random_bool(0.5) { m } else { -m }
        } else {
            rng.random_range(-psi_edge..psi_edge)
        };
        RealVec::from_vec(vec![
            0.0,
            rng.random_range(-cfg.p_dot_range..cfg.p_dot_range),
            psi,
            rng.random_range(-cfg.psi_dot_range..cfg.psi_dot_range),
        ])
    };
    let unsafe_draws: Vec<RealVec> = (0..cfg.extra_samples).map(|_| draw(true, &mut rng)).collect();
    let safe_draws: Vec<RealVec> = (0..cfg.extra_samples).map(|_| draw(false, &mut rng)).collect();
    push_unsafe_states(&mut buffer, &unsafe_draws, norm * cfg.cost_out, 1);

    let cost_cap = norm * cfg.cost_out;
    let (inner, td): (Arc<dyn ScalarField>, TdReport) = match cfg.approximator {
        ValueApproximator::Mlp => {
            let mut net = MlpApproximator::new(3, &cfg.hidden, &mut rng);
            net.optimizer = cfg.optimizer;
            let mut local = FeatureMapped::new(
                net,
                4,
                |x| features(x, FeatureScaling::Unit),
                |x| features_jacobian(x, FeatureScaling::Unit),
            );
            local.inner.set_output_bias(cfg.cost_in);
            let mut target = local.clone();
            let td_cfg = TdConfig {
                gamma: cfg.gamma,
                cost_cap,
                minibatch: cfg.minibatch,
                pos_per_batch: cfg.pos_per_batch,
                soft_mu: cfg.soft_mu,
                iters: cfg.iters,
                step: cfg.step,
                residual_tol: None,
            };
            let td = train_value(&buffer, &mut local, &mut target, &td_cfg, &mut rng)?;
            (Arc::new(local), td)
        }
        ValueApproximator::Grid => {
            let (grid, td) = fit_grid(cp, policy, cfg, cost_cap)?;
            (Arc::new(grid), td)
        }
    };

    let mut safe_samples: Vec<RealVec> = buffer.positive().iter().map(|t| t.x.clone()).collect();
    safe_samples.extend(safe_draws);
    let mut unsafe_samples = exits;
    unsafe_samples.extend(unsafe_draws);
    let v: Arc<dyn ScalarField> = Arc::new(ScaledField {
        inner,
        scale: cfg.dt / norm,
    });
    Ok(BarrierValueFit {
        value: v,
        beta: beta_from_gamma(cfg.gamma, cfg.dt),
        exits: unsafe_samples.len() - cfg.extra_samples,
        safe_samples,
        unsafe_samples,
        td,
        transitions: buffer.len(),
    })
}

/// `(psi, p_dot, psi_dot)`: the value of a policy that ignores `p` depends on nothing else.
fn grid_coords(x: &RealVec) -> RealVec {
    RealVec::from_vec(vec![x[2], x[1], x[3]])
}

fn grid_coords_jacobian(_: &RealVec) -> RealMat {
    let mut j = RealMat::zeros(3, 4);
    j[(0, 2)] = 1.0;
    j[(1, 1)] = 1.0;
    j[(2, 3)] = 1.0;
    j
}

fn fit_grid(
    cp: &CartPole,
    policy: &(dyn Fn(&RealVec) -> RealVec + Sync),
    cfg: &BarrierLearnConfig,
    cost_cap: f64,
) -> Result<(FeatureMapped<GridApproximator>, TdReport)> {
    if cfg.grid_nodes.len() != 3 || cfg.grid_nodes.iter().any(|n| *n < 2) {
        return Err(Error::Config("grid_nodes needs three counts of at least 2".into()));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let domain = StateBox::new(
        vec![-half_pi, -cfg.p_dot_range, -cfg.psi_dot_range],
        vec![half_pi, cfg.p_dot_range, cfg.psi_dot_range],
    )?;
    let mut grid = GridApproximator::new(&domain, &cfg.grid_nodes, cost_cap / (1.0 - cfg.gamma));
    let norm = 1.0 - cfg.gamma;
    let safe = |x: &RealVec| cartpole::pole_up(x, 0.2);
    let cost = |x: &RealVec| norm * if safe(x) { cfg.cost_in } else { cfg.cost_out };
    let backups: Vec<Backup> = (0..grid.n_nodes())
        .map(|k| {
            let c = grid.node(k);
            let x = RealVec::from_vec(vec![0.0, c[1], c[0], c[2]]);
            n_step_backup(cp, policy, &cost, &safe, &x, cfg.grid_backup_steps, cfg.dt, cfg.gamma)
        })
        .collect();
    let td = sweep_grid_value(&mut grid, &backups, &grid_coords, cfg.gamma, cost_cap, cfg.grid_sweeps, cfg.grid_tol)?;
    Ok((FeatureMapped::new(grid, 4, grid_coords, grid_coords_jacobian), td))
}

/// Nominal controls for the filtered-duration test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nominal {
    /// Uniform on `[-1, 1]` at every step.
    Random,
    Constant(f64),
}

/// Mean time the pole stays up under a barrier-filtered nominal policy.
pub fn filtered_durations(
    cp: &CartPole,
    barrier: &Ldcbf,
    nominal: Nominal,
    task: &TaskConfig,
    trials: usize,
    seconds: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let set = Polytope::cube(1, 1.0)?;
    (0..trials)
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let x0 = task.reset(&mut rng);
            pole_duration(cp, &x0, task.dt, seconds, |x| {
                let u_nom = match nominal {
                    Nominal::Random => rng.random_range(-1.0..1.0),
                    Nominal::Constant(c) => c,
                };
                let h = ldcbf_halfspace(barrier, cp, x);
                Ok(filter_halfspace(&h, &RealVec::from_element(1, u_nom), &set)?.u)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoveConfig {
    pub episodes: usize,
    pub trials: usize,
    pub ddpg: DdpgConfig,
    /// Whether the barrier also filters executed actions (besides the actor penalty).
    pub filter_actions: bool,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self {
            episodes: 15,
            trials: 10,
            ddpg: DdpgConfig {
                gamma: 0.999,
                warmup: 64,
                ..DdpgConfig::default()
            },
            filter_actions: false,
        }
    }
}

/// Evaluation episode of the deterministic policy after each training episode, per trial.
///
/// The balance actor is reused by rescaling its velocity inputs to the unit features.
pub fn run_move_task(
    cp: &CartPole,
    balance_actor: &Mlp,
    barrier: Option<&Ldcbf>,
    cfg: &MoveConfig,
    seed: u64,
) -> Result<Vec<Vec<EpisodeStats>>> {
    let task = TaskConfig::movement();
    let mut actor = balance_actor.clone();
    let k = FeatureScaling::Balance.factor() / FeatureScaling::Unit.factor();
    actor.scale_input_column(1, k);
    actor.scale_input_column(2, k);
    (0..cfg.trials)
        .map(|trial| {
            let mut rng = stream(seed, trial as u64);
            let mut agent = Ddpg::with_actor(actor.clone(), cfg.ddpg.clone(), &mut rng)?;
            let shield = barrier.map(|b| Shield {
                barrier: b,
                filter_actions: cfg.filter_actions,
            });
            let mut eval_rng = stream(seed ^ 0x5eed, trial as u64);
            (0..cfg.episodes)
                .map(|ep| {
                    let sigma = agent.cfg.noise_at(ep as f64 / cfg.episodes.max(2).saturating_sub(1) as f64);
                    run_episode(cp, &task, &mut agent, sigma, true, shield, &mut rng)?;
                    run_episode(cp, &task, &mut agent, 0.0, false, shield, &mut eval_rng)
                })
                .collect()
        })
        .collect()
}

/// Fraction of trials succeeding at each episode.
pub fn success_rates(table: &[Vec<EpisodeStats>]) -> Vec<f64> {
    let episodes = table.iter().map(Vec::len).min().unwrap_or(0);
    (0..episodes)
        .map(|e| table.iter().filter(|t| t[e].success).count() as f64 / table.len() as f64)
        .collect()
}

/// Actor-critic settings for the balance task of the full pipeline.
pub fn balance_ddpg() -> DdpgConfig {
    DdpgConfig {
        optimizer: Optimizer::Adam,
        actor_step: 1e-3,
        critic_step: 1e-3,
        soft_mu: 5e-3,
        ..DdpgConfig::default()
    }
}

/// Balance training, barrier learning and the filtered-duration test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub balance_task: TaskConfig,
    pub balance_ddpg: DdpgConfig,
    pub balance_episodes: usize,
    pub balance_seed: u64,
    pub barrier: BarrierLearnConfig,
    pub barrier_seed: u64,
    pub horizon: f64,
    pub alpha_slope: f64,
    /// Slope of the comparison run, expected to end sooner.
    pub steep_slope: f64,
    pub constant_u: f64,
    pub trials: usize,
    pub seconds: f64,
    pub duration_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            balance_task: TaskConfig::balance(),
            balance_ddpg: balance_ddpg(),
            balance_episodes: 300,
            balance_seed: 14,
            barrier: BarrierLearnConfig::default(),
            barrier_seed: 10,
            horizon: 5.0,
            alpha_slope: 0.1,
            steep_slope: 3.0,
            constant_u: 1.0,
            trials: 10,
            seconds: 10.0,
            duration_seed: 5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.balance_ddpg.validate()?;
        let ok = self.balance_episodes > 0
            && self.horizon > 0.0
            && self.alpha_slope > 0.0
            && self.steep_slope > 0.0
            && self.trials > 0
            && self.seconds > 0.0
            && (-1.0..=1.0).contains(&self.constant_u)
            && self.barrier.gamma > 0.0
            && self.barrier.gamma < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid cart-pole pipeline settings".into()))
        }
    }
}

/// Filtered durations for the random, constant and steep-slope random policies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationSuite {
    pub random: Vec<f64>,
    pub constant: Vec<f64>,
    pub steep: Vec<f64>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl DurationSuite {
    /// Random at least `horizon`, constant at least `0.8 horizon`, steep strictly shorter.
    pub fn passes(&self, horizon: f64) -> bool {
        mean(&self.random) >= horizon && mean(&self.constant) >= 0.8 * horizon && mean(&self.steep) < mean(&self.random)
    }
}

pub struct PipelineOutput {
    pub actor: Mlp,
    pub balance: Vec<EpisodeStats>,
    pub learned: LearnedLdcbf,
    pub report: BarrierLearnReport,
    pub durations: DurationSuite,
}

pub fn train_balance_actor(cp: &CartPole, cfg: &PipelineConfig) -> Result<(Mlp, Vec<EpisodeStats>)> {
    let (agent, stats) = train_balance(cp, &cfg.balance_task, cfg.balance_ddpg.clone(), cfg.balance_episodes, cfg.balance_seed)?;
    Ok((agent.actor, stats))
}

/// Learns the barrier for a trained actor and measures filtered durations.
pub fn barrier_for_actor(cp: &CartPole, actor: &Mlp, cfg: &PipelineConfig) -> Result<(LearnedLdcbf, BarrierLearnReport, DurationSuite)> {
    let policy = actor_policy(actor, cfg.balance_task.scaling);
    let (learned, report) = learn_barrier(cp, &policy, &cfg.barrier, cfg.horizon, AlphaFn::new(cfg.alpha_slope)?, cfg.barrier_seed)?;
    let ld = learned.to_ldcbf();
    let steep = ld.with_alpha(AlphaFn::new(cfg.steep_slope)?);
    let run = |b: &Ldcbf, nominal| filtered_durations(cp, b, nominal, &cfg.balance_task, cfg.trials, cfg.seconds, cfg.duration_seed);
    let durations = DurationSuite {
        random: run(&ld, Nominal::Random)?,
        constant: run(&ld, Nominal::Constant(cfg.constant_u))?,
        steep: run(&steep, Nominal::Random)?,
    };
    Ok((learned, report, durations))
}

pub fn run_pipeline(cp: &CartPole, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (actor, balance) = train_balance_actor(cp, cfg)?;
    let (learned, report, durations) = barrier_for_actor(cp, &actor, cfg)?;
    Ok(PipelineOutput {
        actor,
        balance,
        learned,
        report,
        durations,
    })
}
