use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::system::{rk4_step, ControlAffine, RealVec, ScalarField};

use super::{FunctionApproximator, GridApproximator, ReplayBuffer, Transition};

/// `cost + gamma V(x')` for a safe successor, `L / (1 - gamma)` otherwise.
pub fn td_target(tr: &Transition, gamma: f64, cost_cap: f64, v_target: &dyn ScalarField) -> f64 {
    if tr.next_safe {
        tr.cost + gamma * v_target.value(&tr.x_next)
    } else {
        cost_cap / (1.0 - gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdConfig {
    pub gamma: f64,
    /// `L`; the per-step cost outside the safe set.
    pub cost_cap: f64,
    pub minibatch: usize,
    /// Draws from the positive (stays safe) pool; the rest come from the negative pool.
    pub pos_per_batch: usize,
    pub soft_mu: f64,
    pub iters: usize,
    pub step: f64,
    /// Stop early once the mean TD residual over the buffer drops below this.
    pub residual_tol: Option<f64>,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            cost_cap: 1.0,
            minibatch: 64,
            pos_per_batch: 4,
            soft_mu: 0.01,
            iters: 10_000,
            step: 1e-3,
            residual_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdReport {
    pub iterations: usize,
    /// Mean `|target(local) - local(x)|` over the whole buffer at exit.
    pub final_residual: f64,
}

/// Mean absolute TD error of `v` against its own targets.
pub fn mean_td_residual(buffer: &ReplayBuffer, v: &dyn ScalarField, gamma: f64, cost_cap: f64) -> f64 {
    let n = buffer.len().max(1) as f64;
    buffer
        .iter()
        .map(|tr| (td_target(tr, gamma, cost_cap, v) - v.value(&tr.x)).abs())
        .sum::<f64>()
        / n
}

/// Fits `local` with minibatch TD(0) against a soft-updated `target`.
pub fn train_value<A: FunctionApproximator>(
    buffer: &ReplayBuffer,
    local: &mut A,
    target: &mut A,
    cfg: &TdConfig,
    rng: &mut Rng,
) -> Result<TdReport> {
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::InvalidProblem(format!("gamma must be in (0,1), got {}", cfg.gamma)));
    }
    if cfg.pos_per_batch > cfg.minibatch {
        return Err(Error::InvalidProblem("positive quota exceeds minibatch".into()));
    }
    let n_neg = cfg.minibatch - cfg.pos_per_batch;
    let mut iterations = 0;
    for it in 0..cfg.iters {
        let batch = buffer.sample(cfg.pos_per_batch, n_neg, rng)?;
        let inputs: Vec<RealVec> = batch.iter().map(|t| t.x.clone()).collect();
        let targets: Vec<f64> = batch.iter().map(|t| td_target(t, cfg.gamma, cfg.cost_cap, &*target)).collect();
        local.fit_step(&inputs, &targets, cfg.step);
        target.soft_update(local, cfg.soft_mu);
        iterations = it + 1;
        if let Some(bad) = local.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::Divergence(format!("parameter {bad} became non-finite at iteration {it}")));
        }
        if let Some(tol) = cfg.residual_tol {
            if iterations % 100 == 0 && mean_td_residual(buffer, &*local, cfg.gamma, cfg.cost_cap) < tol {
                break;
            }
        }
    }
    Ok(TdReport {
        iterations,
        final_residual: mean_td_residual(buffer, &*local, cfg.gamma, cfg.cost_cap),
    })
}

/// Discounted cost over a stretch of steps followed by a bootstrap (or the
/// frozen-outside tail when the stretch left the safe set).
#[derive(Debug, Clone, PartialEq)]
pub struct Backup {
    pub x: RealVec,
    pub cost: f64,
    /// State to bootstrap from; `None` once the safe set was left.
    pub next: Option<RealVec>,
    /// Weight on the bootstrap value, or on `L / (1 - gamma)` after an exit.
    pub discount: f64,
}

impl Backup {
    pub fn from_transition(t: &Transition, gamma: f64) -> Self {
        if t.next_safe {
            Self {
                x: t.x.clone(),
                cost: t.cost,
                next: Some(t.x_next.clone()),
                discount: gamma,
            }
        } else {
            Self {
                x: t.x.clone(),
                cost: 0.0,
                next: None,
                discount: 1.0,
            }
        }
    }

    /// Target against `v`; an exit pays `cost_cap / (1 - gamma)` from then on.
    pub fn target(&self, v: &dyn ScalarField, gamma: f64, cost_cap: f64) -> f64 {
        match &self.next {
            Some(x) => self.cost + self.discount * v.value(x),
            None => self.cost + self.discount * cost_cap / (1.0 - gamma),
        }
    }
}

/// Rolls `policy` from `x` for up to `n` steps, stopping at the first unsafe state.
///
/// As in the one-step target, the step that exits is charged the tail
/// `L / (1 - gamma)` in place of its own cost.
#[allow(clippy::too_many_arguments)]
pub fn n_step_backup(
    model: &dyn ControlAffine,
    policy: &dyn Fn(&RealVec) -> RealVec,
    cost: &dyn Fn(&RealVec) -> f64,
    safe: &dyn Fn(&RealVec) -> bool,
    x: &RealVec,
    n: usize,
    dt: f64,
    gamma: f64,
) -> Backup {
    let start = x.clone();
    if !safe(x) {
        return Backup {
            x: start,
            cost: 0.0,
            next: None,
            discount: 1.0,
        };
    }
    let mut x = x.clone();
    let (mut acc, mut disc) = (0.0, 1.0);
    for _ in 0..n {
        let c = cost(&x);
        x = rk4_step(model, &x, &policy(&x), dt);
        if !safe(&x) {
            return Backup {
                x: start,
                cost: acc,
                next: None,
                discount: disc,
            };
        }
        acc += disc * c;
        disc *= gamma;
    }
    Backup {
        x: start,
        cost: acc,
        next: Some(x),
        discount: disc,
    }
}

/// Full-batch TD on a grid with the target equal to the previous iterate.
///
/// Each sweep is one `fit_step` of unit step over every backup, i.e.
/// `soft_mu = 1` with the whole set as the minibatch. Stencils are computed
/// once, so a sweep is a sparse matrix-vector product. `map` takes states to
/// grid coordinates. Stops when no node moves by more than `tol`.
pub fn sweep_grid_value(
    grid: &mut GridApproximator,
    backups: &[Backup],
    map: &dyn Fn(&RealVec) -> RealVec,
    gamma: f64,
    cost_cap: f64,
    max_sweeps: usize,
    tol: f64,
) -> Result<TdReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidProblem(format!("gamma must be in (0,1), got {gamma}")));
    }
    struct Row {
        here: Vec<(usize, f64)>,
        next: Option<Vec<(usize, f64)>>,
        cost: f64,
        discount: f64,
    }
    let rows: Vec<Row> = backups
        .iter()
        .map(|b| Row {
            here: grid.stencil(&map(&b.x)),
            next: b.next.as_ref().map(|x| grid.stencil(&map(x))),
            cost: match b.next {
                Some(_) => b.cost,
                None => b.cost + b.discount * cost_cap / (1.0 - gamma),
            },
            discount: b.discount,
        })
        .collect();
    let mut den = vec![0.0; grid.n_nodes()];
    for r in &rows {
        for &(k, w) in &r.here {
            den[k] += w;
        }
    }
    let interp = |v: &[f64], st: &[(usize, f64)]| st.iter().map(|&(k, w)| w * v[k]).sum::<f64>();
    let target = |v: &[f64], r: &Row| match &r.next {
        Some(st) => r.cost + r.discount * interp(v, st),
        None => r.cost,
    };
    let mut v = grid.values().to_vec();
    let mut num = vec![0.0; v.len()];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        num.iter_mut().for_each(|n| *n = 0.0);
        for r in &rows {
            let resid = target(&v, r) - interp(&v, &r.here);
            for &(k, w) in &r.here {
                num[k] += w * resid;
            }
        }
        let mut change: f64 = 0.0;
        for k in 0..v.len() {
            if den[k] > 1e-12 {
                let d = num[k] / den[k];
                v[k] += d;
                change = change.max(d.abs());
            }
        }
        sweeps += 1;
        if !change.is_finite() {
            return Err(Error::Divergence(format!("grid sweep {sweeps} produced non-finite values")));
        }
        if change <= tol {
            break;
        }
    }
    let final_residual = rows.iter().map(|r| (target(&v, r) - interp(&v, &r.here)).abs()).sum::<f64>() / rows.len().max(1) as f64;
    grid.params_mut().copy_from_slice(&v);
    Ok(TdReport {
        iterations: sweeps,
        final_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub dt: f64,
    /// Step budget per episode.
    pub steps: usize,
    pub episodes: usize,
    pub seed: u64,
    pub pos_capacity: usize,
    pub neg_capacity: usize,
}

/// Runs the policy from sampled starts, one RNG stream per episode.
///
/// An episode ends at its first unsafe state (that transition goes to the
/// negative pool) or when the step budget runs out. Starts outside the safe
/// set produce no transitions.
pub fn collect_rollouts(
    model: &dyn ControlAffine,
    policy: &mut dyn FnMut(&RealVec, &mut Rng) -> RealVec,
    init: &mut dyn FnMut(&mut Rng) -> RealVec,
    cost: &dyn Fn(&RealVec) -> f64,
    safe: &dyn Fn(&RealVec) -> bool,
    cfg: &RolloutConfig,
) -> Result<ReplayBuffer> {
    if cfg.episodes == 0 || cfg.steps == 0 {
        return Err(Error::InvalidProblem("rollout budget is empty".into()));
    }
    let mut buffer = ReplayBuffer::new(cfg.pos_capacity, cfg.neg_capacity);
    for ep in 0..cfg.episodes {
        let mut rng = stream(cfg.seed, ep as u64);
        let mut x = init(&mut rng);
        if !safe(&x) {
            continue;
        }
        for _ in 0..cfg.steps {
            let u = policy(&x, &mut rng);
            let x_next = rk4_step(model, &x, &u, cfg.dt);
            if x_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    index: ep,
                    context: "rollout state became non-finite".into(),
                });
            }
            let next_safe = safe(&x_next);
            let c = cost(&x);
            buffer.push(Transition {
                x,
                u,
                cost: c,
                x_next: x_next.clone(),
                next_safe,
            });
            if !next_safe {
                break;
            }
            x = x_next;
        }
    }
    Ok(buffer)
}

/// Adds frozen transitions `x -> x` from unsafe states, realizing the virtual
/// system that stops outside the safe set. Their TD target is always `L/(1-gamma)`.
pub fn push_unsafe_states(buffer: &mut ReplayBuffer, states: &[RealVec], cost_cap: f64, n_u: usize) {
    for y in states {
        buffer.push(Transition {
            x: y.clone(),
            u: RealVec::zeros(n_u),
            cost: cost_cap,
            x_next: y.clone(),
            next_safe: false,
        });
    }
}

/// Immediate cost implied by `v` under `policy`: `beta V - grad V' (f + g phi)`.
pub fn hjb_residual(
    v: &dyn ScalarField,
    model: &dyn ControlAffine,
    policy: &dyn Fn(&RealVec) -> RealVec,
    x: &RealVec,
    beta: f64,
) -> f64 {
    let xdot = model.drift(x) + model.input_matrix(x) * policy(x);
    beta * v.value(x) - v.gradient(x).dot(&xdot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnField, FnModel, RealMat, StateBox};
    use crate::value::{beta_from_gamma, GridApproximator};

    fn v(x: f64) -> RealVec {
        RealVec::from_vec(vec![x])
    }

    #[test]
    fn targets() {
        let zero = FnField::new(1, |_| 0.0, |_| RealVec::zeros(1));
        let mut tr = Transition {
            x: v(0.0),
            u: v(0.0),
            cost: 0.1,
            x_next: v(0.0),
            next_safe: false,
        };
        assert!((td_target(&tr, 0.999, 1.0, &zero) - 1000.0).abs() < 1e-9);
        tr.next_safe = true;
        assert_eq!(td_target(&tr, 0.999, 1.0, &zero), 0.1);
    }

    #[test]
    fn zero_cost_fixed_point() {
        let c = FnField::new(1, |_| 0.0, |_| RealVec::zeros(1));
        let tr = Transition {
            x: v(0.3),
            u: v(0.0),
            cost: 0.0,
            x_next: v(0.3),
            next_safe: true,
        };
        assert_eq!(td_target(&tr, 0.9, 1.0, &c), 0.0);
    }

    fn ramp_rollouts(episodes: usize, seed: u64) -> ReplayBuffer {
        let model = FnModel::single_integrator(1);
        let cfg = RolloutConfig {
            dt: 0.1,
            steps: 100,
            episodes,
            seed,
            pos_capacity: 10_000,
            neg_capacity: 10_000,
        };
        use rand::Rng as _;
        collect_rollouts(
            &model,
            &mut |_, _| v(1.0),
            &mut |rng| v(rng.random_range(-1.0..0.5)),
            &|_| 0.1,
            &|x| x[0] < 1.0,
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn ramp_gives_one_exit_per_episode() {
        let b = ramp_rollouts(7, 1);
        assert_eq!(b.negative().len(), 7);
        assert!(b.negative().iter().all(|t| t.x[0] < 1.0 && t.x_next[0] >= 1.0));
    }

    #[test]
    fn rollouts_are_deterministic() {
        assert_eq!(ramp_rollouts(5, 3), ramp_rollouts(5, 3));
        assert_ne!(ramp_rollouts(5, 3), ramp_rollouts(5, 4));
    }

    #[test]
    fn resting_policy_never_exits() {
        let model = FnModel::single_integrator(1);
        let cfg = RolloutConfig {
            dt: 0.1,
            steps: 20,
            episodes: 3,
            seed: 0,
            pos_capacity: 100,
            neg_capacity: 100,
        };
        let b = collect_rollouts(&model, &mut |_, _| v(0.0), &mut |_| v(0.0), &|_| 0.0, &|x| x[0] < 1.0, &cfg).unwrap();
        assert!(b.negative().is_empty());
        assert_eq!(b.positive().len(), 60);
        let empty = RolloutConfig { episodes: 0, ..cfg };
        assert!(collect_rollouts(&model, &mut |_, _| v(0.0), &mut |_| v(0.0), &|_| 0.0, &|_| true, &empty).is_err());
    }

    /// Chain 0 -> 1 -> 2 -> unsafe with unit costs; Bellman system solved by hand.
    #[test]
    fn tabular_chain_converges_to_bellman_solution() {
        let gamma = 0.9;
        let cap = 2.0;
        let mut buffer = ReplayBuffer::new(16, 16);
        for k in 0..3 {
            buffer.push(Transition {
                x: v(k as f64),
                u: v(1.0),
                cost: 1.0,
                x_next: v(k as f64 + 1.0),
                next_safe: k < 2,
            });
        }
        let domain = StateBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut local = GridApproximator::new(&domain, &[3], 0.0);
        let mut target = local.clone();
        let cfg = TdConfig {
            gamma,
            cost_cap: cap,
            minibatch: 6,
            pos_per_batch: 4,
            soft_mu: 0.5,
            iters: 2000,
            step: 1.0,
            residual_tol: None,
        };
        let mut rng = stream(1, 0);
        let report = train_value(&buffer, &mut local, &mut target, &cfg, &mut rng).unwrap();
        let v2 = cap / (1.0 - gamma);
        let v1 = 1.0 + gamma * v2;
        let v0 = 1.0 + gamma * v1;
        let got = local.params();
        assert!((got[0] - v0).abs() < 1e-6 && (got[1] - v1).abs() < 1e-6 && (got[2] - v2).abs() < 1e-6, "{got:?}");
        assert!(report.final_residual < 1e-6);
    }

    #[test]
    fn hjb_residual_recovers_cost() {
        // xdot = -x, cost x^2, V = x^2 / (beta + 2)
        let beta = 0.7;
        let model = FnModel::linear_drift(RealMat::from_element(1, 1, -1.0));
        let exact = FnField::new(1, move |x| x[0] * x[0] / (beta + 2.0), move |x| v(2.0 * x[0] / (beta + 2.0)));
        for k in 0..20 {
            let x = v(-1.0 + 0.1 * k as f64);
            let r = hjb_residual(&exact, &model, &|_| v(0.0), &x, beta);
            assert!((r - x[0] * x[0]).abs() <= 1e-6 * (x[0] * x[0]).max(1e-12));
        }
        let constant = FnField::new(1, |_| 3.0, |_| v(0.0));
        assert_eq!(hjb_residual(&constant, &model, &|_| v(0.0), &v(0.4), beta), 3.0 * beta);
        assert_eq!(hjb_residual(&constant, &model, &|_| v(0.0), &v(0.4), 0.0), 0.0);
    }

    #[test]
    fn grid_residual_close_at_fine_resolution() {
        let beta = beta_from_gamma(0.99, 0.01);
        let model = FnModel::linear_drift(RealMat::from_element(1, 1, -1.0));
        let domain = StateBox::new(vec![-1.0], vec![1.0]).unwrap();
        let mut g = GridApproximator::new(&domain, &[4001], 0.0);
        g.set_values(|x| x[0] * x[0] / (beta + 2.0));
        for k in 0..10 {
            let x = v(0.3 + 0.0617 * k as f64);
            let r = hjb_residual(&g, &model, &|_| v(0.0), &x, beta);
            assert!((r - x[0] * x[0]).abs() <= 1e-2 * x[0] * x[0]);
        }
    }

    #[test]
    fn n_step_backup_composes_one_step_backups() {
        let model = FnModel::linear_drift(RealMat::from_element(1, 1, 0.8));
        let cost = |x: &RealVec| x[0] * x[0];
        let safe = |x: &RealVec| x[0].abs() < 1.0;
        let zero = |_: &RealVec| v(0.0);
        let (dt, gamma) = (0.05, 0.95);
        let x0 = v(0.3);
        let three = n_step_backup(&model, &zero, &cost, &safe, &x0, 3, dt, gamma);
        let mut x = x0.clone();
        let (mut acc, mut disc) = (0.0, 1.0);
        for _ in 0..3 {
            let b = n_step_backup(&model, &zero, &cost, &safe, &x, 1, dt, gamma);
            acc += disc * b.cost;
            disc *= b.discount;
            x = b.next.unwrap();
        }
        assert!((three.cost - acc).abs() < 1e-15 && (three.discount - disc).abs() < 1e-15);
        assert_eq!(three.next.unwrap(), x);

        // growing from 0.9 the state leaves within a few steps: no successor, tail charged
        let out = n_step_backup(&model, &zero, &cost, &safe, &v(0.9), 50, dt, gamma);
        assert!(out.next.is_none());
        assert!(out.target(&FnField::new(1, |_| 0.0, |_| v(0.0)), gamma, 1.0) > 1.0);
        let already = n_step_backup(&model, &zero, &cost, &safe, &v(1.5), 5, dt, gamma);
        assert!(already.next.is_none() && already.cost == 0.0 && already.discount == 1.0);
    }

    /// Nodes 0 -> 1 -> 2 -> unsafe, written as backups; sweeps reach the hand solution.
    #[test]
    fn grid_sweeps_solve_three_state_chain() {
        let (gamma, cap) = (0.9, 2.0);
        let backups: Vec<Backup> = (0..3)
            .map(|k| Backup {
                x: v(k as f64),
                cost: 1.0,
                next: (k < 2).then(|| v(k as f64 + 1.0)),
                discount: gamma,
            })
            .collect();
        let domain = StateBox::new(vec![0.0], vec![2.0]).unwrap();
        let mut grid = GridApproximator::new(&domain, &[3], 0.0);
        let report = sweep_grid_value(&mut grid, &backups, &|x| x.clone(), gamma, cap, 10_000, 1e-14).unwrap();
        let v2 = 1.0 + gamma * cap / (1.0 - gamma);
        let v1 = 1.0 + gamma * v2;
        let v0 = 1.0 + gamma * v1;
        let got = grid.params();
        for (g, e) in got.iter().zip([v0, v1, v2]) {
            assert!((g - e).abs() < 1e-10, "{got:?}");
        }
        assert!(report.final_residual < 1e-10 && report.iterations < 10_000);
        assert!(sweep_grid_value(&mut grid, &backups, &|x| x.clone(), 1.0, cap, 10, 1e-14).is_err());
    }
}
