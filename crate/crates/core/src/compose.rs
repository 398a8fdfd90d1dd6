//! Union of safe sets through the pointwise minimum of barriers.
//!
//! `min_j B_j` is generally nonsmooth, so it is not used for filtering
//! directly. Instead each member keeps its own safe policy and the composite
//! picks the member with the smallest barrier value. A smooth barrier for the
//! union can then be re-learned under that switching policy.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::system::{ControlAffine, Ldcbf, RealVec, ScalarField, StateBox};
use crate::value::{
    collect_rollouts, extract_ldcbf, n_step_backup, refine_exit_points, sweep_grid_value, ExtractOptions, ExtractReport,
    GridApproximator, LearnedLdcbf, RolloutConfig, ScaledField, TdReport,
};

/// Pointwise minimum of barriers sharing `(L, beta, T)`.
#[derive(Clone, Debug)]
pub struct MinComposite {
    members: Vec<Ldcbf>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Builds the composite; members must agree on `L`, `beta` and `T`.
pub fn min_compose(members: Vec<Ldcbf>) -> Result<MinComposite> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidProblem("composite needs at least one member".into()))?;
    for m in &members[1..] {
        if m.dim() != first.dim() {
            return Err(Error::Dimension {
                expected: first.dim(),
                got: m.dim(),
                context: "composite member",
            });
        }
        if !same(m.cost_cap, first.cost_cap) || !same(m.beta, first.beta) || !same(m.horizon, first.horizon) {
            return Err(Error::MismatchedConstants);
        }
    }
    Ok(MinComposite { members })
}

impl MinComposite {
    pub fn members(&self) -> &[Ldcbf] {
        &self.members
    }

    /// Index of the smallest member value; ties go to the lowest index.
    pub fn active(&self, x: &RealVec) -> usize {
        let mut best = 0;
        let mut best_v = self.members[0].value(x);
        for (j, m) in self.members.iter().enumerate().skip(1) {
            let v = m.value(x);
            if v < best_v {
                best = j;
                best_v = v;
            }
        }
        best
    }

    pub fn value(&self, x: &RealVec) -> f64 {
        self.members[self.active(x)].value(x)
    }

    pub fn safe_level(&self) -> f64 {
        self.members[0].safe_level()
    }

    pub fn in_union(&self, x: &RealVec) -> bool {
        self.members.iter().any(|m| m.in_safe_set(x))
    }

    pub fn in_safe_set(&self, x: &RealVec) -> bool {
        let m = &self.members[0];
        m.beta * self.value(x) < m.cost_cap
    }

    pub fn in_initial_set(&self, x: &RealVec) -> bool {
        self.value(x) <= self.members[0].threshold()
    }
}

impl ScalarField for MinComposite {
    fn dim(&self) -> usize {
        self.members[0].dim()
    }
    fn value(&self, x: &RealVec) -> f64 {
        MinComposite::value(self, x)
    }
    /// Gradient of the active member (a selection of the generalized gradient).
    fn gradient(&self, x: &RealVec) -> RealVec {
        self.members[self.active(x)].gradient(x)
    }
}

pub type Policy = Arc<dyn Fn(&RealVec) -> RealVec + Send + Sync>;

/// Applies the policy of whichever member is active at `x`.
pub fn switching_policy(composite: &MinComposite, policies: Vec<Policy>) -> Result<Policy> {
    if policies.len() != composite.members.len() {
        return Err(Error::Dimension {
            expected: composite.members.len(),
            got: policies.len(),
            context: "one policy per member",
        });
    }
    let c = composite.clone();
    Ok(Arc::new(move |x: &RealVec| policies[c.active(x)](x)))
}

#[derive(Debug, Clone)]
pub struct RelearnConfig {
    pub domain: StateBox,
    pub nodes: Vec<usize>,
    pub dt: f64,
    pub gamma: f64,
    /// `L`; the per-step cost outside the union.
    pub cost_cap: f64,
    /// Per-step cost inside the union.
    pub cost_in: f64,
    /// Policy steps per node backup.
    pub backup_steps: usize,
    pub max_sweeps: usize,
    pub tol: f64,
    /// Rollouts supply exit points and extra safe samples.
    pub rollout: RolloutConfig,
    pub horizon: f64,
    pub alpha: crate::system::AlphaFn,
}

#[derive(Debug, Clone)]
pub struct RelearnReport {
    pub td: TdReport,
    pub extract: ExtractReport,
    /// Grid nodes in the learned initial set.
    pub learned_initial: usize,
    /// Grid nodes in the union of the member initial sets.
    pub union_initial: usize,
    pub grid_points: usize,
}

/// Points just outside the union on every grid edge that leaves it.
///
/// The switching policy may never exit, so rollouts give no boundary samples,
/// and a boundary falling between nodes would let the interpolated barrier dip
/// below `L` outside the union. Bisecting these edges closes that gap.
fn boundary_between_nodes(domain: &StateBox, nodes: &[usize], safe_nodes: &[RealVec], safe: &dyn Fn(&RealVec) -> bool) -> Vec<RealVec> {
    let mut out = Vec::new();
    for x in safe_nodes {
        for (i, &n) in nodes.iter().enumerate() {
            let h = (domain.hi[i] - domain.lo[i]) / (n.max(2) - 1) as f64;
            for sign in [-1.0, 1.0] {
                let mut outside = x.clone();
                outside[i] += sign * h;
                if !domain.contains(&outside) || safe(&outside) {
                    continue;
                }
                let mut inside = x.clone();
                for _ in 0..40 {
                    let mid = (&inside + &outside) * 0.5;
                    if safe(&mid) {
                        inside = mid;
                    } else {
                        outside = mid;
                    }
                }
                out.push(outside);
            }
        }
    }
    out
}

/// Learns a smooth barrier for the union under the switching policy.
///
/// Cost is `L` outside the union and `cost_in` inside; the value is fitted on a
/// grid by sweeping policy backups from every node, rescaled to continuous
/// time and passed to extraction. The shrinkage of the initial set relative to
/// the members' is reported, not prevented.
pub fn relearn_union_ldcbf(
    composite: &MinComposite,
    model: &dyn ControlAffine,
    policy: Policy,
    cfg: &RelearnConfig,
) -> Result<(LearnedLdcbf, RelearnReport)> {
    let cap = cfg.cost_cap;
    let in_union = |x: &RealVec| composite.in_union(x);
    let cost = |x: &RealVec| if composite.in_union(x) { cfg.cost_in } else { cap };
    let domain = &cfg.domain;
    let mut init = |r: &mut Rng| domain.sample(r);
    let p = policy.clone();
    let buffer = collect_rollouts(model, &mut |x, _| p(x), &mut init, &cost, &in_union, &cfg.rollout)?;

    let mut grid = GridApproximator::new(domain, &cfg.nodes, cap / (1.0 - cfg.gamma));
    let nodes: Vec<RealVec> = (0..grid.n_nodes()).map(|k| grid.node(k)).collect();
    let backups: Vec<_> = nodes
        .iter()
        .map(|x| n_step_backup(model, &*policy, &cost, &in_union, x, cfg.backup_steps, cfg.dt, cfg.gamma))
        .collect();
    let td = sweep_grid_value(&mut grid, &backups, &|x| x.clone(), cfg.gamma, cap, cfg.max_sweeps, cfg.tol)?;
    let (safe_nodes, unsafe_nodes): (Vec<RealVec>, Vec<RealVec>) = nodes.into_iter().partition(|x| in_union(x));

    let exits: Vec<_> = buffer.negative().iter().collect();
    let mut unsafe_samples = refine_exit_points(&exits, &in_union, 40);
    unsafe_samples.extend(unsafe_nodes.iter().cloned());
    unsafe_samples.extend(boundary_between_nodes(domain, &cfg.nodes, &safe_nodes, &in_union));
    let mut safe_samples = safe_nodes.clone();
    safe_samples.extend(buffer.positive().iter().map(|t| t.x.clone()));

    let beta = crate::value::beta_from_gamma(cfg.gamma, cfg.dt);
    let v: Arc<dyn ScalarField> = Arc::new(ScaledField {
        inner: grid,
        scale: cfg.dt,
    });
    let opts = ExtractOptions {
        beta,
        horizon: cfg.horizon,
        alpha: cfg.alpha,
        c_margin: None,
        c_coverage: 1.0,
        delta: 0.0,
    };
    let (learned, extract) = extract_ldcbf(v, model, &*policy, &safe_samples, &unsafe_samples, &opts)?;

    let learned_initial = safe_nodes.iter().filter(|x| learned.in_initial_set(x)).count();
    let union_initial = safe_nodes.iter().filter(|x| composite.in_initial_set(x)).count();
    Ok((
        learned,
        RelearnReport {
            td,
            extract,
            learned_initial,
            union_initial,
            grid_points: safe_nodes.len() + unsafe_nodes.len(),
        },
    ))
}
