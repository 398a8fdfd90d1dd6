use std::sync::Arc;

use ldcbf::compose::{min_compose, relearn_union_ldcbf, switching_policy, Policy, RelearnConfig};
use ldcbf::filter::ldcbf_halfspace;
use ldcbf::qp::{solve_lp, width_lp};
use ldcbf::rng::stream;
use ldcbf::system::{rk4_step, AlphaFn, FnField, FnModel, Ldcbf, Polytope, RealMat, RealVec, StateBox};
use ldcbf::value::RolloutConfig;
use ldcbf::Error;
use rand::Rng;

fn v(x: &[f64]) -> RealVec {
    RealVec::from_column_slice(x)
}

fn bowl(center: Vec<f64>, cost_cap: f64, horizon: f64, slope: f64) -> Ldcbf {
    let n = center.len();
    Ldcbf::new(Arc::new(FnField::weighted_square(center, vec![1.0; n])), cost_cap, 1.0, horizon, AlphaFn::new(slope).unwrap()).unwrap()
}

/// Proportional pull toward `c`, saturated at unit speed per axis.
fn pull(c: [f64; 2]) -> Policy {
    Arc::new(move |x: &RealVec| v(&[(c[0] - x[0]).clamp(-1.0, 1.0), (c[1] - x[1]).clamp(-1.0, 1.0)]))
}

#[test]
fn single_member_union_matches_member() {
    let b = bowl(vec![0.3, -0.2], 1.0, 1.0, 1.0);
    let c = min_compose(vec![b.clone()]).unwrap();
    let mut rng = stream(7, 0);
    for _ in 0..200 {
        let x = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        assert_eq!(c.value(&x), b.value(&x));
        assert_eq!(c.in_safe_set(&x), b.in_safe_set(&x));
        assert_eq!(c.in_initial_set(&x), b.in_initial_set(&x));
    }
}

/// At the origin each barrier alone admits a control, but a drift that raises
/// both forces them to demand opposite signs of `u`, so no control satisfies
/// both: intersections need more than stacking constraints.
#[test]
fn intersection_of_admissible_sets_can_be_empty() {
    let model = FnModel::new(2, 1, |_| v(&[0.0, 3.0]), |_| RealMat::from_column_slice(2, 1, &[1.0, 0.0]));
    let set = Polytope::cube(1, 1.0).unwrap();
    let left = bowl(vec![-2.0, -1.0], 8.0, 1.0, 1.0);
    let right = bowl(vec![2.0, -1.0], 8.0, 1.0, 1.0);
    let x = v(&[0.0, 0.0]);
    assert!(left.in_safe_set(&x) && right.in_safe_set(&x));
    let h1 = ldcbf_halfspace(&left, &model, &x);
    let h2 = ldcbf_halfspace(&right, &model, &x);
    assert!(width_lp(&h1, &set).unwrap().omega > 0.0);
    assert!(width_lp(&h2, &set).unwrap().omega > 0.0);
    assert_eq!(solve_lp(&v(&[0.0]), &[h1, h2], &set).unwrap_err(), Error::Infeasible);
}

#[test]
fn switching_policy_keeps_union_for_horizon() {
    let centers = [[0.0, 0.0], [1.5, 0.0]];
    let horizon = 1.0;
    let members: Vec<Ldcbf> = centers.iter().map(|c| bowl(c.to_vec(), 1.0, horizon, 1.0)).collect();
    let comp = min_compose(members).unwrap();
    let policy = switching_policy(&comp, centers.iter().map(|c| pull(*c)).collect()).unwrap();
    let model = FnModel::single_integrator(2);
    let mut rng = stream(3, 0);
    let dt = 1e-2;
    let mut starts = 0;
    while starts < 200 {
        let x0 = v(&[rng.random_range(-1.0..2.5), rng.random_range(-1.0..1.0)]);
        if !comp.in_initial_set(&x0) {
            continue;
        }
        starts += 1;
        let mut x = x0;
        for _ in 0..(horizon / dt) as usize {
            x = rk4_step(&model, &x, &policy(&x), dt);
            assert!(comp.in_union(&x), "left the union at {x:?}");
        }
    }
}

#[test]
fn relearned_union_barrier_stays_inside_union() {
    let centers = [[-1.25], [1.25]];
    let horizon = 1.0;
    let members: Vec<Ldcbf> = centers.iter().map(|c| bowl(c.to_vec(), 0.5, horizon, 1.0)).collect();
    let comp = min_compose(members).unwrap();
    let pulls: Vec<Policy> = centers
        .iter()
        .map(|c| {
            let c = c[0];
            Arc::new(move |x: &RealVec| v(&[(c - x[0]).clamp(-1.0, 1.0)])) as Policy
        })
        .collect();
    let policy = switching_policy(&comp, pulls).unwrap();
    let model = FnModel::single_integrator(1);
    let dt = 0.05;
    let cfg = RelearnConfig {
        domain: StateBox::new(vec![-2.5], vec![2.5]).unwrap(),
        nodes: vec![101],
        dt,
        gamma: 0.95,
        cost_cap: 1.0,
        cost_in: 0.0,
        backup_steps: 1,
        max_sweeps: 100_000,
        tol: 1e-12,
        rollout: RolloutConfig {
            dt,
            steps: 40,
            episodes: 200,
            seed: 1,
            pos_capacity: 20_000,
            neg_capacity: 2_000,
        },
        horizon,
        alpha: AlphaFn::new(1.0).unwrap(),
    };
    let (learned, report) = relearn_union_ldcbf(&comp, &model, policy, &cfg).unwrap();
    let grid = StateBox::new(vec![-2.5], vec![2.5]).unwrap().grid(1001);
    let outside = grid.iter().filter(|x| learned.in_safe_set(x) && !comp.in_union(x)).count();
    assert_eq!(outside, 0);
    assert!(report.learned_initial > 0, "{report:?}");
}
