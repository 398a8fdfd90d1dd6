//! Analytic invariant suites, each checked against an independent oracle.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Report;
use crate::compose::min_compose;
use crate::envs::coverage::energy_field;
use crate::envs::{CartPole, CartPoleParams, CoverageConfig};
use crate::error::{Error, Result};
use crate::filter::{certify_duration, filter_control};
use crate::nn::{Mlp, OutputActivation};
use crate::qp::{solve_qp, width_lp, Halfspace, QpProblem};
use crate::rng::{stream, Rng};
use crate::stochastic::{sldcbf_filter, DiffusionModel};
use crate::system::{check_gradient, rk4_step, AlphaFn, FnField, FnModel, Ldcbf, Polytope, RealMat, RealVec, ScalarField};
use crate::trainer::log_barrier_extension;

/// Deliberate defects used to test that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// The quadratic barrier reports a gradient two percent too large.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub gradient_rtol: f64,
    pub qp_problems: usize,
    pub qp_grid_step: f64,
    pub qp_tol: f64,
    pub width_problems: usize,
    /// Starts per horizon in the duration suite.
    pub duration_starts: usize,
    pub duration_dt: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_rtol: 1e-3,
            qp_problems: 500,
            qp_grid_step: 1e-3,
            qp_tol: 2e-3,
            width_problems: 500,
            duration_starts: 100,
            duration_dt: 1e-3,
        }
    }
}

pub const GRADIENT_CHECK: &str = "gradient: analytic gradients match central differences";

fn v(x: &[f64]) -> RealVec {
    RealVec::from_column_slice(x)
}

fn random_points(rng: &mut Rng, n: usize, dim: usize, r: f64) -> Vec<RealVec> {
    (0..n).map(|_| RealVec::from_fn(dim, |_, _| rng.random_range(-r..r))).collect()
}

/// Worst relative error of backpropagated parameter gradients over random points.
fn mlp_gradient_error(rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for (sizes, act) in [(vec![3, 8, 1], OutputActivation::Linear), (vec![2, 6, 5, 2], OutputActivation::Tanh)] {
        let mut net = Mlp::new(&sizes, act, rng);
        for _ in 0..20 {
            for p in net.params_mut() {
                *p = rng.random_range(-1.0..1.0);
            }
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &Mlp| n.forward(&x, &[]).iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
            let mut grad = vec![0.0; net.n_params()];
            let cache = net.forward_cached(&x, &[]);
            net.backward(&cache, &w, &mut grad);
            let h = 1e-6;
            let mut fd = vec![0.0; grad.len()];
            for i in 0..grad.len() {
                let orig = net.params()[i];
                net.params_mut()[i] = orig + h;
                let up = loss(&net);
                net.params_mut()[i] = orig - h;
                let down = loss(&net);
                net.params_mut()[i] = orig;
                fd[i] = (up - down) / (2.0 * h);
            }
            let scale = 1.0 + fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = grad.iter().zip(&fd).fold(0.0f64, |m, (g, f)| m.max((g - f).abs())) / scale;
            worst = worst.max(err);
        }
    }
    worst
}

pub fn gradient_suite(report: &mut Report, cfg: &VerifyConfig, fault: Option<Fault>, rng: &mut Rng) {
    let square: Arc<dyn ScalarField> = match fault {
        Some(Fault::Gradient) => Arc::new(FnField::new(
            2,
            |x| x[0] * x[0] + 3.0 * x[1] * x[1],
            |x| v(&[2.04 * x[0], 6.12 * x[1]]),
        )),
        None => Arc::new(FnField::weighted_square(vec![0.0, 0.0], vec![1.0, 3.0])),
    };
    let cov = CoverageConfig::default();
    let energy = energy_field(&cov, [0.3, -0.8]);
    let energy_pts: Vec<RealVec> = (0..50)
        .map(|_| v(&[rng.random_range(0.6..1.0), rng.random_range(-1.5..1.5), rng.random_range(-0.9..0.9)]))
        .collect();
    let comp = min_compose(vec![
        Ldcbf::new(Arc::new(FnField::weighted_square(vec![0.0, 0.0], vec![1.0, 1.0])), 1.0, 1.0, 1.0, AlphaFn::new(1.0).unwrap()).unwrap(),
        Ldcbf::new(Arc::new(FnField::weighted_square(vec![2.0, 0.0], vec![1.0, 1.0])), 1.0, 1.0, 1.0, AlphaFn::new(1.0).unwrap()).unwrap(),
    ])
    .unwrap();
    // stay off the switching line x = 1 where the composite is not differentiable
    let comp_pts: Vec<RealVec> = random_points(rng, 50, 2, 2.0).into_iter().filter(|x| (x[0] - 1.0).abs() > 0.01).collect();
    let checks = [
        ("quadratic barrier", check_gradient(&*square, &random_points(rng, 50, 2, 2.0), 1e-5)),
        ("coverage energy barrier", check_gradient(&energy, &energy_pts, 1e-5)),
        ("min composite", check_gradient(&comp, &comp_pts, 1e-5)),
    ];
    let mlp = mlp_gradient_error(rng);
    let mut worst = ("network parameters", mlp);
    for (name, c) in &checks {
        if c.max_error > worst.1 {
            worst = (name, c.max_error);
        }
    }
    report.check(
        GRADIENT_CHECK,
        worst.1 <= cfg.gradient_rtol,
        format!("worst relative error {:.2e} ({}), rtol {}", worst.1, worst.0, cfg.gradient_rtol),
    );
}

/// Ratio of RK4 errors at `dt` and `dt / 2` on a harmonic oscillator.
pub fn rk4_order_factor() -> f64 {
    let osc = FnModel::linear_drift(RealMat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    let err = |dt: f64| {
        let mut x = v(&[1.0, 0.0]);
        let n = (1.0 / dt).round() as usize;
        for _ in 0..n {
            x = rk4_step(&osc, &x, &RealVec::zeros(1), dt);
        }
        (x - v(&[1f64.cos(), -1f64.sin()])).norm()
    };
    err(0.1) / err(0.05)
}

/// Largest energy change of the unforced cart-pole over 10 s.
pub fn cartpole_energy_drift() -> Result<f64> {
    let cp = CartPole::new(CartPoleParams::default())?;
    let mut x = v(&[0.0, 0.3, 0.9, -0.5]);
    let e0 = cp.energy(&x);
    let u = RealVec::zeros(1);
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        x = rk4_step(&cp, &x, &u, 1e-3);
        drift = drift.max((cp.energy(&x) - e0).abs());
    }
    Ok(drift)
}

struct Qp2 {
    h: [[f64; 2]; 2],
    b: [f64; 2],
    rows: Vec<([f64; 2], f64)>,
}

impl Qp2 {
    fn f(&self, u: [f64; 2]) -> f64 {
        let hu = [self.h[0][0] * u[0] + self.h[0][1] * u[1], self.h[1][0] * u[0] + self.h[1][1] * u[1]];
        u[0] * hu[0] + u[1] * hu[1] + 2.0 * (self.b[0] * u[0] + self.b[1] * u[1])
    }

    fn feasible(&self, u: [f64; 2], tol: f64) -> bool {
        self.rows.iter().all(|(a, c)| a[0] * u[0] + a[1] * u[1] <= c + tol)
    }

    /// Best point over a grid of the box, grids along every row line, and every vertex.
    fn grid_argmin(&self, step: f64) -> Option<[f64; 2]> {
        let mut best: Option<([f64; 2], f64)> = None;
        let consider = |u: [f64; 2], tol: f64, best: &mut Option<([f64; 2], f64)>| {
            if self.feasible(u, tol) {
                let f = self.f(u);
                if best.is_none_or(|(_, bf)| f < bf) {
                    *best = Some((u, f));
                }
            }
        };
        let n = (2.0 / step).round() as usize;
        for i in 0..=n {
            let u0 = -1.0 + i as f64 * step;
            for j in 0..=n {
                consider([u0, -1.0 + j as f64 * step], 0.0, &mut best);
            }
        }
        for (a, c) in &self.rows {
            let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let p = [a[0] * c / (norm * norm), a[1] * c / (norm * norm)];
            let d = [-a[1] / norm, a[0] / norm];
            let m = (3.0 / step).round() as i64;
            for k in -m..=m {
                let s = k as f64 * step;
                consider([p[0] + s * d[0], p[1] + s * d[1]], 1e-12, &mut best);
            }
        }
        for (i, (a1, c1)) in self.rows.iter().enumerate() {
            for (a2, c2) in &self.rows[i + 1..] {
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() > 1e-12 {
                    let u = [(c1 * a2[1] - c2 * a1[1]) / det, (a1[0] * c2 - a2[0] * c1) / det];
                    consider(u, 1e-12, &mut best);
                }
            }
        }
        best.map(|(u, _)| u)
    }
}

fn random_qp(rng: &mut Rng) -> Qp2 {
    let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (l1, l2): (f64, f64) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let (c, s) = (th.cos(), th.sin());
    let h = [[l1 * c * c + l2 * s * s, (l1 - l2) * c * s], [(l1 - l2) * c * s, l1 * s * s + l2 * c * c]];
    let b = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
    let mut rows = vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0), ([0.0, 1.0], 1.0), ([0.0, -1.0], 1.0)];
    let u0 = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
    for _ in 0..rng.random_range(0..3) {
        let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        rows.push((a, a[0] * u0[0] + a[1] * u0[1] + rng.random_range(0.0..0.5)));
    }
    Qp2 { h, b, rows }
}

pub fn qp_suite(report: &mut Report, cfg: &VerifyConfig, rng: &mut Rng) -> Result<()> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.qp_problems {
        let q = random_qp(rng);
        let ineqs: Vec<Halfspace> = q.rows[4..].iter().map(|(a, c)| Halfspace::new(v(a), *c)).collect();
        let p = QpProblem::new(
            RealMat::from_row_slice(2, 2, &[q.h[0][0], q.h[0][1], q.h[1][0], q.h[1][1]]),
            v(&q.b),
            ineqs,
            Polytope::cube(2, 1.0)?,
        )?;
        let s = solve_qp(&p)?;
        let g = q.grid_argmin(cfg.qp_grid_step).ok_or(Error::Infeasible)?;
        worst = worst.max((s.u[0] - g[0]).abs().max((s.u[1] - g[1]).abs()));
    }
    report.check(
        "qp: active-set solution matches dense grid",
        worst <= cfg.qp_tol,
        format!("{} problems, largest gap {worst:.2e} (tol {})", cfg.qp_problems, cfg.qp_tol),
    );
    Ok(())
}

/// Largest `omega` over vertices of the width LP in `(u1, u2, omega)`.
fn width_by_vertices(a: &[f64; 2], c: f64, set: &[([f64; 2], f64)], cap: f64) -> Option<f64> {
    let mut rows: Vec<([f64; 3], f64)> = vec![([a[0], a[1], 1.0], c), ([0.0, 0.0, 1.0], cap)];
    for (r, b) in set {
        rows.push(([r[0], r[1], r[0] + r[1]], *b));
        rows.push(([r[0], r[1], 0.0], *b));
    }
    let mut best: Option<f64> = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            for k in j + 1..rows.len() {
                let m = RealMat::from_row_slice(3, 3, &[rows[i].0, rows[j].0, rows[k].0].concat());
                if m.determinant().abs() < 1e-10 {
                    continue;
                }
                let Some(x) = m.lu().solve(&v(&[rows[i].1, rows[j].1, rows[k].1])) else { continue };
                if rows.iter().all(|(r, b)| r[0] * x[0] + r[1] * x[1] + r[2] * x[2] <= b + 1e-9) {
                    best = Some(best.map_or(x[2], |w: f64| w.max(x[2])));
                }
            }
        }
    }
    best.filter(|w| *w >= 0.0)
}

pub fn width_suite(report: &mut Report, cfg: &VerifyConfig, rng: &mut Rng) -> Result<()> {
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for _ in 0..cfg.width_problems {
        let mut set = vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0), ([0.0, 1.0], 1.0), ([0.0, -1.0], 1.0)];
        if rng.random_bool(0.5) {
            set.push(([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], rng.random_range(0.2..1.5)));
        }
        let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let c = rng.random_range(-3.0..3.0);
        let (rows, b): (Vec<[f64; 2]>, Vec<f64>) = set.iter().cloned().unzip();
        let poly = Polytope::new(RealMat::from_row_slice(rows.len(), 2, &rows.concat()), v(&b))?;
        let cap = 10.0 * poly.diameter_bound().unwrap_or(1e5);
        match (width_lp(&Halfspace::new(v(&a), c), &poly), width_by_vertices(&a, c, &set, cap)) {
            (Ok(w), Some(o)) => worst = worst.max((w.omega - o).abs()),
            (Err(Error::Infeasible), None) => {}
            _ => mismatched += 1,
        }
    }
    report.check(
        "width: LP optimum equals vertex enumeration",
        mismatched == 0 && worst <= 1e-9,
        format!("{} problems, largest gap {worst:.1e}, {mismatched} feasibility disagreements", cfg.width_problems),
    );
    Ok(())
}

/// Filtered single integrator with `B = x^2`, `beta = L = 1`, adversarial nominals.
pub fn duration_suite(report: &mut Report, cfg: &VerifyConfig, rng: &mut Rng) -> Result<()> {
    let model = FnModel::single_integrator(1);
    let set = Polytope::cube(1, 1.0)?;
    let field: Arc<dyn ScalarField> = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
    let dt = cfg.duration_dt;
    let (mut runs, mut short, mut worst_bound) = (0, 0, f64::NEG_INFINITY);
    for horizon in [1.0, 2.0] {
        let b = Ldcbf::new(field.clone(), 1.0, 1.0, horizon, AlphaFn::new(1.0)?)?;
        let r0 = b.threshold().sqrt();
        for s in 0..cfg.duration_starts {
            let x0 = v(&[-r0 + 2.0 * r0 * s as f64 / (cfg.duration_starts - 1).max(1) as f64]);
            for kind in 0..5 {
                let mut noise = stream(rng.random(), 0);
                let mut k = 0usize;
                let nominal = |x: &RealVec| {
                    k += 1;
                    v(&[match kind {
                        0 => 1.0,
                        1 => -1.0,
                        2 => x[0].signum(),
                        3 => noise.random_range(-1.0..1.0),
                        _ => (0.01 * k as f64).sin(),
                    }])
                };
                let cert = certify_duration(&b, &model, nominal, &x0, &set, dt, horizon)?;
                runs += 1;
                if cert.exit_time.is_some_and(|t| t < horizon - dt) {
                    short += 1;
                }
                worst_bound = worst_bound.max(cert.max_bound_violation);
            }
        }
    }
    report.check(
        "duration: filtered runs from the initial set last T",
        short == 0,
        format!("{short}/{runs} runs left before T - dt"),
    );
    report.check(
        "duration: B(t) <= B(t_p) e^(beta (t - t_p))",
        worst_bound <= 1e-4,
        format!("largest violation {worst_bound:.2e} at dt {dt}"),
    );
    Ok(())
}

pub fn misc_suite(report: &mut Report) -> Result<()> {
    // one-member composite is the member itself
    let b = Ldcbf::new(Arc::new(FnField::weighted_square(vec![0.5], vec![2.0])), 1.0, 1.0, 1.0, AlphaFn::new(1.0)?)?;
    let c = min_compose(vec![b.clone()])?;
    let same = (0..101).all(|k| {
        let x = v(&[-2.0 + 0.04 * k as f64]);
        c.value(&x) == b.value(&x)
    });
    report.check("compose: single-member union is the identity", same, "101 grid points");

    // without noise the stochastic filter is the deterministic one with alpha = 0
    let drift = Arc::new(FnModel::linear_drift(RealMat::from_element(1, 1, -0.5)));
    let dm = DiffusionModel::new(drift.clone(), |_| RealMat::zeros(1, 1));
    let field = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
    let det = Ldcbf::new(field.clone(), 1.0, 0.8, 1.0, AlphaFn::new(0.0)?)?;
    let set = Polytope::cube(1, 2.0)?;
    let mut equal = true;
    for k in 0..41 {
        let x = v(&[-1.0 + 0.05 * k as f64]);
        let s = sldcbf_filter(&*field, &dm, &x, &v(&[1.5]), &set, 0.8)?;
        let d = filter_control(&det, &*drift, &x, &v(&[1.5]), &set)?;
        equal &= s == d;
    }
    report.check("stochastic: zero noise reduces to the deterministic filter", equal, "41 states, exact equality");

    let mut knee = 0.0f64;
    for t in [0.5, 1.0, 5.0, 25.0] {
        let z = -1.0 / (t * t);
        knee = knee.max((log_barrier_extension(z - 1e-12, t) - log_barrier_extension(z + 1e-12, t)).abs());
    }
    report.check("trainer: log-barrier extension continuous at the knee", knee < 1e-9, format!("largest jump {knee:.1e}"));
    Ok(())
}

pub fn run(cfg: &VerifyConfig, fault: Option<Fault>) -> Result<Report> {
    let mut report = Report::new("verify");
    let mut rng = stream(cfg.seed, 0);
    gradient_suite(&mut report, cfg, fault, &mut rng);
    let factor = rk4_order_factor();
    report.check("rk4: error ratio under step halving", factor >= 14.0, format!("factor {factor:.2} (need >= 14)"));
    let drift = cartpole_energy_drift()?;
    report.check("cart-pole: unforced energy conserved", drift <= 1e-5, format!("drift {drift:.2e} over 10 s"));
    qp_suite(&mut report, cfg, &mut rng)?;
    width_suite(&mut report, cfg, &mut rng)?;
    duration_suite(&mut report, cfg, &mut rng)?;
    misc_suite(&mut report)?;
    Ok(report)
}
