//! QP safety filter built on the barrier's admissible halfspace, and a
//! simulation-based duration certificate.

use crate::error::{Error, Result};
use crate::qp::{solve_qp, width_lp, Halfspace, QpProblem};
use crate::system::{rk4_step, ControlAffine, Ldcbf, Polytope, RealMat, RealVec};

pub const SLACK_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub u: RealVec,
    pub modified: bool,
    /// Zero when the hard constraint was feasible.
    pub slack: f64,
    /// Width of the admissible set; `-inf` when it is empty.
    pub width: f64,
}

/// `a = g(x)' grad B(x)`, `c = alpha(theta - B) + beta B - grad B' f(x)`.
pub fn ldcbf_halfspace(barrier: &Ldcbf, model: &dyn ControlAffine, x: &RealVec) -> Halfspace {
    let b = barrier.value(x);
    let grad = barrier.gradient(x);
    let a = model.input_matrix(x).transpose() * &grad;
    let c = barrier.alpha.apply(barrier.threshold() - b) + barrier.beta * b - grad.dot(&model.drift(x));
    Halfspace::new(a, c)
}

/// Minimal-deviation projection of `u_nom` onto `{a'u <= c} ∩ set`.
///
/// Falls back to a slack-relaxed QP (penalty [`SLACK_WEIGHT`]) when the
/// intersection is empty; that case is logged since the guarantee is void.
pub fn filter_halfspace(h: &Halfspace, u_nom: &RealVec, set: &Polytope) -> Result<FilterReport> {
    if set.dim() == 1 && set.is_bounded() {
        return Ok(filter_interval(h, u_nom[0], set));
    }
    let width = match width_lp(h, set) {
        Ok(w) => w.omega,
        Err(Error::Infeasible) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    if h.violation(u_nom) <= 0.0 && set.contains(u_nom, 0.0) {
        return Ok(FilterReport {
            u: u_nom.clone(),
            modified: false,
            slack: 0.0,
            width,
        });
    }
    let hard = QpProblem::projection(u_nom, vec![h.clone()], set.clone())?;
    let (u, slack) = match solve_qp(&hard) {
        Ok(s) => (s.u, 0.0),
        Err(Error::Infeasible) => {
            let (u, s) = slack_projection(h, u_nom, set)?;
            log::warn!("admissible control set is empty; slack {s:.3e} applied, safety guarantee void");
            (u, s)
        }
        Err(e) => return Err(e),
    };
    let modified = (&u - u_nom).norm() > 1e-9 || slack > 0.0;
    Ok(FilterReport {
        u,
        modified,
        slack,
        width,
    })
}

/// Closed form for a scalar control: every 1-D polytope is an interval.
fn filter_interval(h: &Halfspace, u_nom: f64, set: &Polytope) -> FilterReport {
    let (lo, hi) = set.bounding_box().map(|(l, h)| (l[0], h[0])).expect("bounded");
    let (a, c) = (h.a[0], h.c);
    let cap = 10.0 * (hi - lo).max(1e-12);
    let omega = if a >= 0.0 { c - a * lo } else { (c - a * hi) / (1.0 - a) };
    let omega = omega.min(hi - lo).min(cap);
    let width = if omega >= 0.0 { omega } else { f64::NEG_INFINITY };

    let (mut l, mut u) = (lo, hi);
    if a > 0.0 {
        u = u.min(c / a);
    } else if a < 0.0 {
        l = l.max(c / a);
    }
    let feasible = if a == 0.0 { c >= 0.0 } else { l <= u };
    let (value, slack) = if feasible {
        (u_nom.clamp(l, u), 0.0)
    } else {
        // minimize (v - u_nom)^2 + W s^2 with s = max(a v - c, 0) over [lo, hi]
        let w = SLACK_WEIGHT;
        let v = if a == 0.0 {
            u_nom.clamp(lo, hi)
        } else {
            ((u_nom + w * a * c) / (1.0 + w * a * a)).clamp(lo, hi)
        };
        (v, (a * v - c).max(0.0))
    };
    if slack > 0.0 {
        log::warn!("admissible control set is empty; slack {slack:.3e} applied, safety guarantee void");
    }
    FilterReport {
        u: RealVec::from_element(1, value),
        modified: value != u_nom || slack > 0.0,
        slack,
        width,
    }
}

fn slack_projection(h: &Halfspace, u_nom: &RealVec, set: &Polytope) -> Result<(RealVec, f64)> {
    let n = u_nom.len();
    let mut hess = RealMat::identity(n + 1, n + 1);
    hess[(n, n)] = SLACK_WEIGHT;
    let mut lin = RealVec::zeros(n + 1);
    lin.rows_mut(0, n).copy_from(&(-u_nom));
    let mut rows = Vec::with_capacity(set.n_rows() + 2);
    rows.push(Halfspace::new(h.a.clone().insert_row(n, -1.0), h.c));
    let mut nonneg = RealVec::zeros(n + 1);
    nonneg[n] = -1.0;
    rows.push(Halfspace::new(nonneg, 0.0));
    for i in 0..set.n_rows() {
        rows.push(Halfspace::new(set.row(i).insert_row(n, 0.0), set.b()[i]));
    }
    let s = solve_qp(&QpProblem::new(hess, lin, rows, Polytope::unconstrained(n + 1))?)?;
    Ok((s.u.rows(0, n).into_owned(), s.u[n].max(0.0)))
}

/// Filters `u_nom` through the barrier's halfspace at `x`.
pub fn filter_control(
    barrier: &Ldcbf,
    model: &dyn ControlAffine,
    x: &RealVec,
    u_nom: &RealVec,
    set: &Polytope,
) -> Result<FilterReport> {
    filter_halfspace(&ldcbf_halfspace(barrier, model, x), u_nom, set)
}

/// Result of [`certify_duration`].
#[derive(Debug, Clone)]
pub struct DurationCertificate {
    /// First grid time outside the safe set, if any.
    pub exit_time: Option<f64>,
    /// Largest `B(t) - B(t_p) e^{beta (t - t_p)}` while inside the safe set,
    /// where `t_p` is the last grid time up to `t` with `B <= threshold`.
    pub max_bound_violation: f64,
    /// Largest `a'u - c` along the run (pointwise admissibility).
    pub max_halfspace_violation: f64,
    pub max_slack: f64,
    pub states: Vec<RealVec>,
}

/// Simulates the filtered nominal policy and measures how long the state stays safe.
///
/// The run continues after leaving the safe set; the exit is reported, not enforced.
pub fn certify_duration(
    barrier: &Ldcbf,
    model: &dyn ControlAffine,
    mut nominal: impl FnMut(&RealVec) -> RealVec,
    x0: &RealVec,
    set: &Polytope,
    dt: f64,
    horizon: f64,
) -> Result<DurationCertificate> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::InvalidProblem("need dt > 0 and horizon >= dt".into()));
    }
    let steps = (horizon / dt).round() as usize;
    let theta = barrier.threshold();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    let mut exit_time = None;
    let mut anchor = (0.0, barrier.value(x0));
    let mut max_bound_violation = f64::NEG_INFINITY;
    let mut max_halfspace_violation = f64::NEG_INFINITY;
    let mut max_slack = 0.0f64;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let b = barrier.value(&x);
        if exit_time.is_none() {
            if !barrier.in_safe_set(&x) {
                exit_time = Some(t);
            } else {
                if b <= theta {
                    anchor = (t, b);
                }
                let bound = anchor.1 * (barrier.beta * (t - anchor.0)).exp();
                max_bound_violation = max_bound_violation.max(b - bound);
            }
        }
        states.push(x.clone());
        if k == steps {
            break;
        }
        let h = ldcbf_halfspace(barrier, model, &x);
        let report = filter_halfspace(&h, &nominal(&x), set)?;
        if report.slack == 0.0 {
            max_halfspace_violation = max_halfspace_violation.max(h.violation(&report.u));
        }
        max_slack = max_slack.max(report.slack);
        x = rk4_step(model, &x, &report.u, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                index: k + 1,
                context: "filtered state became non-finite".into(),
            });
        }
    }
    Ok(DurationCertificate {
        exit_time,
        max_bound_violation,
        max_halfspace_violation,
        max_slack,
        states,
    })
}
