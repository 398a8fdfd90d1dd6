use std::sync::Arc;

use crate::error::{Error, Result};
use crate::system::{AlphaFn, ControlAffine, Ldcbf, RealVec, ScalarField, Shifted};

use super::td::hjb_residual;
use super::Transition;

/// Barrier `B = V + c/beta` built from a continuous-time value estimate `V`.
#[derive(Clone)]
pub struct LearnedLdcbf {
    pub base: Arc<dyn ScalarField>,
    pub c_offset: f64,
    /// `min beta (V + c/beta)` over the unsafe samples.
    pub l_hat: f64,
    pub beta: f64,
    pub horizon: f64,
    pub alpha: AlphaFn,
    /// Tolerated exit probability (0 in the deterministic case).
    pub delta: f64,
}

impl std::fmt::Debug for LearnedLdcbf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LearnedLdcbf")
            .field("c_offset", &self.c_offset)
            .field("l_hat", &self.l_hat)
            .field("beta", &self.beta)
            .field("horizon", &self.horizon)
            .field("alpha", &self.alpha)
            .field("delta", &self.delta)
            .finish()
    }
}

impl LearnedLdcbf {
    pub fn field(&self) -> Shifted<Arc<dyn ScalarField>> {
        Shifted {
            inner: self.base.clone(),
            offset: self.c_offset / self.beta,
        }
    }

    pub fn to_ldcbf(&self) -> Ldcbf {
        Ldcbf::new(Arc::new(self.field()), self.l_hat, self.beta, self.horizon, self.alpha)
            .expect("extraction validated the constants")
    }

    pub fn value(&self, x: &RealVec) -> f64 {
        self.field().value(x)
    }

    /// `(1 - delta) L e^{-beta T} / beta`.
    pub fn initial_threshold(&self) -> f64 {
        (1.0 - self.delta) * self.l_hat * (-self.beta * self.horizon).exp() / self.beta
    }

    pub fn in_initial_set(&self, x: &RealVec) -> bool {
        self.value(x) <= self.initial_threshold()
    }

    pub fn in_safe_set(&self, x: &RealVec) -> bool {
        self.beta * self.value(x) < self.l_hat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub beta: f64,
    pub horizon: f64,
    pub alpha: AlphaFn,
    /// Extra offset added to `c`; `None` uses `1e-3 max |residual|` over the covered samples.
    pub c_margin: Option<f64>,
    /// Fraction of safe samples on which the shifted residual must be
    /// nonnegative; 1 takes the minimum over all of them.
    pub c_coverage: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractReport {
    pub min_residual: f64,
    pub max_abs_residual: f64,
    /// Safe samples whose shifted residual is still negative.
    pub uncovered: usize,
    pub initial_count: usize,
    pub safe_count: usize,
}

/// Builds a barrier from `v` using a supplied immediate-cost estimate per safe sample.
pub fn extract_with_residual(
    v: Arc<dyn ScalarField>,
    residual: &dyn Fn(&RealVec) -> f64,
    safe_samples: &[RealVec],
    unsafe_samples: &[RealVec],
    opts: &ExtractOptions,
) -> Result<(LearnedLdcbf, ExtractReport)> {
    if safe_samples.is_empty() || unsafe_samples.is_empty() {
        return Err(Error::InvalidProblem("extraction needs safe and unsafe samples".into()));
    }
    if !(0.0..=1.0).contains(&opts.delta) {
        return Err(Error::InvalidProblem(format!("delta must be in [0,1], got {}", opts.delta)));
    }
    let residuals: Vec<f64> = safe_samples.iter().map(|x| residual(x)).collect();
    if let Some(i) = residuals.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numerical {
            index: i,
            context: "immediate-cost estimate".into(),
        });
    }
    if !(opts.c_coverage > 0.0 && opts.c_coverage <= 1.0) {
        return Err(Error::InvalidProblem(format!("c_coverage must be in (0,1], got {}", opts.c_coverage)));
    }
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let skip = ((1.0 - opts.c_coverage) * sorted.len() as f64).floor() as usize;
    let covered = &sorted[skip.min(sorted.len() - 1)..];
    let min_residual = sorted[0];
    let max_abs_residual = sorted.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let margin = opts
        .c_margin
        .unwrap_or_else(|| 1e-3 * covered.iter().map(|r| r.abs()).fold(0.0, f64::max));
    let c_offset = (-covered[0]).max(0.0) + margin;
    let uncovered = residuals.iter().filter(|r| **r + c_offset < 0.0).count();

    let field = Shifted {
        inner: v.clone(),
        offset: c_offset / opts.beta,
    };
    let l_hat = unsafe_samples
        .iter()
        .map(|y| opts.beta * field.value(y))
        .fold(f64::INFINITY, f64::min);
    if !(l_hat > 0.0) {
        return Err(Error::DegenerateLhat(l_hat));
    }
    let learned = LearnedLdcbf {
        base: v,
        c_offset,
        l_hat,
        beta: opts.beta,
        horizon: opts.horizon,
        alpha: opts.alpha,
        delta: opts.delta,
    };
    let initial_count = safe_samples.iter().filter(|x| learned.in_initial_set(x)).count();
    if initial_count == 0 {
        return Err(Error::EmptyInitialSet);
    }
    let safe_count = safe_samples.iter().filter(|x| learned.in_safe_set(x)).count();
    Ok((
        learned,
        ExtractReport {
            min_residual,
            max_abs_residual,
            uncovered,
            initial_count,
            safe_count,
        },
    ))
}

/// Turns a continuous-time value estimate for `policy` into a barrier.
///
/// `c` makes the estimated immediate cost nonnegative on `safe_samples`; `L`
/// is the smallest `beta B` over `unsafe_samples`.
pub fn extract_ldcbf(
    v: Arc<dyn ScalarField>,
    model: &dyn ControlAffine,
    policy: &dyn Fn(&RealVec) -> RealVec,
    safe_samples: &[RealVec],
    unsafe_samples: &[RealVec],
    opts: &ExtractOptions,
) -> Result<(LearnedLdcbf, ExtractReport)> {
    let beta = opts.beta;
    let field = v.clone();
    extract_with_residual(
        v,
        &|x| hjb_residual(&*field, model, policy, x, beta),
        safe_samples,
        unsafe_samples,
        opts,
    )
}

/// Bisects each exiting transition to a point just outside the safe set.
///
/// Rollout exits overshoot the boundary by up to one step; the refined points
/// tighten the unsafe infimum.
pub fn refine_exit_points(transitions: &[&Transition], safe: &dyn Fn(&RealVec) -> bool, iters: usize) -> Vec<RealVec> {
    transitions
        .iter()
        .filter(|t| !t.next_safe && safe(&t.x))
        .map(|t| {
            let (mut inside, mut outside) = (t.x.clone(), t.x_next.clone());
            for _ in 0..iters {
                let mid = (&inside + &outside) * 0.5;
                if safe(&mid) {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            outside
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnField, FnModel};

    fn v(x: f64) -> RealVec {
        RealVec::from_vec(vec![x])
    }

    fn opts() -> ExtractOptions {
        ExtractOptions {
            beta: 1.0,
            horizon: 1.0,
            alpha: AlphaFn::new(1.0).unwrap(),
            c_margin: None,
            c_coverage: 1.0,
            delta: 0.0,
        }
    }

    #[test]
    fn constant_value_has_no_initial_set() {
        let model = FnModel::single_integrator(1);
        let safe: Vec<RealVec> = (0..10).map(|k| v(0.1 * k as f64)).collect();
        let unsafe_: Vec<RealVec> = vec![v(1.5)];
        for c in [2.0, 0.0, -1.0] {
            let f: Arc<dyn ScalarField> = Arc::new(FnField::new(1, move |_| c, |_| v(0.0)));
            let err = extract_ldcbf(f, &model, &|_| v(1.0), &safe, &unsafe_, &opts()).unwrap_err();
            assert!(matches!(err, Error::EmptyInitialSet | Error::DegenerateLhat(_)), "{err:?}");
        }
    }

    #[test]
    fn quadratic_value_recovers_sublevel_sets() {
        // V = x^2 under xdot = -x has residual (beta + 2) x^2 >= 0, so c is just the margin
        let model = FnModel::linear_drift(crate::system::RealMat::from_element(1, 1, -1.0));
        let f: Arc<dyn ScalarField> = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
        let safe: Vec<RealVec> = (0..=20).map(|k| v(-1.0 + 0.1 * k as f64)).collect();
        let unsafe_ = vec![v(1.2), v(-1.1)];
        let (b, rep) = extract_ldcbf(f, &model, &|_| v(0.0), &safe, &unsafe_, &opts()).unwrap();
        assert!(rep.min_residual >= 0.0);
        let expected_c = 1e-3 * rep.max_abs_residual;
        assert!((b.c_offset - expected_c).abs() < 1e-15);
        assert!((b.l_hat - (1.21 + expected_c)).abs() < 1e-12);
        assert!(b.in_safe_set(&v(1.09)) && !b.in_safe_set(&v(1.1)));
        let ld = b.to_ldcbf();
        assert_eq!(ld.threshold(), b.initial_threshold());
    }

    #[test]
    fn margin_shifts_leave_safe_set_unchanged() {
        let model = FnModel::single_integrator(1);
        let f: Arc<dyn ScalarField> = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
        let safe: Vec<RealVec> = (0..=20).map(|k| v(-1.0 + 0.1 * k as f64)).collect();
        let unsafe_ = vec![v(1.05), v(-1.3)];
        let grid: Vec<RealVec> = (0..1000).map(|k| v(-2.0 + 0.004 * k as f64)).collect();
        let mut previous: Option<Vec<bool>> = None;
        for m in [0.0, 0.01, 0.2, 0.5] {
            let o = ExtractOptions {
                c_margin: Some(m),
                horizon: 0.01,
                ..opts()
            };
            let (b, _) = extract_ldcbf(f.clone(), &model, &|x| -x, &safe, &unsafe_, &o).unwrap();
            let members: Vec<bool> = grid.iter().map(|x| b.in_safe_set(x)).collect();
            if let Some(p) = &previous {
                assert_eq!(p, &members);
            }
            previous = Some(members);
        }
    }

    #[test]
    fn partial_coverage_ignores_the_worst_residuals() {
        // V = x^2 under xdot = 1 on x in [-1, 1]: residual x^2 - 2x, lowest at x = 1
        let model = FnModel::single_integrator(1);
        let f: Arc<dyn ScalarField> = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
        let safe: Vec<RealVec> = (0..=20).map(|k| v(-1.0 + 0.1 * k as f64)).collect();
        let unsafe_ = vec![v(1.5), v(-1.5)];
        let strict = ExtractOptions { c_margin: Some(0.0), ..opts() };
        let (b, rep) = extract_ldcbf(f.clone(), &model, &|_| v(1.0), &safe, &unsafe_, &strict).unwrap();
        assert!((b.c_offset - 1.0).abs() < 1e-12);
        assert_eq!(rep.uncovered, 0);
        let half = ExtractOptions { c_coverage: 0.5, ..strict };
        let (b, rep) = extract_ldcbf(f, &model, &|_| v(1.0), &safe, &unsafe_, &half).unwrap();
        // residuals sorted ascending; the 11th of 21 is at x = 0 (value 0)
        assert!(b.c_offset.abs() < 1e-12, "{}", b.c_offset);
        assert_eq!(rep.uncovered, 10);
    }

    #[test]
    fn bisection_lands_just_outside() {
        let t = Transition {
            x: v(0.95),
            u: v(1.0),
            cost: 0.0,
            x_next: v(1.05),
            next_safe: false,
        };
        let pts = refine_exit_points(&[&t], &|x| x[0] < 1.0, 40);
        assert_eq!(pts.len(), 1);
        assert!(pts[0][0] >= 1.0 && pts[0][0] < 1.0 + 1e-9);
    }
}
