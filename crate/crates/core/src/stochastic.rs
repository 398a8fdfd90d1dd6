//! Barriers for diffusions `dx = (f + g u) dt + eta dw`.
//!
//! The condition `-G(B) <= beta B` on the generator makes `e^{-beta t} B` a
//! supermartingale along the process stopped at its exit from the safe set,
//! which bounds the exit probability before `T` by `beta e^{beta T} B(x0) / L`.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filter::{filter_halfspace, FilterReport};
use crate::qp::Halfspace;
use crate::rng::{stream, Rng};
use crate::system::{ControlAffine, Polytope, RealMat, RealVec, ScalarField};
use crate::value::{extract_with_residual, ExtractOptions, ExtractReport, LearnedLdcbf};

type NoiseFn = dyn Fn(&RealVec) -> RealMat + Send + Sync;

#[derive(Clone)]
pub struct DiffusionModel {
    pub drift: Arc<dyn ControlAffine>,
    eta: Arc<NoiseFn>,
}

impl DiffusionModel {
    pub fn new(drift: Arc<dyn ControlAffine>, eta: impl Fn(&RealVec) -> RealMat + Send + Sync + 'static) -> Self {
        Self {
            drift,
            eta: Arc::new(eta),
        }
    }

    /// Noise gain `eta(x)`, `n_x x n_w`.
    pub fn eta(&self, x: &RealVec) -> RealMat {
        (self.eta)(x)
    }
}

/// Symmetrized central-difference Hessian built from the gradient.
pub fn hessian_fd(field: &dyn ScalarField, x: &RealVec, h: f64) -> RealMat {
    let n = x.len();
    let mut hess = RealMat::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let up = field.gradient(&xp);
        xp[j] = orig - h;
        let down = field.gradient(&xp);
        xp[j] = orig;
        hess.set_column(j, &((up - down) / (2.0 * h)));
    }
    (&hess + hess.transpose()) * 0.5
}

fn diffusion_trace(field: &dyn ScalarField, dm: &DiffusionModel, x: &RealVec) -> f64 {
    let eta = dm.eta(x);
    if eta.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let hess = field.hessian(x).unwrap_or_else(|| hessian_fd(field, x, 1e-4));
    (hess * &eta * eta.transpose()).trace()
}

/// `G(B)(x, u) = -1/2 tr[B_xx eta eta'] - grad B' (f + g u)`.
pub fn generator_apply(field: &dyn ScalarField, dm: &DiffusionModel, x: &RealVec, u: &RealVec) -> Result<f64> {
    let h = dm.drift.drift(x) + dm.drift.input_matrix(x) * u;
    let g = -0.5 * diffusion_trace(field, dm, x) - field.gradient(x).dot(&h);
    if !g.is_finite() {
        return Err(Error::Numerical {
            index: 0,
            context: "generator value".into(),
        });
    }
    Ok(g)
}

/// Controls satisfying `-G(B) <= beta B`:
/// `grad B' g u <= beta B - 1/2 tr[B_xx eta eta'] - grad B' f`.
pub fn sldcbf_halfspace(field: &dyn ScalarField, dm: &DiffusionModel, x: &RealVec, beta: f64) -> Halfspace {
    let grad = field.gradient(x);
    let a = dm.drift.input_matrix(x).transpose() * &grad;
    let c = beta * field.value(x) - 0.5 * diffusion_trace(field, dm, x) - grad.dot(&dm.drift.drift(x));
    Halfspace::new(a, c)
}

pub fn sldcbf_filter(
    field: &dyn ScalarField,
    dm: &DiffusionModel,
    x: &RealVec,
    u_nom: &RealVec,
    set: &Polytope,
    beta: f64,
) -> Result<FilterReport> {
    filter_halfspace(&sldcbf_halfspace(field, dm, x, beta), u_nom, set)
}

/// `min(1, beta e^{beta T} B0 / L)`.
pub fn exit_probability_bound(b0: f64, cost_cap: f64, beta: f64, horizon: f64) -> f64 {
    (beta * (beta * horizon).exp() * b0 / cost_cap).min(1.0)
}

/// Half-width of the 95% Wilson score interval.
pub fn wilson_halfwidth(successes: usize, n: usize) -> f64 {
    let z = 1.96f64;
    let n = n as f64;
    let p = successes as f64 / n;
    z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / (1.0 + z * z / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Record the observable every this many steps (0 disables).
    pub observe_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub exits: usize,
    pub n_paths: usize,
    pub freq: f64,
    pub halfwidth: f64,
    /// Observation times.
    pub times: Vec<f64>,
    /// Per-time mean of the observable over paths.
    pub mean: Vec<f64>,
    /// Standard error of the mean increment between consecutive observation times
    /// (paired over paths); `increment_se[k]` belongs to `mean[k+1] - mean[k]`.
    pub increment_se: Vec<f64>,
}

/// Euler–Maruyama paths stopped at their first exit from the safe set.
///
/// Each path draws from its own stream `(seed, path)`. `observe(t, x)` is
/// evaluated on the stopped state at every observation time.
pub fn mc_exit_probability(
    dm: &DiffusionModel,
    policy: &(dyn Fn(&RealVec) -> RealVec + Sync),
    x0: &RealVec,
    safe: &(dyn Fn(&RealVec) -> bool + Sync),
    cfg: &McConfig,
    observe: &(dyn Fn(f64, &RealVec) -> f64 + Sync),
) -> Result<McReport> {
    if cfg.n_paths < 100 {
        return Err(Error::InvalidProblem("need at least 100 paths".into()));
    }
    if !(cfg.dt > 0.0) || !(cfg.horizon > 0.0) {
        return Err(Error::InvalidProblem("need dt > 0 and horizon > 0".into()));
    }
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let n_obs = if cfg.observe_every == 0 { 0 } else { steps / cfg.observe_every + 1 };
    let mut sum = vec![0.0; n_obs];
    let mut inc_sum = vec![0.0; n_obs.saturating_sub(1)];
    let mut inc_sq = vec![0.0; n_obs.saturating_sub(1)];
    let mut exits = 0;
    let sqrt_dt = cfg.dt.sqrt();
    let mut obs = vec![0.0; n_obs];
    for path in 0..cfg.n_paths {
        let mut rng: Rng = stream(cfg.seed, path as u64);
        let mut x = x0.clone();
        let mut stopped = !safe(&x);
        if stopped {
            exits += 1;
        }
        for k in 0..=steps {
            if n_obs > 0 && k % cfg.observe_every == 0 {
                obs[k / cfg.observe_every] = observe(k as f64 * cfg.dt, &x);
            }
            if k == steps || stopped {
                if stopped && n_obs > 0 {
                    // frozen state: remaining observations use the stopped state
                    let first = k / cfg.observe_every + usize::from(k % cfg.observe_every != 0);
                    for j in first..n_obs {
                        obs[j] = observe(j as f64 * cfg.observe_every as f64 * cfg.dt, &x);
                    }
                }
                break;
            }
            let u = policy(&x);
            let drift = dm.drift.drift(&x) + dm.drift.input_matrix(&x) * &u;
            let eta = dm.eta(&x);
            let dw = RealVec::from_fn(eta.ncols(), |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sqrt_dt
            });
            x = &x + drift * cfg.dt + eta * dw;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    index: path,
                    context: "diffusion path became non-finite".into(),
                });
            }
            if !safe(&x) {
                stopped = true;
                exits += 1;
            }
        }
        for j in 0..n_obs {
            sum[j] += obs[j];
            if j + 1 < n_obs {
                let d = obs[j + 1] - obs[j];
                inc_sum[j] += d;
                inc_sq[j] += d * d;
            }
        }
    }
    let n = cfg.n_paths as f64;
    let increment_se = inc_sum
        .iter()
        .zip(&inc_sq)
        .map(|(s, q)| {
            let m = s / n;
            ((q / n - m * m).max(0.0) / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(McReport {
        exits,
        n_paths: cfg.n_paths,
        freq: exits as f64 / n,
        halfwidth: wilson_halfwidth(exits, cfg.n_paths),
        times: (0..n_obs).map(|j| (j * cfg.observe_every) as f64 * cfg.dt).collect(),
        mean: sum.iter().map(|s| s / n).collect(),
        increment_se,
    })
}

/// Stochastic counterpart of value-based extraction: the immediate-cost
/// estimate is `beta V + G(V)` and the initial set is scaled by `1 - delta`.
pub fn extract_sldcbf(
    v: Arc<dyn ScalarField>,
    dm: &DiffusionModel,
    policy: &dyn Fn(&RealVec) -> RealVec,
    safe_samples: &[RealVec],
    unsafe_samples: &[RealVec],
    opts: &ExtractOptions,
) -> Result<(LearnedLdcbf, ExtractReport)> {
    let field = v.clone();
    let beta = opts.beta;
    extract_with_residual(
        v,
        &|x| match generator_apply(&*field, dm, x, &policy(x)) {
            Ok(g) => beta * field.value(x) + g,
            Err(_) => f64::NAN,
        },
        safe_samples,
        unsafe_samples,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::filter_control;
    use crate::system::{AlphaFn, FnField, FnModel, Ldcbf};

    fn v(x: f64) -> RealVec {
        RealVec::from_vec(vec![x])
    }

    fn ou(k: f64, sigma: f64) -> DiffusionModel {
        let drift = Arc::new(FnModel::new(1, 1, move |x| v(-k * x[0]), |_| RealMat::identity(1, 1)));
        DiffusionModel::new(drift, move |_| RealMat::from_element(1, 1, sigma))
    }

    #[test]
    fn generator_by_hand() {
        let b = FnField::weighted_square(vec![0.0], vec![1.0]);
        let g = generator_apply(&b, &ou(1.0, 0.5), &v(1.0), &v(0.0)).unwrap();
        assert!((g - 1.75).abs() < 1e-12);
        // finite-difference Hessian path
        let b_fd = FnField::new(1, |x| x[0] * x[0], |x| v(2.0 * x[0]));
        let g_fd = generator_apply(&b_fd, &ou(1.0, 0.5), &v(1.0), &v(0.0)).unwrap();
        assert!((g_fd - 1.75).abs() < 1e-8);
    }

    #[test]
    fn zero_noise_and_linear_barrier() {
        let b = FnField::weighted_square(vec![0.0], vec![1.0]);
        let g = generator_apply(&b, &ou(1.0, 0.0), &v(0.7), &v(0.2)).unwrap();
        assert!((g + 1.4 * (-0.7 + 0.2)).abs() < 1e-12);
        let lin = FnField::new(1, |x| 3.0 * x[0], |_| v(3.0));
        let gl = generator_apply(&lin, &ou(1.0, 0.9), &v(0.5), &v(0.0)).unwrap();
        assert!((gl - 1.5).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_reduces_to_deterministic_filter() {
        let field = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
        let dm = ou(0.5, 0.0);
        let det = Ldcbf::new(field.clone(), 1.0, 0.8, 1.0, AlphaFn::new(0.0).unwrap()).unwrap();
        let set = Polytope::cube(1, 2.0).unwrap();
        for k in 0..20 {
            let x = v(-0.9 + 0.09 * k as f64);
            let s = sldcbf_filter(&*field, &dm, &x, &v(1.5), &set, 0.8).unwrap();
            let d = filter_control(&det, &*dm.drift, &x, &v(1.5), &set).unwrap();
            assert_eq!(s, d);
        }
    }

    #[test]
    fn controlled_diffusion_clamp() {
        // B = x^2, dx = u dt + 0.3 dw: 2x u <= beta x^2 - 0.09
        let drift = Arc::new(FnModel::single_integrator(1));
        let dm = DiffusionModel::new(drift, |_| RealMat::from_element(1, 1, 0.3));
        let b = FnField::weighted_square(vec![0.0], vec![1.0]);
        let set = Polytope::cube(1, 5.0).unwrap();
        let x = v(0.5);
        let r = sldcbf_filter(&b, &dm, &x, &v(3.0), &set, 2.0).unwrap();
        assert!((r.u[0] - (2.0 * 0.25 - 0.09) / 1.0).abs() < 1e-12);
        let ok = sldcbf_filter(&b, &dm, &x, &v(-1.0), &set, 2.0).unwrap();
        assert!(!ok.modified);
    }

    #[test]
    fn bound_values() {
        assert_eq!(exit_probability_bound(0.0, 1.0, 0.1, 5.0), 0.0);
        assert!((exit_probability_bound(3.0, 1.0, 0.1, 5.0) - 0.3f64 * 0.5f64.exp()).abs() < 1e-12);
        let (l, beta, t, delta) = (2.0, 0.3f64, 4.0, 0.2);
        let b0 = (1.0 - delta) * l * (-beta * t).exp() / beta;
        assert!((exit_probability_bound(b0, l, beta, t) - (1.0 - delta)).abs() < 1e-12);
    }

    #[test]
    fn wilson_is_sane() {
        let h = wilson_halfwidth(0, 10_000);
        assert!(h > 0.0 && h < 5e-4);
        assert!((wilson_halfwidth(5000, 10_000) - 0.0098).abs() < 1e-4);
    }

    #[test]
    fn deterministic_limits() {
        let still = ou(1.0, 0.0);
        let cfg = McConfig {
            horizon: 1.0,
            dt: 1e-3,
            n_paths: 100,
            seed: 0,
            observe_every: 0,
        };
        let r = mc_exit_probability(&still, &|_| v(0.0), &v(0.5), &|x| x[0].abs() < 1.0, &cfg, &|_, _| 0.0).unwrap();
        assert_eq!(r.freq, 0.0);
        // exits at t = 0.5 under u = 2 from x0 = 0
        let ramp = DiffusionModel::new(Arc::new(FnModel::single_integrator(1)), |_| RealMat::zeros(1, 1));
        let r = mc_exit_probability(&ramp, &|_| v(2.0), &v(0.0), &|x| x[0] < 1.0, &cfg, &|_, _| 0.0).unwrap();
        assert_eq!(r.freq, 1.0);
    }

    #[test]
    fn stopped_observations_freeze() {
        let ramp = DiffusionModel::new(Arc::new(FnModel::single_integrator(1)), |_| RealMat::zeros(1, 1));
        let cfg = McConfig {
            horizon: 1.0,
            dt: 0.01,
            n_paths: 100,
            seed: 0,
            observe_every: 10,
        };
        let r = mc_exit_probability(&ramp, &|_| v(2.0), &v(0.0), &|x| x[0] < 1.0, &cfg, &|_, x| x[0]).unwrap();
        assert_eq!(r.mean.len(), 11);
        let last = *r.mean.last().unwrap();
        assert!(last >= 1.0 && last < 1.03);
        assert_eq!(r.mean[6], last);
    }

    #[test]
    fn extraction_scales_initial_set() {
        let dm = ou(1.0, 0.1);
        let field: Arc<dyn ScalarField> = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
        let safe: Vec<RealVec> = (0..=20).map(|k| v(-1.0 + 0.1 * k as f64)).collect();
        let unsafe_ = vec![v(1.2)];
        let mut o = ExtractOptions {
            beta: 1.0,
            horizon: 1.0,
            alpha: AlphaFn::new(0.0).unwrap(),
            c_margin: Some(0.0),
            c_coverage: 1.0,
            delta: 0.0,
        };
        let (b0, _) = extract_sldcbf(field.clone(), &dm, &|_| v(0.0), &safe, &unsafe_, &o).unwrap();
        o.delta = 0.5;
        let (b1, _) = extract_sldcbf(field, &dm, &|_| v(0.0), &safe, &unsafe_, &o).unwrap();
        assert!((b1.initial_threshold() - 0.5 * b0.initial_threshold()).abs() < 1e-15);
        // residual beta x^2 - sigma^2 + 2 x^2 is negative at the origin, so c = sigma^2
        assert!((b0.c_offset - 0.01).abs() < 1e-9);
    }
}
