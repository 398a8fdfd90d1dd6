//! Monte-Carlo check of the exit-probability bound for a filtered
//! Ornstein-Uhlenbeck process `dx = (-k x + u) dt + sigma dw`.
//!
//! The barrier is `B = x^2 + b0`. With `beta b0 >= sigma^2` the admissible
//! halfspace contains `u = 0` at the origin, so the filter never needs slack.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{fmt_f, write_csv, Output, Report};
use crate::error::{Error, Result};
use crate::stochastic::{exit_probability_bound, mc_exit_probability, sldcbf_filter, DiffusionModel, McConfig, McReport};
use crate::system::{FnField, FnModel, Polytope, RealMat, RealVec, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticRun {
    pub seed: u64,
    pub k: f64,
    pub sigma: f64,
    pub beta: f64,
    pub cost_cap: f64,
    /// Constant `b0` added to `x^2`.
    pub offset: f64,
    /// Constant nominal control, filtered at every step.
    pub u_nom: f64,
    pub u_max: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// `(x0, T)` pairs.
    pub pairs: Vec<[f64; 2]>,
    /// Steps between observations of the discounted barrier.
    pub observe_every: usize,
}

impl Default for StochasticRun {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 1.0,
            sigma: 0.3,
            beta: 1.0,
            cost_cap: 1.0,
            offset: 0.09,
            u_nom: 2.0,
            u_max: 5.0,
            dt: 1e-3,
            n_paths: 10_000,
            pairs: vec![[0.0, 0.5], [0.2, 0.5], [0.3, 1.0], [-0.4, 0.3], [0.1, 1.5]],
            observe_every: 50,
        }
    }
}

impl StochasticRun {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma >= 0.0
            && self.beta > 0.0
            && self.cost_cap > 0.0
            && self.offset >= 0.0
            && self.u_max > 0.0
            && self.u_nom.abs() <= self.u_max
            && self.dt > 0.0
            && self.n_paths >= 100
            && self.observe_every > 0
            && !self.pairs.is_empty()
            && self.pairs.iter().all(|p| p[1] > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid stochastic settings".into()))
        }
    }

    pub fn diffusion(&self) -> DiffusionModel {
        let k = self.k;
        let sigma = self.sigma;
        let drift = Arc::new(FnModel::new(1, 1, move |x| RealVec::from_element(1, -k * x[0]), |_| RealMat::identity(1, 1)));
        DiffusionModel::new(drift, move |_| RealMat::from_element(1, 1, sigma))
    }

    pub fn barrier(&self) -> FnField {
        let b0 = self.offset;
        FnField::new(1, move |x| x[0] * x[0] + b0, |x| RealVec::from_element(1, 2.0 * x[0]))
            .with_hessian(|_| RealMat::from_element(1, 1, 2.0))
    }
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub x0: f64,
    pub horizon: f64,
    pub bound: f64,
    pub mc: McReport,
    /// Largest `(mean[j+1] - mean[j]) / se[j]` of the discounted barrier.
    pub worst_rise: f64,
}

pub fn simulate(cfg: &StochasticRun) -> Result<Vec<PairOutcome>> {
    cfg.validate()?;
    let dm = cfg.diffusion();
    let field = cfg.barrier();
    let set = Polytope::cube(1, cfg.u_max)?;
    let u_nom = RealVec::from_element(1, cfg.u_nom);
    let policy = |x: &RealVec| match sldcbf_filter(&field, &dm, x, &u_nom, &set, cfg.beta) {
        Ok(r) => r.u,
        Err(_) => RealVec::zeros(1),
    };
    let (beta, cap) = (cfg.beta, cfg.cost_cap);
    let safe = |x: &RealVec| beta * field.value(x) < cap;
    let observe = |t: f64, x: &RealVec| (-beta * t).exp() * field.value(x);
    cfg.pairs
        .iter()
        .enumerate()
        .map(|(j, &[x0, horizon])| {
            let x = RealVec::from_element(1, x0);
            let mc = mc_exit_probability(
                &dm,
                &policy,
                &x,
                &safe,
                &McConfig {
                    horizon,
                    dt: cfg.dt,
                    n_paths: cfg.n_paths,
                    seed: crate::rng::derive_seed(cfg.seed, j as u64),
                    observe_every: cfg.observe_every,
                },
                &observe,
            )?;
            let worst_rise = (0..mc.increment_se.len())
                .map(|i| {
                    let d = mc.mean[i + 1] - mc.mean[i];
                    let se = mc.increment_se[i];
                    if se > 0.0 {
                        d / se
                    } else if d > 1e-15 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(PairOutcome {
                x0,
                horizon,
                bound: exit_probability_bound(field.value(&x), cap, beta, horizon),
                mc,
                worst_rise,
            })
        })
        .collect()
}

pub fn run(cfg: &StochasticRun, out: &Output) -> Result<(Report, Vec<PairOutcome>)> {
    let outcomes = simulate(cfg)?;
    let mut report = Report::new("stochastic-check");
    for o in &outcomes {
        report.check(
            format!("x0={} T={}: exit frequency within bound", o.x0, o.horizon),
            o.mc.freq <= o.bound + o.mc.halfwidth,
            format!("freq {:.4} bound {:.4} halfwidth {:.4}", o.mc.freq, o.bound, o.mc.halfwidth),
        );
        report.check(
            format!("x0={} T={}: discounted barrier non-increasing", o.x0, o.horizon),
            o.worst_rise <= 2.0,
            format!("largest rise {:.2} standard errors", o.worst_rise),
        );
    }
    if let Some(p) = out.path("stochastic_pairs.csv") {
        let rows = outcomes.iter().map(|o| {
            vec![fmt_f(o.x0), fmt_f(o.horizon), fmt_f(o.bound), fmt_f(o.mc.freq), fmt_f(o.mc.halfwidth), o.mc.exits.to_string()]
        });
        write_csv(&p, "stochastic-check", cfg.seed, cfg, &["x0", "T", "bound", "freq", "halfwidth", "exits"], rows)?;
        report.files.push(p);
    }
    if let Some(p) = out.path("stochastic_supermartingale.csv") {
        let rows = outcomes.iter().enumerate().flat_map(|(j, o)| {
            (0..o.mc.times.len()).map(move |i| {
                let se = if i == 0 { 0.0 } else { o.mc.increment_se[i - 1] };
                vec![j.to_string(), fmt_f(o.mc.times[i]), fmt_f(o.mc.mean[i]), fmt_f(se)]
            })
        });
        write_csv(&p, "stochastic-check", cfg.seed, cfg, &["pair", "t", "mean_discounted_B", "increment_se"], rows)?;
        report.files.push(p);
    }
    Ok((report, outcomes))
}
