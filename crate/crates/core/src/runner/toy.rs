//! Barrier learned from the value of a stabilizing policy on `xdot = a x + u`.
//!
//! The safe set is `|x| < 1`, the running cost `x^2` inside and `L` outside.
//! The value is fitted on a grid by one-step backups from every node, turned
//! into a barrier, and then checked two ways: the learned safe set must lie
//! inside the true one, and filtered runs of adversarial nominal controls from
//! the learned initial set must stay safe for the horizon.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{fmt_f, write_csv, Output, Report};
use crate::error::{Error, Result};
use crate::filter::certify_duration;
use crate::rng::stream;
use crate::system::{AlphaFn, FnModel, Polytope, RealMat, RealVec, ScalarField, StateBox};
use crate::value::{beta_from_gamma, extract_ldcbf, n_step_backup, sweep_grid_value, ExtractOptions, GridApproximator, LearnedLdcbf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyRun {
    pub seed: u64,
    /// Open-loop drift coefficient `a`.
    pub drift: f64,
    /// Policy `u = -gain x`.
    pub gain: f64,
    pub u_max: f64,
    pub cost_cap: f64,
    pub gamma: f64,
    pub dt: f64,
    /// Step of the filtered runs. It must be small enough that a run cannot
    /// cross a grid cell in one step, or it skips over the value's steep edge.
    pub sim_dt: f64,
    /// Grid covers `[-domain, domain]`.
    pub domain: f64,
    pub nodes: usize,
    pub sweeps: usize,
    pub tol: f64,
    pub horizon: f64,
    pub alpha_slope: f64,
    /// Points of the set-inclusion check.
    pub check_points: usize,
    pub runs: usize,
}

impl Default for ToyRun {
    fn default() -> Self {
        Self {
            seed: 0,
            drift: 1.0,
            gain: 2.0,
            u_max: 3.0,
            cost_cap: 1.0,
            gamma: 0.99,
            dt: 0.01,
            sim_dt: 1e-4,
            domain: 1.5,
            nodes: 301,
            sweeps: 100_000,
            tol: 1e-12,
            horizon: 2.0,
            alpha_slope: 1.0,
            check_points: 1000,
            runs: 100,
        }
    }
}

impl ToyRun {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gain > self.drift
            && self.u_max >= self.gain * self.domain
            && self.cost_cap > 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.dt > 0.0
            && self.sim_dt > 0.0
            && self.domain > 1.0
            && self.nodes >= 3
            && self.horizon > 0.0
            && self.alpha_slope >= 0.0
            && self.check_points > 0
            && self.runs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("toy settings need gain > drift, u_max >= gain * domain, domain > 1 and positive sizes".into()))
        }
    }

    pub fn model(&self) -> FnModel {
        let a = self.drift;
        FnModel::new(1, 1, move |x| x * a, |_| RealMat::identity(1, 1))
    }
}

pub fn safe(x: &RealVec) -> bool {
    x[0].abs() < 1.0
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub learned: LearnedLdcbf,
    pub td_residual: f64,
    pub sweeps: usize,
    /// Check points in the learned safe set but outside `|x| < 1`.
    pub inclusion_violations: usize,
    pub initial_points: usize,
    /// Runs that stayed in `|x| < 1` for the whole horizon.
    pub safe_runs: usize,
    pub exit_times: Vec<Option<f64>>,
}

/// Adversarial nominal controls for the filtered runs.
fn nominal(kind: usize, u_max: f64, seed: u64) -> Box<dyn FnMut(&RealVec) -> RealVec> {
    let mut rng = stream(seed, 1);
    match kind % 5 {
        0 => Box::new(move |_| RealVec::from_element(1, u_max)),
        1 => Box::new(move |_| RealVec::from_element(1, -u_max)),
        2 => Box::new(move |x| RealVec::from_element(1, u_max * x[0].signum())),
        3 => Box::new(move |_| RealVec::from_element(1, rng.random_range(-u_max..u_max))),
        _ => {
            let mut k = 0usize;
            Box::new(move |_| {
                k += 1;
                RealVec::from_element(1, u_max * (0.05 * k as f64).sin())
            })
        }
    }
}

pub fn learn(cfg: &ToyRun) -> Result<ToyOutcome> {
    cfg.validate()?;
    let model = cfg.model();
    let gain = cfg.gain;
    let policy = move |x: &RealVec| x * -gain;
    let dt = cfg.dt;
    let per_step_cap = cfg.cost_cap * dt;
    let cost = |x: &RealVec| dt * if safe(x) { x[0] * x[0] } else { cfg.cost_cap };
    let domain = StateBox::new(vec![-cfg.domain], vec![cfg.domain])?;
    let mut grid = GridApproximator::new(&domain, &[cfg.nodes], per_step_cap / (1.0 - cfg.gamma));
    let nodes: Vec<RealVec> = (0..grid.n_nodes()).map(|k| grid.node(k)).collect();
    let backups: Vec<_> = nodes
        .iter()
        .map(|x| n_step_backup(&model, &policy, &cost, &safe, x, 1, dt, cfg.gamma))
        .collect();
    let td = sweep_grid_value(&mut grid, &backups, &|x| x.clone(), cfg.gamma, per_step_cap, cfg.sweeps, cfg.tol)?;

    let (safe_nodes, unsafe_nodes): (Vec<RealVec>, Vec<RealVec>) = nodes.into_iter().partition(safe);
    let opts = ExtractOptions {
        beta: beta_from_gamma(cfg.gamma, dt),
        horizon: cfg.horizon,
        alpha: AlphaFn::new(cfg.alpha_slope)?,
        c_margin: None,
        c_coverage: 1.0,
        delta: 0.0,
    };
    let v: Arc<dyn ScalarField> = Arc::new(grid);
    let (learned, _) = extract_ldcbf(v, &model, &policy, &safe_nodes, &unsafe_nodes, &opts)?;

    let span = 2.0 * cfg.domain;
    let points: Vec<RealVec> = (0..cfg.check_points)
        .map(|k| RealVec::from_element(1, -cfg.domain + span * (k as f64 + 0.5) / cfg.check_points as f64))
        .collect();
    let inclusion_violations = points.iter().filter(|x| learned.in_safe_set(x) && !safe(x)).count();
    let initial: Vec<&RealVec> = points.iter().filter(|x| learned.in_initial_set(x)).collect();
    if initial.is_empty() {
        return Err(Error::EmptyInitialSet);
    }

    let ld = learned.to_ldcbf();
    let set = Polytope::cube(1, cfg.u_max)?;
    let sim_dt = cfg.sim_dt;
    let steps = (cfg.horizon / sim_dt).round() as usize;
    let mut exit_times = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = stream(cfg.seed, run as u64);
        let x0 = initial[rng.random_range(0..initial.len())].clone();
        let cert = certify_duration(&ld, &model, nominal(run, cfg.u_max, cfg.seed ^ run as u64), &x0, &set, sim_dt, cfg.horizon)?;
        let exit = cert.states.iter().take(steps).position(|x| !safe(x)).map(|k| k as f64 * sim_dt);
        exit_times.push(exit);
    }
    Ok(ToyOutcome {
        td_residual: td.final_residual,
        sweeps: td.iterations,
        inclusion_violations,
        initial_points: initial.len(),
        safe_runs: exit_times.iter().filter(|e| e.is_none()).count(),
        exit_times,
        learned,
    })
}

pub fn run(cfg: &ToyRun, out: &Output) -> Result<(Report, ToyOutcome)> {
    let o = learn(cfg)?;
    let mut report = Report::new("learn-ldcbf");
    report.check(
        "value fit: TD residual below 1e-4",
        o.td_residual < 1e-4,
        format!("mean residual {:.2e} after {} sweeps", o.td_residual, o.sweeps),
    );
    report.check(
        "learned safe set inside |x| < 1",
        o.inclusion_violations == 0,
        format!("{} violations on {} points", o.inclusion_violations, cfg.check_points),
    );
    let need = (cfg.runs * 99).div_ceil(100);
    report.check(
        "filtered runs from the initial set stay safe for T",
        o.safe_runs >= need,
        format!("{}/{} runs safe, {} initial points, L_hat {:.4}, c {:.2e}", o.safe_runs, cfg.runs, o.initial_points, o.learned.l_hat, o.learned.c_offset),
    );
    if let Some(p) = out.path("learn_ldcbf_value.csv") {
        let n = cfg.check_points;
        let rows = (0..n).map(|k| {
            let x = RealVec::from_element(1, -cfg.domain + 2.0 * cfg.domain * (k as f64 + 0.5) / n as f64);
            vec![
                fmt_f(x[0]),
                fmt_f(o.learned.base.value(&x)),
                fmt_f(o.learned.value(&x)),
                u8::from(o.learned.in_safe_set(&x)).to_string(),
                u8::from(o.learned.in_initial_set(&x)).to_string(),
            ]
        });
        write_csv(&p, "learn-ldcbf", cfg.seed, cfg, &["x", "V", "B", "in_safe", "in_initial"], rows)?;
        report.files.push(p);
    }
    if let Some(p) = out.path("learn_ldcbf_runs.csv") {
        let rows = o.exit_times.iter().enumerate().map(|(k, e)| {
            vec![k.to_string(), (k % 5).to_string(), e.map(fmt_f).unwrap_or_default()]
        });
        write_csv(&p, "learn-ldcbf", cfg.seed, cfg, &["run", "nominal", "exit_time"], rows)?;
        report.files.push(p);
    }
    Ok((report, o))
}
