//! Cart-pole: balance training, barrier learning, filtered durations and the
//! move-task comparison with and without the learned barrier.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{fmt_f, write_csv, Output, Report};
use crate::envs::cartpole::pole_up;
use crate::envs::{CartPole, CartPoleParams};
use crate::error::{Error, Result};
use crate::filter::{filter_halfspace, ldcbf_halfspace};
use crate::nn::Mlp;
use crate::rng::stream;
use crate::system::{rk4_step, Ldcbf, Polytope, RealVec};
use crate::trainer::cartpole::{
    actor_policy, barrier_for_actor, mean, pole_duration, run_move_task, run_pipeline, success_rates, train_balance_actor,
    DurationSuite, EpisodeStats, MoveConfig, PipelineConfig, PipelineOutput,
};

fn metrics_rows(table: &[Vec<EpisodeStats>], dt: f64) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (trial, eps) in table.iter().enumerate() {
        for (ep, s) in eps.iter().enumerate() {
            rows.push(vec![
                (ep + 1).to_string(),
                trial.to_string(),
                u8::from(s.success).to_string(),
                fmt_f(s.steps as f64 * dt),
                fmt_f(s.mean_slack),
            ]);
        }
    }
    rows
}

const METRICS: [&str; 5] = ["episode", "trial", "success", "duration_s", "mean_slack"];

/// One filtered run of the uniform-random nominal policy, as CSV rows.
fn filtered_trace(cp: &CartPole, barrier: &Ldcbf, cfg: &PipelineConfig) -> Result<Vec<Vec<String>>> {
    let set = Polytope::cube(1, 1.0)?;
    let task = &cfg.balance_task;
    let mut rng = stream(cfg.duration_seed, 0);
    let mut x = task.reset(&mut rng);
    let steps = (cfg.seconds / task.dt).round() as usize;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        if !pole_up(&x, 0.2) {
            break;
        }
        let u_nom: f64 = rng.random_range(-1.0..1.0);
        let r = filter_halfspace(&ldcbf_halfspace(barrier, cp, &x), &RealVec::from_element(1, u_nom), &set)?;
        rows.push(vec![
            fmt_f(k as f64 * task.dt),
            fmt_f(x[0]),
            fmt_f(x[1]),
            fmt_f(x[2]),
            fmt_f(x[3]),
            fmt_f(u_nom),
            fmt_f(r.u[0]),
            fmt_f(barrier.value(&x)),
            fmt_f(r.slack),
        ]);
        x = rk4_step(cp, &x, &r.u, task.dt);
    }
    Ok(rows)
}

/// Runs of the unfiltered balance actor that keep the pole up for the full time.
pub fn balance_holds(cp: &CartPole, actor: &Mlp, cfg: &PipelineConfig) -> Result<usize> {
    let policy = actor_policy(actor, cfg.balance_task.scaling);
    let mut held = 0;
    for k in 0..cfg.trials {
        let x0 = cfg.balance_task.reset(&mut stream(cfg.duration_seed ^ 0xba1, k as u64));
        if pole_duration(cp, &x0, cfg.balance_task.dt, cfg.seconds, |x| Ok(policy(x)))? >= cfg.seconds {
            held += 1;
        }
    }
    Ok(held)
}

pub fn duration_checks(report: &mut Report, d: &DurationSuite, horizon: f64) {
    let (r, c, s) = (mean(&d.random), mean(&d.constant), mean(&d.steep));
    report.check("filtered random policy lasts at least T", r >= horizon, format!("mean {r:.2} s (T = {horizon})"));
    report.check(
        "filtered constant policy lasts at least 0.8 T",
        c >= 0.8 * horizon,
        format!("mean {c:.2} s (floor {:.2})", 0.8 * horizon),
    );
    report.check("steeper alpha ends sooner", s < r, format!("mean {s:.2} s vs {r:.2} s"));
}

pub fn run(cfg: &PipelineConfig, out: &Output) -> Result<(Report, PipelineOutput)> {
    let cp = CartPole::new(CartPoleParams::default())?;
    let p = run_pipeline(&cp, cfg)?;
    let mut report = Report::new("cartpole");
    let held = balance_holds(&cp, &p.actor, cfg)?;
    report.check(
        "balance actor holds the pole",
        held * 10 >= 8 * cfg.trials,
        format!("{held}/{} runs reach {} s", cfg.trials, cfg.seconds),
    );
    duration_checks(&mut report, &p.durations, cfg.horizon);
    let seed = cfg.balance_seed;
    if let Some(path) = out.path("cartpole_balance_metrics.csv") {
        write_csv(&path, "cartpole", seed, cfg, &METRICS, metrics_rows(std::slice::from_ref(&p.balance), cfg.balance_task.dt))?;
        report.files.push(path);
    }
    if let Some(path) = out.path("cartpole_durations.csv") {
        let rows = [("random", &p.durations.random), ("constant", &p.durations.constant), ("steep_random", &p.durations.steep)]
            .into_iter()
            .flat_map(|(name, d)| d.iter().enumerate().map(move |(k, s)| vec![name.to_string(), k.to_string(), fmt_f(*s)]));
        write_csv(&path, "cartpole", seed, cfg, &["policy", "trial", "duration_s"], rows)?;
        report.files.push(path);
    }
    if let Some(path) = out.path("cartpole_trace.csv") {
        let rows = filtered_trace(&cp, &p.learned.to_ldcbf(), cfg)?;
        write_csv(&path, "cartpole", seed, cfg, &["t", "p", "p_dot", "psi", "psi_dot", "u_nom", "u", "B", "slack"], rows)?;
        report.files.push(path);
    }
    Ok((report, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferRun {
    pub pipeline: PipelineConfig,
    pub moves: MoveConfig,
    pub batches: usize,
    /// Batch `b` trains with seed `batch_seed + b`.
    pub batch_seed: u64,
}

impl Default for TransferRun {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            moves: MoveConfig::default(),
            batches: 10,
            batch_seed: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchOutcome {
    pub with_rates: Vec<f64>,
    pub without_rates: Vec<f64>,
}

impl BatchOutcome {
    pub fn cumulative(&self) -> (f64, f64) {
        (self.with_rates.iter().sum(), self.without_rates.iter().sum())
    }
}

pub fn run_transfer(cfg: &TransferRun, out: &Output) -> Result<(Report, Vec<BatchOutcome>)> {
    cfg.pipeline.validate()?;
    cfg.moves.ddpg.validate()?;
    if cfg.batches == 0 || cfg.moves.episodes == 0 || cfg.moves.trials == 0 {
        return Err(Error::Config("transfer needs at least one batch, episode and trial".into()));
    }
    let cp = CartPole::new(CartPoleParams::default())?;
    let (actor, _) = train_balance_actor(&cp, &cfg.pipeline)?;
    let (learned, _, _) = barrier_for_actor(&cp, &actor, &cfg.pipeline)?;
    let barrier = learned.to_ldcbf();
    let dt = crate::trainer::cartpole::TaskConfig::movement().dt;
    let mut report = Report::new("transfer");
    let mut batches = Vec::with_capacity(cfg.batches);
    for b in 0..cfg.batches {
        let seed = cfg.batch_seed + b as u64;
        let with = run_move_task(&cp, &actor, Some(&barrier), &cfg.moves, seed)?;
        let without = run_move_task(&cp, &actor, None, &cfg.moves, seed)?;
        for (name, table) in [("with", &with), ("without", &without)] {
            if let Some(path) = out.path(&format!("transfer_{name}_batch{b}.csv")) {
                write_csv(&path, "transfer", seed, cfg, &METRICS, metrics_rows(table, dt))?;
                report.files.push(path);
            }
        }
        batches.push(BatchOutcome {
            with_rates: success_rates(&with),
            without_rates: success_rates(&without),
        });
    }
    let wins = batches.iter().filter(|o| o.cumulative().0 > o.cumulative().1).count();
    let need = (cfg.batches * 9).div_ceil(10);
    let cums: Vec<String> = batches.iter().map(|o| format!("{:.1}/{:.1}", o.cumulative().0, o.cumulative().1)).collect();
    report.check(
        "barrier raises cumulative success",
        wins >= need,
        format!("{wins}/{} batches (with/without: {})", cfg.batches, cums.join(" ")),
    );
    let last: Vec<f64> = batches.iter().filter_map(|o| o.without_rates.last().copied()).collect();
    let last_mean = mean(&last);
    report.check(
        "without the barrier the last episode rarely succeeds",
        last_mean <= 0.2,
        format!("mean success {last_mean:.2} at episode {}", cfg.moves.episodes),
    );
    if let Some(path) = out.path("transfer_summary.csv") {
        let rows = batches.iter().enumerate().flat_map(|(b, o)| {
            (0..o.with_rates.len()).map(move |e| vec![b.to_string(), (e + 1).to_string(), fmt_f(o.with_rates[e]), fmt_f(o.without_rates[e])])
        });
        write_csv(&path, "transfer", cfg.batch_seed, cfg, &["batch", "episode", "success_with", "success_without"], rows)?;
        report.files.push(path);
    }
    Ok((report, batches))
}
