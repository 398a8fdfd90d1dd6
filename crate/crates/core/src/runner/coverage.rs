//! Battery-constrained coverage over several seeds.

use serde::{Deserialize, Serialize};

use super::{fmt_f, write_csv, Output, Report};
use crate::envs::{CoverageConfig, CoverageWorld};
use crate::error::Result;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageRun {
    pub seeds: Vec<u64>,
    pub env: CoverageConfig,
    /// Steps between rows of the per-step CSV.
    pub record_every: usize,
}

impl Default for CoverageRun {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            env: CoverageConfig::default(),
            record_every: 10,
        }
    }
}

/// Lowest energy and docked time of each agent in one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub min_energy: Vec<f64>,
    pub docked_s: Vec<f64>,
}

pub fn run(cfg: &CoverageRun, out: &Output) -> Result<(Report, Vec<SeedSummary>)> {
    cfg.env.validate()?;
    let mut report = Report::new("coverage");
    let env = &cfg.env;
    if !env.horizon_covers_depletion() {
        report.warnings.push(format!(
            "horizon T={} does not exceed (E_max-E_min)/K_d={}; the energy guarantee needs a longer horizon",
            env.horizon,
            (env.e_max - env.e_min) / env.k_d
        ));
    }
    let steps = (env.duration / env.dt).round() as usize;
    let every = cfg.record_every.max(1);
    let mut summaries = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut world = CoverageWorld::new(env.clone(), &mut stream(seed, 0))?;
        let mut min_energy: Vec<f64> = world.agents.iter().map(|a| a.energy).collect();
        let mut docked = vec![0usize; env.n_agents];
        let mut rows = Vec::new();
        let keep = |recs: &[crate::envs::StepRecord], rows: &mut Vec<Vec<String>>| {
            for r in recs {
                rows.push(vec![
                    fmt_f(r.t),
                    r.agent.to_string(),
                    fmt_f(r.x),
                    fmt_f(r.y),
                    fmt_f(r.energy),
                    fmt_f(r.barrier),
                    u8::from(r.docked).to_string(),
                    fmt_f(r.slack),
                ]);
            }
        };
        keep(&world.records(), &mut rows);
        for k in 1..=steps {
            let recs = world.step()?;
            for r in &recs {
                min_energy[r.agent] = min_energy[r.agent].min(r.energy);
                docked[r.agent] += usize::from(r.docked);
            }
            if k % every == 0 {
                keep(&recs, &mut rows);
            }
        }
        if let Some(p) = out.path(&format!("coverage_seed{seed}.csv")) {
            write_csv(&p, "coverage", seed, cfg, &["t", "agent_id", "x", "y", "E", "B", "docked", "slack"], rows)?;
            report.files.push(p);
        }
        let low = min_energy.iter().copied().fold(f64::INFINITY, f64::min);
        report.check(
            format!("seed {seed}: energy stays above E_min"),
            low >= env.e_min,
            format!("lowest agent energy {low:.4} (E_min {})", env.e_min),
        );
        summaries.push(SeedSummary {
            seed,
            min_energy,
            docked_s: docked.iter().map(|d| *d as f64 * env.dt).collect(),
        });
    }
    if let Some(p) = out.path("coverage_summary.csv") {
        let rows = summaries.iter().flat_map(|s| {
            (0..s.min_energy.len()).map(move |i| vec![s.seed.to_string(), i.to_string(), fmt_f(s.min_energy[i]), fmt_f(s.docked_s[i])])
        });
        write_csv(&p, "coverage", cfg.seeds.first().copied().unwrap_or(0), cfg, &["seed", "agent_id", "min_E", "docked_s"], rows)?;
        report.files.push(p);
    }
    Ok((report, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_horizon_warns_and_zero_agents_fails() {
        let mut cfg = CoverageRun {
            seeds: vec![0],
            record_every: 1,
            ..CoverageRun::default()
        };
        cfg.env.duration = 0.5;
        cfg.env.quadrature = 20;
        cfg.env.horizon = 40.0;
        let (r, s) = run(&cfg, &Output::default()).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(s[0].min_energy.len(), 6);
        cfg.env.horizon = 50.0;
        assert!(run(&cfg, &Output::default()).unwrap().0.warnings.is_empty());
        cfg.env.n_agents = 0;
        assert!(matches!(run(&cfg, &Output::default()), Err(crate::Error::Config(_))));
    }
}
