//! Agents spreading over a density by Lloyd descent while a per-agent energy
//! barrier sends them back to their charging stations in time.
//!
//! Per-agent state is `[E, x, y]` with single-integrator kinematics. The
//! barrier model drains the battery at the constant rate `K_d`; the simulated
//! battery follows `dE/dt = -drain_rate * E` instead.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::filter_control;
use crate::rng::Rng;
use crate::system::{AlphaFn, FnField, FnModel, Ldcbf, Polytope, RealMat, RealVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageConfig {
    pub n_agents: usize,
    pub domain_lo: [f64; 2],
    pub domain_hi: [f64; 2],
    pub e_max: f64,
    pub e_min: f64,
    /// Charge level at which a docked agent leaves its station.
    pub e_ch: f64,
    /// Drain rate assumed by the barrier.
    pub k_d: f64,
    pub beta: f64,
    /// Barrier horizon `T`.
    pub horizon: f64,
    pub v_max: f64,
    pub softnorm_eps: f64,
    pub charge_rate: f64,
    /// Coefficient of the simulated battery law `dE/dt = -drain_rate E`.
    pub drain_rate: f64,
    pub dock_radius: f64,
    pub k_p: f64,
    /// Quadrature points per axis for centroids.
    pub quadrature: usize,
    pub alpha_slope: f64,
    pub dt: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// One per agent; defaults to a row along the bottom edge.
    pub stations: Option<Vec<[f64; 2]>>,
    pub init_energy: [f64; 2],
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            n_agents: 6,
            domain_lo: [-1.6, -1.0],
            domain_hi: [1.6, 1.0],
            e_max: 1.0,
            e_min: 0.55,
            e_ch: 0.92,
            k_d: 0.01,
            beta: 0.005,
            horizon: 50.0,
            v_max: 0.2,
            softnorm_eps: 1e-3,
            charge_rate: 0.005,
            drain_rate: 0.01,
            dock_radius: 0.05,
            k_p: 1.0,
            quadrature: 200,
            alpha_slope: 1.0,
            dt: 0.05,
            duration: 600.0,
            stations: None,
            init_energy: [0.9, 1.0],
        }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_agents == 0 {
            return bad("coverage needs at least one agent");
        }
        if !(self.domain_lo[0] < self.domain_hi[0] && self.domain_lo[1] < self.domain_hi[1]) {
            return bad("empty coverage domain");
        }
        if !(0.0 <= self.e_min && self.e_min < self.e_ch && self.e_ch <= self.e_max) {
            return bad("need 0 <= e_min < e_ch <= e_max");
        }
        let positive = [
            self.k_d,
            self.beta,
            self.horizon,
            self.v_max,
            self.softnorm_eps,
            self.charge_rate,
            self.dock_radius,
            self.dt,
            self.duration,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("rates, radii and times must be positive");
        }
        if self.quadrature == 0 || self.alpha_slope < 0.0 || self.drain_rate < 0.0 || self.k_p < 0.0 {
            return bad("invalid quadrature, gain or slope");
        }
        if !(self.init_energy[0] <= self.init_energy[1] && self.init_energy[1] <= self.e_max) {
            return bad("init_energy must be an interval below e_max");
        }
        let stations = self.station_positions();
        if stations.len() != self.n_agents {
            return bad("need one station per agent");
        }
        if stations.iter().any(|s| !self.in_domain(s)) {
            return bad("stations must lie inside the domain");
        }
        Ok(())
    }

    fn in_domain(&self, p: &[f64; 2]) -> bool {
        (0..2).all(|k| self.domain_lo[k] <= p[k] && p[k] <= self.domain_hi[k])
    }

    pub fn station_positions(&self) -> Vec<[f64; 2]> {
        if let Some(s) = &self.stations {
            return s.clone();
        }
        let n = self.n_agents;
        let (lo, hi) = (self.domain_lo, self.domain_hi);
        let (x0, x1) = (lo[0] + 0.2, hi[0] - 0.2);
        let y = lo[1] + 0.1;
        (0..n)
            .map(|i| {
                let x = if n == 1 { 0.5 * (x0 + x1) } else { x0 + (x1 - x0) * i as f64 / (n - 1) as f64 };
                [x, y]
            })
            .collect()
    }

    /// `L = beta (E_max - E_min)`.
    pub fn cost_cap(&self) -> f64 {
        self.beta * (self.e_max - self.e_min)
    }

    /// Whether the horizon exceeds the time a full battery lasts under the model drain.
    pub fn horizon_covers_depletion(&self) -> bool {
        self.horizon > (self.e_max - self.e_min) / self.k_d
    }
}

pub fn density(p: [f64; 2]) -> f64 {
    let a = ((p[0] - 0.2).powi(2) + (p[1] - 0.3).powi(2)) / 0.06;
    let b = ((p[0] + 0.2).powi(2) + (p[1] + 0.1).powi(2)) / 0.03;
    (-a).exp() + 0.5 * (-b).exp()
}

/// `B(E, p) = E_max - E + (K_d / v_max) (sqrt(|p - s|^2 + eps^2) - eps)`.
pub fn energy_field(cfg: &CoverageConfig, station: [f64; 2]) -> FnField {
    let (e_max, k, eps) = (cfg.e_max, cfg.k_d / cfg.v_max, cfg.softnorm_eps);
    let soft = move |x: &RealVec| ((x[1] - station[0]).powi(2) + (x[2] - station[1]).powi(2) + eps * eps).sqrt();
    FnField::new(
        3,
        move |x| e_max - x[0] + k * (soft(x) - eps),
        move |x| {
            let r = soft(x);
            RealVec::from_vec(vec![-1.0, k * (x[1] - station[0]) / r, k * (x[2] - station[1]) / r])
        },
    )
}

pub fn energy_ldcbf(cfg: &CoverageConfig, station: [f64; 2]) -> Result<Ldcbf> {
    Ldcbf::new(
        Arc::new(energy_field(cfg, station)),
        cfg.cost_cap(),
        cfg.beta,
        cfg.horizon,
        AlphaFn::new(cfg.alpha_slope)?,
    )
}

/// `[E, x, y]' = [-K_d, u_x, u_y]`.
pub fn agent_model(k_d: f64) -> FnModel {
    FnModel::new(
        3,
        2,
        move |_| RealVec::from_vec(vec![-k_d, 0.0, 0.0]),
        |_| {
            let mut g = RealMat::zeros(3, 2);
            g[(1, 0)] = 1.0;
            g[(2, 1)] = 1.0;
            g
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub energy: f64,
    pub pos: [f64; 2],
    pub docked: bool,
    /// Cleared after charging until the agent leaves the docking radius.
    can_dock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
    pub energy: f64,
    pub barrier: f64,
    pub docked: bool,
    pub slack: f64,
}

pub struct CoverageWorld {
    pub cfg: CoverageConfig,
    pub agents: Vec<Agent>,
    pub stations: Vec<[f64; 2]>,
    pub t: f64,
    barriers: Vec<Ldcbf>,
    model: FnModel,
    set: Polytope,
    quad: Vec<([f64; 2], f64)>,
}

impl CoverageWorld {
    /// Agents start at uniform positions with energies drawn from `init_energy`.
    pub fn new(cfg: CoverageConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = (cfg.domain_lo, cfg.domain_hi);
        let agents = (0..cfg.n_agents)
            .map(|_| Agent {
                energy: if cfg.init_energy[0] < cfg.init_energy[1] {
                    rng.random_range(cfg.init_energy[0]..cfg.init_energy[1])
                } else {
                    cfg.init_energy[0]
                },
                pos: [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])],
                docked: false,
                can_dock: true,
            })
            .collect();
        Self::with_agents(cfg, agents)
    }

    pub fn with_agents(cfg: CoverageConfig, agents: Vec<Agent>) -> Result<Self> {
        cfg.validate()?;
        if agents.len() != cfg.n_agents {
            return Err(Error::Config("agent count does not match n_agents".into()));
        }
        let stations = cfg.station_positions();
        let barriers = stations.iter().map(|s| energy_ldcbf(&cfg, *s)).collect::<Result<_>>()?;
        let set = Polytope::cube(2, cfg.v_max)?;
        let (lo, hi, n) = (cfg.domain_lo, cfg.domain_hi, cfg.quadrature);
        let (hx, hy) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
        let mut quad = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let p = [lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy];
                quad.push((p, density(p) * hx * hy));
            }
        }
        Ok(Self {
            model: agent_model(cfg.k_d),
            cfg,
            agents,
            stations,
            t: 0.0,
            barriers,
            set,
            quad,
        })
    }

    pub fn agent(energy: f64, pos: [f64; 2]) -> Agent {
        Agent {
            energy,
            pos,
            docked: false,
            can_dock: true,
        }
    }

    pub fn barrier(&self, i: usize) -> &Ldcbf {
        &self.barriers[i]
    }

    pub fn agent_state(&self, i: usize) -> RealVec {
        let a = &self.agents[i];
        RealVec::from_vec(vec![a.energy, a.pos[0], a.pos[1]])
    }

    fn positions(&self) -> Vec<[f64; 2]> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    /// Density-weighted centroids of the Voronoi cells by nearest-generator quadrature.
    pub fn centroids(&self, points: &[[f64; 2]]) -> Vec<Option<[f64; 2]>> {
        let mut acc = vec![[0.0f64; 3]; points.len()];
        for (q, w) in &self.quad {
            let k = nearest(points, *q);
            acc[k][0] += w * q[0];
            acc[k][1] += w * q[1];
            acc[k][2] += w;
        }
        acc.iter()
            .map(|a| (a[2] > 0.0).then(|| [a[0] / a[2], a[1] / a[2]]))
            .collect()
    }

    /// `sum_i int_{V_i} |p_i - q|^2 phi(q) dq` by the same quadrature.
    pub fn locational_cost(&self, points: &[[f64; 2]]) -> f64 {
        self.quad
            .iter()
            .map(|(q, w)| {
                let k = nearest(points, *q);
                w * ((points[k][0] - q[0]).powi(2) + (points[k][1] - q[1]).powi(2))
            })
            .sum()
    }

    /// `u_i = k_p (c_i - p_i)`.
    pub fn lloyd_nominal(&self) -> Vec<[f64; 2]> {
        let pts = self.positions();
        self.centroids(&pts)
            .iter()
            .zip(&pts)
            .map(|(c, p)| match c {
                Some(c) => [self.cfg.k_p * (c[0] - p[0]), self.cfg.k_p * (c[1] - p[1])],
                None => [0.0, 0.0],
            })
            .collect()
    }

    pub fn records(&self) -> Vec<StepRecord> {
        (0..self.agents.len())
            .map(|i| self.record(i, 0.0))
            .collect()
    }

    fn record(&self, i: usize, slack: f64) -> StepRecord {
        let a = &self.agents[i];
        StepRecord {
            t: self.t,
            agent: i,
            x: a.pos[0],
            y: a.pos[1],
            energy: a.energy,
            barrier: self.barriers[i].value(&self.agent_state(i)),
            docked: a.docked,
            slack,
        }
    }

    /// Advances every agent by `dt`; returns the post-step records.
    pub fn step(&mut self) -> Result<Vec<StepRecord>> {
        let dt = self.cfg.dt;
        let nominal = self.lloyd_nominal();
        let mut slacks = vec![0.0; self.agents.len()];
        for i in 0..self.agents.len() {
            let station = self.stations[i];
            let x = self.agent_state(i);
            let cfg = &self.cfg;
            let a = &mut self.agents[i];
            let dist = ((a.pos[0] - station[0]).powi(2) + (a.pos[1] - station[1]).powi(2)).sqrt();
            if !a.can_dock && dist > cfg.dock_radius {
                a.can_dock = true;
            }
            if !a.docked && a.can_dock && dist <= cfg.dock_radius && a.energy < cfg.e_ch {
                a.docked = true;
            }
            if a.docked {
                a.energy = (a.energy + cfg.charge_rate * dt).min(cfg.e_max);
                if a.energy >= cfg.e_ch {
                    a.docked = false;
                    a.can_dock = false;
                }
                continue;
            }
            let u_nom = RealVec::from_vec(nominal[i].to_vec());
            let u = match filter_control(&self.barriers[i], &self.model, &x, &u_nom, &self.set) {
                Ok(r) => {
                    slacks[i] = r.slack;
                    r.u
                }
                Err(e) => {
                    log::warn!("agent {i}: filter failed at t={:.2}: {e}; heading to station", self.t);
                    let d = dist.max(1e-12);
                    RealVec::from_vec(vec![
                        cfg.v_max * (station[0] - a.pos[0]) / d,
                        cfg.v_max * (station[1] - a.pos[1]) / d,
                    ])
                }
            };
            for k in 0..2 {
                a.pos[k] = (a.pos[k] + dt * u[k]).clamp(cfg.domain_lo[k], cfg.domain_hi[k]);
            }
            a.energy *= (-cfg.drain_rate * dt).exp();
        }
        self.t += dt;
        Ok((0..self.agents.len()).map(|i| self.record(i, slacks[i])).collect())
    }
}

fn nearest(points: &[[f64; 2]], q: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::ldcbf_halfspace;
    use crate::rng::stream;
    use crate::system::{check_gradient, ScalarField};

    #[test]
    fn barrier_values() {
        let cfg = CoverageConfig::default();
        let b = energy_ldcbf(&cfg, [0.0, -0.9]).unwrap();
        assert_eq!(b.value(&RealVec::from_vec(vec![1.0, 0.0, -0.9])), 0.0);
        let at_min = b.value(&RealVec::from_vec(vec![0.55, 0.0, -0.9]));
        assert!((at_min - 0.45).abs() < 1e-15);
        assert!((at_min - b.safe_level()).abs() < 1e-15);
        assert!((b.threshold() - 0.45 * (-0.25f64).exp()).abs() < 1e-15);
        assert!((b.threshold() - 0.35046).abs() < 1e-5);
    }

    #[test]
    fn barrier_gradient() {
        let cfg = CoverageConfig::default();
        let f = energy_field(&cfg, [0.3, -0.9]);
        let mut rng = stream(1, 0);
        let pts: Vec<RealVec> = (0..50)
            .map(|_| RealVec::from_vec(vec![rng.random_range(0.5..1.0), rng.random_range(-1.6..1.6), rng.random_range(-1.0..1.0)]))
            .collect();
        assert!(check_gradient(&f, &pts, 1e-6).passes(1e-3));
        assert_eq!(f.dim(), 3);
    }

    #[test]
    fn threshold_forces_approach() {
        // at B = theta the allowed radial speed away from the station is negative
        let cfg = CoverageConfig::default();
        let station = [0.0, -0.9];
        let b = energy_ldcbf(&cfg, station).unwrap();
        let model = agent_model(cfg.k_d);
        let rho = 0.1;
        let dist = rho * cfg.v_max / cfg.k_d;
        let e = cfg.e_max + rho - b.threshold();
        let x = RealVec::from_vec(vec![e, 0.0, -0.9 + dist]);
        assert!((b.value(&x) - b.threshold()).abs() < 1e-3);
        let h = ldcbf_halfspace(&b, &model, &x);
        assert!(h.c < 0.0);
        assert!((h.c - (cfg.beta * b.value(&x) - cfg.k_d + (b.threshold() - b.value(&x)).max(0.0))).abs() < 1e-12);
    }

    #[test]
    fn docked_agent_charges_in_place() {
        let cfg = CoverageConfig {
            quadrature: 20,
            ..Default::default()
        };
        let stations = cfg.station_positions();
        let mut agents: Vec<Agent> = (0..6).map(|i| CoverageWorld::agent(1.0, [stations[i][0], 0.5])).collect();
        agents[2].pos = stations[2];
        agents[2].energy = 0.6;
        let mut w = CoverageWorld::with_agents(cfg, agents).unwrap();
        w.step().unwrap();
        assert!(w.agents[2].docked);
        assert_eq!(w.agents[2].pos, stations[2]);
        assert!(w.agents[2].energy > 0.6);
    }

    #[test]
    fn full_battery_far_from_limit_follows_nominal() {
        let cfg = CoverageConfig {
            quadrature: 40,
            ..Default::default()
        };
        let mut rng = stream(2, 0);
        let mut w = CoverageWorld::new(cfg, &mut rng).unwrap();
        for a in &mut w.agents {
            a.energy = 1.0;
        }
        let recs = w.step().unwrap();
        assert!(recs.iter().all(|r| r.slack == 0.0));
        let nominal_free: Vec<bool> = (0..6).map(|i| w.barrier(i).value(&w.agent_state(i)) < w.barrier(i).threshold()).collect();
        assert!(nominal_free.iter().all(|b| *b));
    }

    #[test]
    fn lloyd_iterations_reduce_locational_cost() {
        let cfg = CoverageConfig {
            quadrature: 100,
            ..Default::default()
        };
        let mut rng = stream(4, 0);
        let w = CoverageWorld::new(cfg, &mut rng).unwrap();
        let mut pts: Vec<[f64; 2]> = w.agents.iter().map(|a| a.pos).collect();
        let mut cost = w.locational_cost(&pts);
        for _ in 0..50 {
            pts = w.centroids(&pts).iter().zip(&pts).map(|(c, p)| c.unwrap_or(*p)).collect();
            let next = w.locational_cost(&pts);
            assert!(next <= cost + 1e-12, "{next} > {cost}");
            cost = next;
        }
    }

    #[test]
    fn agent_at_centroid_stays() {
        let cfg = CoverageConfig {
            n_agents: 1,
            quadrature: 50,
            ..Default::default()
        };
        let mut w = CoverageWorld::with_agents(cfg, vec![CoverageWorld::agent(1.0, [0.0, 0.0])]).unwrap();
        let c = w.centroids(&[[0.0, 0.0]])[0].unwrap();
        w.agents[0].pos = c;
        let u = w.lloyd_nominal();
        assert!(u[0][0].abs() < 1e-15 && u[0][1].abs() < 1e-15);
    }

    #[test]
    fn config_errors() {
        let zero = CoverageConfig {
            n_agents: 0,
            ..Default::default()
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
        assert!(CoverageConfig::default().horizon_covers_depletion());
        let short = CoverageConfig {
            horizon: 40.0,
            ..Default::default()
        };
        assert!(!short.horizon_covers_depletion());
    }

    #[test]
    fn short_run_keeps_energy() {
        let cfg = CoverageConfig {
            quadrature: 40,
            duration: 100.0,
            ..Default::default()
        };
        let mut rng = stream(7, 0);
        let mut w = CoverageWorld::new(cfg, &mut rng).unwrap();
        for _ in 0..2000 {
            for r in w.step().unwrap() {
                assert!(r.energy >= 0.55);
            }
        }
    }
}
