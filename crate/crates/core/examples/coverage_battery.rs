//! Six agents cover a density while the energy barrier sends each one home to
//! recharge. Prints per-agent minimum energy and time spent docked.

use ldcbf::envs::{CoverageConfig, CoverageWorld};
use ldcbf::rng::stream;

fn main() -> ldcbf::Result<()> {
    let cfg = CoverageConfig::default();
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut world = CoverageWorld::new(cfg.clone(), &mut stream(0, 0))?;
    let mut min_energy = vec![f64::INFINITY; cfg.n_agents];
    let mut docked = vec![0usize; cfg.n_agents];
    for _ in 0..steps {
        for r in world.step()? {
            min_energy[r.agent] = min_energy[r.agent].min(r.energy);
            docked[r.agent] += usize::from(r.docked);
        }
    }
    println!("agent  min_energy  docked_s");
    for i in 0..cfg.n_agents {
        println!("{i:>5}  {:>10.4}  {:>8.1}", min_energy[i], docked[i] as f64 * cfg.dt);
    }
    let worst = min_energy.iter().copied().fold(f64::INFINITY, f64::min);
    println!("lowest energy {worst:.4} (floor {})", cfg.e_min);
    Ok(())
}
