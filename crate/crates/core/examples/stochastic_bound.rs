//! Exit probability of a filtered Ornstein-Uhlenbeck process against the
//! supermartingale bound, for one start and a few horizons.

use ldcbf::runner::stochastic::{simulate, StochasticRun};

fn main() -> ldcbf::Result<()> {
    let cfg = StochasticRun {
        n_paths: 4000,
        pairs: [0.25, 0.5, 1.0, 2.0].iter().map(|t| [0.2, *t]).collect(),
        ..StochasticRun::default()
    };
    println!("    T   bound   freq  halfwidth");
    for o in simulate(&cfg)? {
        println!("{:>5.2}  {:.4}  {:.4}  {:.4}", o.horizon, o.bound, o.mc.freq, o.mc.halfwidth);
    }
    Ok(())
}
