//! Trains the balance actor, learns its barrier and compares move-task
//! learning with and without the barrier for one batch. Takes a few minutes.

use ldcbf::envs::{CartPole, CartPoleParams};
use ldcbf::trainer::cartpole::{barrier_for_actor, mean, run_move_task, success_rates, train_balance_actor, MoveConfig, PipelineConfig};

fn main() -> ldcbf::Result<()> {
    let cp = CartPole::new(CartPoleParams::default())?;
    let cfg = PipelineConfig::default();
    let (actor, _) = train_balance_actor(&cp, &cfg)?;
    let (learned, _, durations) = barrier_for_actor(&cp, &actor, &cfg)?;
    println!(
        "filtered durations: random {:.2} s, constant {:.2} s, steep {:.2} s",
        mean(&durations.random),
        mean(&durations.constant),
        mean(&durations.steep)
    );
    let moves = MoveConfig::default();
    let barrier = learned.to_ldcbf();
    let with = success_rates(&run_move_task(&cp, &actor, Some(&barrier), &moves, 100)?);
    let without = success_rates(&run_move_task(&cp, &actor, None, &moves, 100)?);
    println!("episode  with  without");
    for e in 0..with.len() {
        println!("{:>7}  {:.1}   {:.1}", e + 1, with[e], without[e]);
    }
    Ok(())
}
