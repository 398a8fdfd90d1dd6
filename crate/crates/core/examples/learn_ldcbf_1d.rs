//! Learns a barrier from the value of `u = -2x` on `xdot = x + u`, then prints
//! the learned sets and how the filtered adversarial runs fared.

use ldcbf::runner::toy::{learn, ToyRun};

fn main() -> ldcbf::Result<()> {
    let cfg = ToyRun::default();
    let o = learn(&cfg)?;
    let l = &o.learned;
    println!("TD residual {:.2e} after {} sweeps", o.td_residual, o.sweeps);
    println!("L_hat {:.4}  c {:.4}  beta {:.4}  threshold {:.4}", l.l_hat, l.c_offset, l.beta, l.to_ldcbf().threshold());
    let edge = |f: &dyn Fn(f64) -> bool| (0..=1500).map(|k| k as f64 * 1e-3).take_while(|x| f(*x)).last().unwrap_or(0.0);
    let x = |v: f64| ldcbf::system::RealVec::from_element(1, v);
    println!("learned safe set    |x| < {:.3}", edge(&|v| l.in_safe_set(&x(v))));
    println!("learned initial set |x| < {:.3}", edge(&|v| l.in_initial_set(&x(v))));
    println!("{}/{} filtered runs stayed in |x| < 1 for T = {}", o.safe_runs, cfg.runs, cfg.horizon);
    Ok(())
}
