//! Projected gradient ascent on a linear policy `u = theta' x` under
//! halfspace constraints on `theta`, and the log-barrier surrogate used when
//! the constraints are folded into the loss instead.

use ldcbf::qp::Halfspace;
use ldcbf::system::RealVec;
use ldcbf::trainer::{log_barrier_extension, projected_update};

fn main() -> ldcbf::Result<()> {
    let v = |a: &[f64]| RealVec::from_column_slice(a);
    let cons = [Halfspace::new(v(&[1.0, 1.0]), 1.0), Halfspace::new(v(&[-1.0, 0.0]), 0.0)];
    // maximize -(theta - (2, 1))^2
    let goal = v(&[2.0, 1.0]);
    let mut theta = v(&[0.0, 0.0]);
    for k in 0..30 {
        let grad = (&goal - &theta) * 2.0;
        theta = projected_update(&theta, &grad, &cons, 0.1)?.theta;
        if k % 5 == 4 {
            println!("iter {:>2}  theta ({:.4}, {:.4})", k + 1, theta[0], theta[1]);
        }
    }
    println!("\n     z   t=1     t=5     t=25");
    for z in [-2.0, -0.5, -0.01, 0.0, 0.5] {
        println!("{z:>6.2} {:>7.3} {:>7.3} {:>7.3}", log_barrier_extension(z, 1.0), log_barrier_extension(z, 5.0), log_barrier_extension(z, 25.0));
    }
    Ok(())
}
