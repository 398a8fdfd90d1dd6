//! Safety filter on `xdot = u` with `B = x^2`. A nominal controller pushes
//! outward at full speed; the filter lets it run until the barrier bound
//! binds and the state still reaches the horizon before leaving `|x| < 1`.

use std::sync::Arc;

use ldcbf::filter::certify_duration;
use ldcbf::system::{AlphaFn, FnField, FnModel, Ldcbf, Polytope, RealVec};

fn main() -> ldcbf::Result<()> {
    let model = FnModel::single_integrator(1);
    let set = Polytope::cube(1, 1.0)?;
    let field = Arc::new(FnField::weighted_square(vec![0.0], vec![1.0]));
    let dt = 1e-3;
    println!("    T  threshold  exit_time  max_bound_violation");
    for horizon in [0.5, 1.0, 2.0] {
        let b = Ldcbf::new(field.clone(), 1.0, 1.0, horizon, AlphaFn::new(1.0)?)?;
        let x0 = RealVec::from_element(1, b.threshold().sqrt());
        let cert = certify_duration(&b, &model, |_: &RealVec| RealVec::from_element(1, 1.0), &x0, &set, dt, horizon + 1.0)?;
        let exit = cert.exit_time.map_or("never".into(), |t| format!("{t:.3}"));
        println!("{horizon:>5.1}  {:>9.4}  {exit:>9}  {:.2e}", b.threshold(), cert.max_bound_violation);
    }
    Ok(())
}
