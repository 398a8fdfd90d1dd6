//! Two disc barriers combined by pointwise minimum; each member brings its own
//! policy and the active member's policy is applied.

use std::sync::Arc;

use ldcbf::compose::{min_compose, switching_policy, Policy};
use ldcbf::system::{rk4_step, AlphaFn, FnField, FnModel, Ldcbf, RealVec};

fn main() -> ldcbf::Result<()> {
    let centers = [[0.0, 0.0], [1.5, 0.0]];
    let members = centers
        .iter()
        .map(|c| Ldcbf::new(Arc::new(FnField::weighted_square(c.to_vec(), vec![1.0, 1.0])), 1.0, 1.0, 1.0, AlphaFn::new(1.0)?))
        .collect::<ldcbf::Result<Vec<_>>>()?;
    let comp = min_compose(members)?;
    let policies: Vec<Policy> = centers
        .iter()
        .map(|&c| Arc::new(move |x: &RealVec| RealVec::from_column_slice(&[(c[0] - x[0]).clamp(-1.0, 1.0), (c[1] - x[1]).clamp(-1.0, 1.0)])) as Policy)
        .collect();
    let policy = switching_policy(&comp, policies)?;
    let model = FnModel::single_integrator(2);
    let mut x = RealVec::from_column_slice(&[0.8, 0.3]);
    println!("    t      x      y  active  min_B");
    for k in 0..=100 {
        if k % 20 == 0 {
            println!("{:>5.2} {:>6.3} {:>6.3}  {:>6}  {:.4}", k as f64 * 0.01, x[0], x[1], comp.active(&x), comp.value(&x));
        }
        x = rk4_step(&model, &x, &policy(&x), 0.01);
    }
    Ok(())
}
