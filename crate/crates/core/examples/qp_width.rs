//! Minimum-norm correction of a nominal control and the width of the
//! admissible set, for a few halfspaces cutting a unit box.

use ldcbf::filter::filter_halfspace;
use ldcbf::qp::{width_lp, Halfspace};
use ldcbf::system::{Polytope, RealVec};

fn main() -> ldcbf::Result<()> {
    let set = Polytope::cube(2, 1.0)?;
    let u_nom = RealVec::from_column_slice(&[0.8, 0.8]);
    println!("      a           c     u_filtered          width   slack");
    for (a, c) in [([1.0, 1.0], 1.0), ([1.0, 1.0], -1.0), ([1.0, -2.0], 0.2), ([1.0, 1.0], -2.5)] {
        let h = Halfspace::new(RealVec::from_column_slice(&a), c);
        let r = filter_halfspace(&h, &u_nom, &set)?;
        let w = width_lp(&h, &set).map_or("empty".to_string(), |w| format!("{:.4}", w.omega));
        println!("{a:?}  {c:>5.1}  [{:>6.3}, {:>6.3}]  {w:>9}  {:.3}", r.u[0], r.u[1], r.slack);
    }
    Ok(())
}
