use crate::error::{Error, Result};
use crate::filter::ldcbf_halfspace;
use crate::system::{ControlAffine, Ldcbf, Polytope, RealMat, RealVec};

use super::lp;
use super::Halfspace;

/// Fallback cap on the width when the control set is unbounded.
const UNBOUNDED_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct WidthReport {
    /// Largest `omega` such that the halfspace holds with margin `omega` at some
    /// `u` with both `u` and `u + omega 1` inside the control set.
    pub omega: f64,
    pub u: RealVec,
    /// The `omega <= 10 diam(U)` cap was binding.
    pub capped: bool,
    /// Always true: `u` itself is constrained to the control set in addition to
    /// the shifted point. Kept in the report so diagnostics show the extra row.
    pub u_in_set_imposed: bool,
}

/// Solves the width LP over `(u, omega)`:
///
/// ```text
/// max omega  s.t.  a'u + omega <= c,  A(u + omega 1) <= b,  A u <= b,  omega <= omega_max
/// ```
///
/// Returns `Infeasible` when no admissible control exists, i.e. when the LP is
/// infeasible or its optimum is negative.
pub fn width_lp(h: &Halfspace, set: &Polytope) -> Result<WidthReport> {
    let n = set.dim();
    if h.a.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: h.a.len(),
            context: "width halfspace",
        });
    }
    let m = set.n_rows();
    let cap = set.diameter_bound().map_or(UNBOUNDED_CAP, |d| 10.0 * d.max(1e-12));
    let rows = 1 + 2 * m + 1;
    let mut a = RealMat::zeros(rows, n + 1);
    let mut b = RealVec::zeros(rows);
    for j in 0..n {
        a[(0, j)] = h.a[j];
    }
    a[(0, n)] = 1.0;
    b[0] = h.c;
    for i in 0..m {
        let row = set.a().row(i);
        let shift: f64 = row.iter().sum();
        for j in 0..n {
            a[(1 + i, j)] = row[j];
            a[(1 + m + i, j)] = row[j];
        }
        a[(1 + i, n)] = shift;
        b[1 + i] = set.b()[i];
        b[1 + m + i] = set.b()[i];
    }
    a[(rows - 1, n)] = 1.0;
    b[rows - 1] = cap;

    let mut c = RealVec::zeros(n + 1);
    c[n] = 1.0;
    let s = lp::maximize(&c, &a, &b)?;
    let omega = s.x[n];
    if omega < 0.0 {
        return Err(Error::Infeasible);
    }
    Ok(WidthReport {
        omega,
        u: s.x.rows(0, n).into_owned(),
        capped: omega >= cap * (1.0 - 1e-12),
        u_in_set_imposed: true,
    })
}

/// Width of the admissible control set of `barrier` at `x`.
pub fn feasible_width(
    barrier: &Ldcbf,
    model: &dyn ControlAffine,
    x: &RealVec,
    set: &Polytope,
) -> Result<WidthReport> {
    width_lp(&ldcbf_halfspace(barrier, model, x), set)
}
