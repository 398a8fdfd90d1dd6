//! Small dense QP and LP solvers.
//!
//! The QP objective is `u' H u + 2 b' u` (note the factor 2 on the linear
//! term), minimized over a list of halfspaces intersected with a [`Polytope`].

mod active_set;
pub mod lp;
mod width;

pub use active_set::solve_qp;
pub use lp::LpSolution;
pub use width::{feasible_width, width_lp, WidthReport};

use crate::error::{Error, Result};
use crate::system::{Polytope, RealMat, RealVec};

/// `a' u <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub a: RealVec,
    pub c: f64,
}

impl Halfspace {
    pub fn new(a: RealVec, c: f64) -> Self {
        Self { a, c }
    }

    /// `a' u - c`; positive means violated.
    pub fn violation(&self, u: &RealVec) -> f64 {
        self.a.dot(u) - self.c
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.a.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: RealMat,
    pub b: RealVec,
    pub ineqs: Vec<Halfspace>,
    pub set: Polytope,
}

impl QpProblem {
    pub fn new(h: RealMat, b: RealVec, ineqs: Vec<Halfspace>, set: Polytope) -> Result<Self> {
        let n = b.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: h.nrows(),
                context: "qp hessian",
            });
        }
        if set.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: set.dim(),
                context: "qp control set",
            });
        }
        if let Some(bad) = ineqs.iter().find(|r| r.a.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.a.len(),
                context: "qp halfspace",
            });
        }
        if (&h - h.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidProblem("hessian is not symmetric".into()));
        }
        if !ineqs.iter().all(Halfspace::is_finite) || b.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("qp data must be finite".into()));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::InvalidProblem("hessian is not positive definite".into()));
        }
        Ok(Self { h, b, ineqs, set })
    }

    /// `min |u - target|^2` over the feasible set.
    pub fn projection(target: &RealVec, ineqs: Vec<Halfspace>, set: Polytope) -> Result<Self> {
        let n = target.len();
        Self::new(RealMat::identity(n, n), -target, ineqs, set)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Halfspaces followed by the polytope rows; indices into this list are what
    /// [`QpSolution::active`] reports.
    pub fn all_rows(&self) -> Vec<Halfspace> {
        let mut rows = self.ineqs.clone();
        rows.extend((0..self.set.n_rows()).map(|i| Halfspace::new(self.set.row(i), self.set.b()[i])));
        rows
    }

    pub fn objective(&self, u: &RealVec) -> f64 {
        u.dot(&(&self.h * u)) + 2.0 * self.b.dot(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: RealVec,
    /// Working-set row indices at termination, ascending.
    pub active: Vec<usize>,
    /// Multiplier for each entry of `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Largest violations of the KKT conditions at a reported solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `|2 H u + 2 b + sum lambda_i a_i|_inf`.
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Most negative multiplier, as a positive number (0 if all are nonnegative).
    pub dual: f64,
}

pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let rows = p.all_rows();
    let mut grad = (&p.h * &s.u + &p.b) * 2.0;
    let mut complementarity = 0.0f64;
    let mut dual = 0.0f64;
    for (&i, &lam) in s.active.iter().zip(&s.multipliers) {
        grad += &rows[i].a * lam;
        complementarity = complementarity.max((lam * rows[i].violation(&s.u)).abs());
        dual = dual.max(-lam);
    }
    let primal = rows.iter().map(|r| r.violation(&s.u)).fold(0.0f64, f64::max);
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        complementarity,
        dual,
    }
}

/// Maximizes `c . x` over the halfspaces intersected with `set`.
pub fn solve_lp(c: &RealVec, ineqs: &[Halfspace], set: &Polytope) -> Result<LpSolution> {
    let n = c.len();
    if set.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: set.dim(),
            context: "lp control set",
        });
    }
    let m = ineqs.len() + set.n_rows();
    let mut a = RealMat::zeros(m, n);
    let mut b = RealVec::zeros(m);
    for (i, r) in ineqs.iter().enumerate() {
        if r.a.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: r.a.len(),
                context: "lp halfspace",
            });
        }
        a.set_row(i, &r.a.transpose());
        b[i] = r.c;
    }
    let k = ineqs.len();
    a.view_mut((k, 0), (set.n_rows(), n)).copy_from(set.a());
    b.rows_mut(k, set.n_rows()).copy_from(set.b());
    lp::maximize(c, &a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_lp_respects_box() {
        let set = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let s = solve_lp(&RealVec::from_vec(vec![1.0]), &[Halfspace::new(RealVec::from_vec(vec![2.0]), 5.0)], &set).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        let bad = [
            Halfspace::new(RealVec::from_vec(vec![1.0]), 0.0),
            Halfspace::new(RealVec::from_vec(vec![-1.0]), -1.0),
        ];
        assert_eq!(solve_lp(&RealVec::from_vec(vec![0.0]), &bad, &set).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn problem_validation() {
        let set = Polytope::unconstrained(2);
        let asym = RealMat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpProblem::new(asym, RealVec::zeros(2), vec![], set.clone()).is_err());
        let indefinite = RealMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QpProblem::new(indefinite, RealVec::zeros(2), vec![], set).is_err());
    }
}
