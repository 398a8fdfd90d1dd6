//! Primal active-set method in whitened coordinates.
//!
//! With `G = 2H = L L'`, every row `a_i` is stored as `w_i = L^{-1} a_i`, so the
//! Schur complement of the working set is just `W W'`. Each iteration solves the
//! equality-constrained step exactly; the working set only grows by blocking
//! constraints, which are never linearly dependent on it.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::system::{RealMat, RealVec};

use super::{lp, Halfspace, QpProblem, QpSolution};

const ACTIVE_TOL: f64 = 1e-9;

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let n = p.dim();
    let rows = p.all_rows();
    let g_mat = &p.h * 2.0;
    let g_vec = &p.b * 2.0;
    let chol = g_mat.clone().cholesky().ok_or_else(|| {
        Error::InvalidProblem("hessian is not positive definite".into())
    })?;
    let l = chol.l();
    let whiten = |v: &RealVec| -> RealVec {
        l.solve_lower_triangular(v).expect("cholesky factor is nonsingular")
    };
    let unwhiten = |v: &RealVec| -> RealVec {
        l.transpose().solve_upper_triangular(v).expect("cholesky factor is nonsingular")
    };

    let unconstrained = -chol.solve(&g_vec);
    if rows.iter().all(|r| r.violation(&unconstrained) <= 0.0) {
        return Ok(QpSolution {
            u: unconstrained,
            active: Vec::new(),
            multipliers: Vec::new(),
            iterations: 0,
        });
    }

    let mut u = feasible_start(&rows, n)?;
    let white: Vec<RealVec> = rows.iter().map(|r| whiten(&r.a)).collect();

    // initial working set: rows tight at the start point, greedily independent
    let mut working: Vec<usize> = Vec::new();
    let mut basis: Vec<RealVec> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if working.len() == n {
            break;
        }
        if r.violation(&u).abs() > ACTIVE_TOL * (1.0 + r.c.abs()) {
            continue;
        }
        let mut resid = white[i].clone();
        for q in &basis {
            resid -= q * q.dot(&resid);
        }
        let norm = resid.norm();
        if norm > 1e-9 * white[i].norm().max(f64::MIN_POSITIVE) {
            basis.push(resid / norm);
            working.push(i);
        }
    }

    let max_iter = 20 * (n + rows.len()) + 50;
    // set after a full (unblocked) step: u then minimizes over the working set,
    // and any remaining step is rounding noise amplified by the conditioning of H
    let mut on_minimum = false;
    for iter in 0..max_iter {
        let y = whiten(&(&g_mat * &u + &g_vec));
        let lambda = if working.is_empty() {
            RealVec::zeros(0)
        } else {
            let w = RealMat::from_fn(working.len(), n, |i, j| white[working[i]][j]);
            let s = &w * w.transpose();
            let rhs = -(&w * &y);
            match Cholesky::new(s.clone()) {
                Some(c) => c.solve(&rhs),
                None => s.lu().solve(&rhs).ok_or_else(|| {
                    Error::InvalidProblem("working set became linearly dependent".into())
                })?,
            }
        };
        let mut shifted = y.clone();
        for (k, &i) in working.iter().enumerate() {
            shifted += &white[i] * lambda[k];
        }
        let step = -unwhiten(&shifted);

        if on_minimum || step.amax() <= 1e-12 * (1.0 + u.amax()) {
            on_minimum = false;
            let scale = 1.0 + lambda.amax();
            let drop = working
                .iter()
                .enumerate()
                .filter(|(k, _)| lambda[*k] < -1e-11 * scale)
                .min_by_key(|(_, &i)| i)
                .map(|(k, _)| k);
            match drop {
                None => {
                    let mut pairs: Vec<(usize, f64)> =
                        working.iter().copied().zip(lambda.iter().copied()).collect();
                    pairs.sort_by_key(|(i, _)| *i);
                    return Ok(QpSolution {
                        u,
                        active: pairs.iter().map(|(i, _)| *i).collect(),
                        multipliers: pairs.iter().map(|(_, l)| *l).collect(),
                        iterations: iter + 1,
                    });
                }
                Some(k) => {
                    working.remove(k);
                    continue;
                }
            }
        }

        // longest feasible fraction of the step; lowest index wins ties
        let mut alpha = 1.0;
        let mut blocking = None;
        for (i, r) in rows.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let ap = r.a.dot(&step);
            if ap > 1e-14 * (1.0 + r.a.amax()) {
                let t = ((r.c - r.a.dot(&u)) / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        u += &step * alpha;
        match blocking {
            Some(i) => working.push(i),
            None => on_minimum = true,
        }
    }
    Err(Error::MaxIterations(max_iter))
}

fn feasible_start(rows: &[Halfspace], n: usize) -> Result<RealVec> {
    let a = RealMat::from_fn(rows.len(), n, |i, j| rows[i].a[j]);
    let b = RealVec::from_iterator(rows.len(), rows.iter().map(|r| r.c));
    match lp::maximize(&RealVec::zeros(n), &a, &b) {
        Ok(s) => Ok(s.x),
        Err(Error::Unbounded) => unreachable!("zero objective cannot be unbounded"),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::kkt_residuals;
    use crate::rng::stream;
    use crate::system::Polytope;
    use rand::Rng as _;

    fn vec(v: &[f64]) -> RealVec {
        RealVec::from_column_slice(v)
    }

    #[test]
    fn halfspace_projection_to_origin() {
        let p = QpProblem::new(
            RealMat::identity(2, 2),
            vec(&[-1.0, -1.0]),
            vec![Halfspace::new(vec(&[1.0, 1.0]), 0.0)],
            Polytope::cube(2, 1.0).unwrap(),
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.u.amax() < 1e-12);
        assert_eq!(s.active, vec![0]);
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::new(RealMat::identity(3, 3), RealVec::zeros(3), vec![], Polytope::cube(3, 1.0).unwrap()).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.u, RealVec::zeros(3));
        assert!(s.active.is_empty());
    }

    #[test]
    fn scalar_clamp() {
        let p = QpProblem::new(
            RealMat::identity(1, 1),
            vec(&[-1.0]),
            vec![Halfspace::new(vec(&[1.0]), 0.3679)],
            Polytope::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        assert!((solve_qp(&p).unwrap().u[0] - 0.3679).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let p = QpProblem::new(
            RealMat::identity(1, 1),
            vec(&[0.0]),
            vec![Halfspace::new(vec(&[1.0]), -2.0)],
            Polytope::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(solve_qp(&p).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn random_problems_satisfy_kkt_and_are_deterministic() {
        let mut rng = stream(5, 0);
        for _ in 0..300 {
            let n = rng.random_range(1..5);
            let m = rng.random_range(0..8);
            let r = RealMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &r * r.transpose() + RealMat::identity(n, n) * 0.1;
            let h = (&h + h.transpose()) * 0.5;
            let b = RealVec::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let ineqs = (0..m)
                .map(|_| Halfspace::new(RealVec::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), rng.random_range(0.0..1.0)))
                .collect();
            let p = QpProblem::new(h, b, ineqs, Polytope::cube(n, 1.0).unwrap()).unwrap();
            let s = solve_qp(&p).unwrap();
            let k = kkt_residuals(&p, &s);
            assert!(k.stationarity <= 1e-8, "{k:?}");
            assert!(k.primal <= 1e-9, "{k:?}");
            assert!(k.complementarity <= 1e-8, "{k:?}");
            assert!(k.dual <= 1e-9, "{k:?}");
            assert_eq!(solve_qp(&p).unwrap(), s);
        }
    }

    #[test]
    fn degenerate_vertex_with_redundant_rows() {
        // several constraints through the same optimal vertex
        let ineqs = vec![
            Halfspace::new(vec(&[1.0, 0.0]), 0.0),
            Halfspace::new(vec(&[0.0, 1.0]), 0.0),
            Halfspace::new(vec(&[1.0, 1.0]), 0.0),
            Halfspace::new(vec(&[2.0, 1.0]), 0.0),
        ];
        let p = QpProblem::projection(&vec(&[1.0, 1.0]), ineqs, Polytope::cube(2, 1.0).unwrap()).unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.u.amax() < 1e-12);
        let k = kkt_residuals(&p, &s);
        assert!(k.stationarity <= 1e-8 && k.dual <= 1e-9, "{k:?}");
    }
}
