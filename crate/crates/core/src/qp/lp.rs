//! Dense two-phase simplex with Bland's rule.
//!
//! Sizes in this crate are tiny (a handful of variables, a few dozen rows), so
//! the full tableau is rebuilt rather than maintained in product form.

use crate::error::{Error, Result};
use crate::system::{RealMat, RealVec};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: RealVec,
    pub value: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes `cost . z` over columns `< allowed`, from the current basic feasible point.
    fn minimize(&mut self, cost: &[f64], allowed: usize, max_iter: usize) -> Result<()> {
        for _ in 0..max_iter {
            // Bland: lowest-index column with negative reduced cost
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut reduced = cost[j];
                for (i, row) in self.rows.iter().enumerate() {
                    reduced -= cost[self.basis[i]] * row[j];
                }
                if reduced < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return Ok(()) };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie || tie && self.basis[i] < self.basis[k] {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return Err(Error::Unbounded) };
            self.pivot(r, c);
        }
        Err(Error::MaxIterations(max_iter))
    }
}

/// Maximizes `c . x` over free `x` subject to `A x <= b`.
pub fn maximize(c: &RealVec, a: &RealMat, b: &RealVec) -> Result<LpSolution> {
    let n = a.ncols();
    let m = a.nrows();
    if c.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: c.len(),
            context: "lp objective",
        });
    }
    if b.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: b.len(),
            context: "lp rhs",
        });
    }
    if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("lp data must be finite".into()));
    }

    // columns: x+ (n), x- (n), slacks (m), artificials (one per row with b < 0)
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_real = 2 * n + m;
    let width = n_real + negative.len();
    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut art = 0;
    for i in 0..m {
        let mut row = vec![0.0; width + 1];
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = sign * a[(i, j)];
            row[n + j] = -sign * a[(i, j)];
        }
        row[2 * n + i] = sign;
        row[width] = sign * b[i];
        if b[i] < 0.0 {
            row[n_real + art] = 1.0;
            basis.push(n_real + art);
            art += 1;
        } else {
            basis.push(2 * n + i);
        }
        rows.push(row);
    }
    let mut t = Tableau { rows, basis, width };
    let max_iter = 50 * (width + m + 10);

    if !negative.is_empty() {
        let mut cost = vec![0.0; width];
        for v in cost.iter_mut().skip(n_real) {
            *v = 1.0;
        }
        t.minimize(&cost, width, max_iter)?;
        let infeas: f64 = (0..m).filter(|&i| t.basis[i] >= n_real).map(|i| t.rhs(i)).sum();
        if infeas > FEAS_TOL * (1.0 + b.amax()) {
            return Err(Error::Infeasible);
        }
        // drive remaining (zero-level) artificials out of the basis
        let mut i = 0;
        while i < t.rows.len() {
            if t.basis[i] >= n_real {
                match (0..n_real).find(|&j| t.rows[i][j].abs() > 1e-9) {
                    Some(j) => t.pivot(i, j),
                    None => {
                        // redundant row
                        t.rows.remove(i);
                        t.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    let mut cost = vec![0.0; width];
    for j in 0..n {
        cost[j] = -c[j];
        cost[n + j] = c[j];
    }
    t.minimize(&cost, n_real, max_iter)?;

    let mut z = vec![0.0; n_real];
    for (i, &bj) in t.basis.iter().enumerate() {
        if bj < n_real {
            z[bj] = t.rhs(i);
        }
    }
    let x = RealVec::from_iterator(n, (0..n).map(|j| z[j] - z[n + j]));
    let value = c.dot(&x);
    Ok(LpSolution { x, value })
}
