use crate::error::{Error, Result};
use crate::qp::lp;

use super::{RealMat, RealVec};

/// Control set `{u : A u <= b}`.
///
/// Construction runs a feasibility LP, so a `Polytope` is never empty. The
/// bounding box is computed once when the set is bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: RealMat,
    b: RealVec,
    bbox: Option<(RealVec, RealVec)>,
}

impl Polytope {
    pub fn new(a: RealMat, b: RealVec) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                got: b.len(),
                context: "polytope rhs",
            });
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidProblem("polytope needs at least one coordinate".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("polytope coefficients must be finite".into()));
        }
        let n = a.ncols();
        lp::maximize(&RealVec::zeros(n), &a, &b)?;
        let bbox = bounding_box(&a, &b)?;
        Ok(Self { a, b, bbox })
    }

    /// Like [`Polytope::new`] but fails unless the set is bounded.
    pub fn bounded(a: RealMat, b: RealVec) -> Result<Self> {
        let p = Self::new(a, b)?;
        if p.bbox.is_none() {
            return Err(Error::Unbounded);
        }
        Ok(p)
    }

    /// Box `lo <= u <= hi`. Rows alternate `u_i <= hi_i`, `-u_i <= -lo_i`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidProblem("box bounds must have equal, positive length".into()));
        }
        if lo.iter().zip(hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Infeasible);
        }
        let n = lo.len();
        let mut a = RealMat::zeros(2 * n, n);
        let mut b = RealVec::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Ok(Self {
            a,
            b,
            bbox: Some((RealVec::from_column_slice(lo), RealVec::from_column_slice(hi))),
        })
    }

    /// Symmetric box `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Self::from_box(&vec![-r; n], &vec![r; n])
    }

    /// All of `R^n` (no rows).
    pub fn unconstrained(n: usize) -> Self {
        Self {
            a: RealMat::zeros(0, n),
            b: RealVec::zeros(0),
            bbox: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &RealMat {
        &self.a
    }

    pub fn b(&self) -> &RealVec {
        &self.b
    }

    pub fn row(&self, i: usize) -> RealVec {
        self.a.row(i).transpose()
    }

    pub fn contains(&self, u: &RealVec, tol: f64) -> bool {
        let r = &self.a * u - &self.b;
        r.iter().all(|v| *v <= tol)
    }

    pub fn is_bounded(&self) -> bool {
        self.bbox.is_some()
    }

    pub fn bounding_box(&self) -> Option<&(RealVec, RealVec)> {
        self.bbox.as_ref()
    }

    /// Upper bound on the diameter, from the bounding box. `None` when unbounded.
    pub fn diameter_bound(&self) -> Option<f64> {
        self.bbox.as_ref().map(|(lo, hi)| (hi - lo).norm())
    }

    /// Componentwise clamp onto the bounding box (exact projection for boxes).
    pub fn clamp_to_box(&self, u: &RealVec) -> RealVec {
        match &self.bbox {
            Some((lo, hi)) => u.zip_zip_map(lo, hi, |v, l, h| v.clamp(l, h)),
            None => u.clone(),
        }
    }
}

fn bounding_box(a: &RealMat, b: &RealVec) -> Result<Option<(RealVec, RealVec)>> {
    let n = a.ncols();
    let mut lo = RealVec::zeros(n);
    let mut hi = RealVec::zeros(n);
    for i in 0..n {
        let mut c = RealVec::zeros(n);
        c[i] = 1.0;
        match lp::maximize(&c, a, b) {
            Ok(s) => hi[i] = s.value,
            Err(Error::Unbounded) => return Ok(None),
            Err(e) => return Err(e),
        }
        c[i] = -1.0;
        match lp::maximize(&c, a, b) {
            Ok(s) => lo[i] = -s.value,
            Err(Error::Unbounded) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some((lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_membership() {
        let p = Polytope::from_box(&[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!(p.contains(&RealVec::from_vec(vec![0.0, 1.0]), 0.0));
        assert!(!p.contains(&RealVec::from_vec(vec![1.5, 1.0]), 1e-9));
        assert!((p.diameter_bound().unwrap() - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_rejected() {
        let a = RealMat::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = RealVec::from_vec(vec![0.0, -1.0]);
        assert_eq!(Polytope::new(a, b).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn triangle_bounding_box() {
        // u1 >= 0, u2 >= 0, u1 + u2 <= 1
        let a = RealMat::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = RealVec::from_vec(vec![0.0, 0.0, 1.0]);
        let p = Polytope::bounded(a, b).unwrap();
        let (lo, hi) = p.bounding_box().unwrap();
        assert!((lo - RealVec::zeros(2)).amax() < 1e-12);
        assert!((hi - RealVec::from_vec(vec![1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn halfplane_is_unbounded() {
        let a = RealMat::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = RealVec::from_vec(vec![1.0]);
        assert!(!Polytope::new(a.clone(), b.clone()).unwrap().is_bounded());
        assert_eq!(Polytope::bounded(a, b).unwrap_err(), Error::Unbounded);
    }
}
