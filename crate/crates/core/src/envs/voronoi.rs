//! Bounded Voronoi cells of a point set inside a rectangle.

use crate::error::{Error, Result};

/// Convex polygon, counter-clockwise vertices.
pub type Polygon = Vec<[f64; 2]>;

/// Shoelace area (positive for counter-clockwise order).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Keeps the part of `poly` with `n . p <= d`.
fn clip(poly: &[[f64; 2]], n: [f64; 2], d: f64) -> Polygon {
    let side = |p: [f64; 2]| n[0] * p[0] + n[1] * p[1] - d;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (sa, sb) = (side(a), side(b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Cell `i` is the rectangle clipped by the bisector half-planes towards every other point.
pub fn voronoi_cells(points: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2]) -> Result<Vec<Polygon>> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i] == points[j] {
                return Err(Error::DuplicatePoints(i, j));
            }
        }
    }
    let rect = vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut cell = rect.clone();
            for (j, pj) in points.iter().enumerate() {
                if i == j || cell.is_empty() {
                    continue;
                }
                // |p - pi|^2 <= |p - pj|^2  <=>  2 (pj - pi) . p <= |pj|^2 - |pi|^2
                let n = [2.0 * (pj[0] - pi[0]), 2.0 * (pj[1] - pi[1])];
                let d = pj[0] * pj[0] + pj[1] * pj[1] - pi[0] * pi[0] - pi[1] * pi[1];
                cell = clip(&cell, n, d);
            }
            cell
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    #[test]
    fn single_point_owns_domain() {
        let cells = voronoi_cells(&[[0.3, 0.1]], [-1.0, -1.0], [1.0, 1.0]).unwrap();
        assert!((polygon_area(&cells[0]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_splits_at_bisector() {
        let cells = voronoi_cells(&[[-0.5, 0.0], [0.5, 0.0]], [-1.0, -1.0], [1.0, 1.0]).unwrap();
        for c in &cells {
            assert!((polygon_area(c) - 2.0).abs() < 1e-12);
        }
        assert!(cells[0].iter().all(|p| p[0] <= 1e-15));
        assert!(cells[1].iter().all(|p| p[0] >= -1e-15));
    }

    #[test]
    fn duplicates_rejected() {
        assert_eq!(
            voronoi_cells(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.0]], [-1.0, -1.0], [1.0, 1.0]).unwrap_err(),
            Error::DuplicatePoints(0, 2)
        );
    }

    #[test]
    fn random_cells_tile_the_domain() {
        let mut rng = stream(3, 0);
        let (lo, hi) = ([-1.6, -1.0], [1.6, 1.0]);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])])
                .collect();
            let cells = voronoi_cells(&pts, lo, hi).unwrap();
            let total: f64 = cells.iter().map(|c| polygon_area(c)).sum();
            assert!((total - 6.4).abs() < 1e-9, "{total}");
            // interior points of each cell are closest to their own generator
            for (i, c) in cells.iter().enumerate() {
                let k = c.len() as f64;
                let mid = [
                    c.iter().map(|p| p[0]).sum::<f64>() / k,
                    c.iter().map(|p| p[1]).sum::<f64>() / k,
                ];
                let d = |p: &[f64; 2]| (p[0] - mid[0]).powi(2) + (p[1] - mid[1]).powi(2);
                assert!(pts.iter().all(|q| d(&pts[i]) <= d(q) + 1e-12));
            }
        }
    }
}
