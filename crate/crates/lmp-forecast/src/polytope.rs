//! Halfspace polytopes in parameter space.
//!
//! A [`Polytope`] is the solution set of `C·θ ≤ e`. Critical regions are
//! stored in this form, so everything the pipeline needs — membership
//! tests, redundancy removal, Chebyshev centers, facet centers for
//! neighbor stepping, vertex lists, bounding boxes, overlap checks — lives
//! here. All routines that solve linear programs assume the polytope is
//! bounded (regions always are, because the parameter box is part of their
//! description) and return errors otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::lp::LpEngine;
use crate::solver::next_combination;

/// Interior radius below which a region is treated as empty (MW scale).
pub const MIN_INTERIOR_RADIUS: f64 = 1e-7;

/// Cap on the Chebyshev radius variable; also returned for degenerate
/// unbounded directions that the radius cannot detect.
const RADIUS_CAP: f64 = 1e9;

/// The set `{θ : C·θ ≤ e}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub c: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl Polytope {
    pub fn new(c: DMatrix<f64>, e: DVector<f64>) -> Self {
        assert_eq!(c.nrows(), e.len(), "row count mismatch");
        Polytope { c, e }
    }

    /// The axis-aligned box `lo ≤ θ ≤ hi` as a polytope.
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let p = lo.len();
        let mut c = DMatrix::zeros(2 * p, p);
        let mut e = DVector::zeros(2 * p);
        for j in 0..p {
            c[(j, j)] = 1.0;
            e[j] = hi[j];
            c[(p + j, j)] = -1.0;
            e[p + j] = -lo[j];
        }
        Polytope { c, e }
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.c.nrows()
    }

    /// Append the rows of `other` (same dimension).
    pub fn intersect(&self, other: &Polytope) -> Polytope {
        assert_eq!(self.dim(), other.dim());
        let m = self.n_rows() + other.n_rows();
        let mut c = DMatrix::zeros(m, self.dim());
        c.view_mut((0, 0), (self.n_rows(), self.dim())).copy_from(&self.c);
        c.view_mut((self.n_rows(), 0), (other.n_rows(), self.dim())).copy_from(&other.c);
        let mut e = DVector::zeros(m);
        e.rows_mut(0, self.n_rows()).copy_from(&self.e);
        e.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.e);
        Polytope { c, e }
    }

    /// Membership under a relative tolerance on each row.
    pub fn contains(&self, theta: &DVector<f64>, tol: f64) -> bool {
        (0..self.n_rows()).all(|i| {
            self.c.row(i).transpose().dot(theta) <= self.e[i] + tol * (1.0 + self.e[i].abs())
        })
    }

    /// Scale every row to unit norm. Zero rows with a nonnegative bound are
    /// dropped as vacuous; a zero row with negative bound proves emptiness.
    pub fn normalized(&self) -> Result<Polytope> {
        let mut rows = Vec::new();
        for i in 0..self.n_rows() {
            let norm = self.c.row(i).norm();
            if norm <= 1e-12 {
                if self.e[i] < -1e-9 {
                    return Err(Error::EmptyRegion(
                        "constant row with negative bound".into(),
                    ));
                }
                continue;
            }
            rows.push((self.c.row(i) / norm, self.e[i] / norm));
        }
        let mut c = DMatrix::zeros(rows.len(), self.dim());
        let mut e = DVector::zeros(rows.len());
        for (i, (row, bound)) in rows.iter().enumerate() {
            c.row_mut(i).copy_from(row);
            e[i] = *bound;
        }
        Ok(Polytope { c, e })
    }

    /// Center and radius of the largest inscribed ball.
    ///
    /// A nonpositive radius means the interior is empty (the center is then
    /// the deepest point). Requires the rows to bound the space.
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        let p = self.dim();
        let m = self.n_rows();
        let mut a = DMatrix::zeros(m + 1, p + 1);
        let mut b = DVector::zeros(m + 1);
        for i in 0..m {
            let norm = self.c.row(i).norm();
            for j in 0..p {
                a[(i, j)] = self.c[(i, j)];
            }
            a[(i, p)] = norm;
            b[i] = self.e[i];
        }
        a[(m, p)] = 1.0;
        b[m] = RADIUS_CAP;
        let mut cost = DVector::zeros(p + 1);
        cost[p] = -1.0;
        let sol = LpEngine::new(a, cost)?.solve(&b)?;
        let center = DVector::from_fn(p, |j, _| sol.x[j]);
        Ok((center, sol.x[p]))
    }

    /// Drop vacuous and redundant rows; error when the interior radius
    /// falls below [`MIN_INTERIOR_RADIUS`].
    ///
    /// Redundancy is decided one row at a time against the rows still kept
    /// (with the candidate's own bound relaxed), so duplicate rows collapse
    /// to a single representative instead of eliminating each other.
    pub fn reduce(&self) -> Result<Polytope> {
        let norm = self.normalized()?;
        let (_, radius) = norm.chebyshev_center()?;
        if radius < MIN_INTERIOR_RADIUS {
            return Err(Error::EmptyRegion(format!(
                "interior radius {radius:.3e} below threshold"
            )));
        }
        let m = norm.n_rows();
        let mut keep = vec![true; m];
        for i in 0..m {
            // Maximize the candidate row over the rows still kept, with the
            // candidate's own bound relaxed by one unit.
            let rows: Vec<usize> = (0..m).filter(|&j| keep[j] || j == i).collect();
            let sub_c = DMatrix::from_fn(rows.len(), norm.dim(), |r, k| norm.c[(rows[r], k)]);
            let mut sub_e = DVector::from_fn(rows.len(), |r, _| norm.e[rows[r]]);
            let own = rows.iter().position(|&j| j == i).expect("candidate row present");
            sub_e[own] += 1.0;
            let objective = -norm.c.row(i).transpose();
            // An unbounded or failed relaxation means the row is load-bearing.
            if let Ok(engine) = LpEngine::new(sub_c, objective) {
                match engine.solve(&sub_e) {
                    Ok(sol) => {
                        let reach = norm.c.row(i).transpose().dot(&sol.x);
                        if reach <= norm.e[i] + 1e-9 * (1.0 + norm.e[i].abs()) {
                            keep[i] = false;
                        }
                    }
                    Err(Error::Infeasible(_)) => keep[i] = false,
                    Err(_) => {}
                }
            }
        }
        let kept: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        let mut c = DMatrix::zeros(kept.len(), self.dim());
        let mut e = DVector::zeros(kept.len());
        for (r, &i) in kept.iter().enumerate() {
            c.row_mut(r).copy_from(&norm.c.row(i));
            e[r] = norm.e[i];
        }
        Ok(Polytope { c, e })
    }

    /// Chebyshev center of facet `i`: the deepest point of the polytope
    /// restricted to the hyperplane of row `i`. The returned radius is
    /// measured within that hyperplane's induced slab.
    pub fn facet_center(&self, i: usize) -> Result<(DVector<f64>, f64)> {
        let p = self.dim();
        let m = self.n_rows();
        assert!(i < m, "facet index out of range");
        let mut a = DMatrix::zeros(m + 2, p + 1);
        let mut b = DVector::zeros(m + 2);
        for j in 0..m {
            for k in 0..p {
                a[(j, k)] = self.c[(j, k)];
            }
            if j != i {
                a[(j, p)] = self.c.row(j).norm();
            }
            b[j] = self.e[j];
        }
        // Row i handled as an equality via its mirror image.
        for k in 0..p {
            a[(m, k)] = -self.c[(i, k)];
        }
        b[m] = -self.e[i];
        a[(m + 1, p)] = 1.0;
        b[m + 1] = RADIUS_CAP;
        let mut cost = DVector::zeros(p + 1);
        cost[p] = -1.0;
        let sol = LpEngine::new(a, cost)?.solve(&b)?;
        let center = DVector::from_fn(p, |j, _| sol.x[j]);
        Ok((center, sol.x[p]))
    }

    /// Componentwise extent of the polytope.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = self.dim();
        let mut lo = DVector::zeros(p);
        let mut hi = DVector::zeros(p);
        for j in 0..p {
            for (sign, slot) in [(1.0, false), (-1.0, true)] {
                let mut cost = DVector::zeros(p);
                cost[j] = sign;
                let sol = LpEngine::new(self.c.clone(), cost)?.solve(&self.e)?;
                if slot {
                    hi[j] = sol.x[j];
                } else {
                    lo[j] = sol.x[j];
                }
            }
        }
        Ok((lo, hi))
    }

    /// All vertices, by enumerating row subsets of size `dim`. Returns
    /// `None` when `C(m, dim)` exceeds `budget`. Points are deduplicated.
    pub fn vertices(&self, budget: usize) -> Option<Vec<DVector<f64>>> {
        let p = self.dim();
        let m = self.n_rows();
        if m < p || combinations_exceed(m, p, budget) {
            return None;
        }
        let mut verts: Vec<DVector<f64>> = Vec::new();
        let mut combo: Vec<usize> = (0..p).collect();
        loop {
            let sub = DMatrix::from_fn(p, p, |r, c| self.c[(combo[r], c)]);
            let rhs = DVector::from_fn(p, |r, _| self.e[combo[r]]);
            if let Some(v) = sub.lu().solve(&rhs) {
                if self.contains(&v, 1e-7)
                    && !verts.iter().any(|u| (u - &v).amax() <= 1e-7 * (1.0 + v.amax()))
                {
                    verts.push(v);
                }
            }
            if !next_combination(&mut combo, m) {
                break;
            }
        }
        Some(verts)
    }

    /// Whether the interiors of two polytopes share a ball of radius
    /// greater than `margin`.
    pub fn interior_overlap(&self, other: &Polytope, margin: f64) -> Result<bool> {
        assert_eq!(self.dim(), other.dim());
        let joint = self.intersect(other);
        let (_, radius) = joint.chebyshev_center()?;
        Ok(radius > margin)
    }
}

/// True when `C(m, k)` exceeds `budget` (saturating).
fn combinations_exceed(m: usize, k: usize, budget: usize) -> bool {
    let mut count: usize = 1;
    for i in 0..k {
        count = match count.checked_mul(m - i) {
            Some(v) => v / (i + 1),
            None => return true,
        };
        if count > budget {
            return true;
        }
    }
    count > budget
}
