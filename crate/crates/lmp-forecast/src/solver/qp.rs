//! Dense strictly convex quadratic programming in row form:
//! `min ½xᵀHx + cᵀx subject to A x ≤ b`, H ≻ 0.
//!
//! Implemented as a dual active-set method in the Goldfarb–Idnani style: the
//! iterate starts at the unconstrained minimum and adds the most violated
//! constraint at a time, taking the longer of a primal step (onto the new
//! constraint) or a dual step (dropping a working constraint whose
//! multiplier would go negative). No Phase 1 is needed and the working set
//! with its multipliers is the natural output — exactly what critical-region
//! construction consumes.
//!
//! Unlike the classical implementation, factors are rebuilt per step from
//! the current working set instead of being updated with Givens rotations;
//! at the problem sizes this crate targets (tens of variables) that costs
//! little and keeps every quantity a pure function of the working set, which
//! the bit-reproducibility contract of the sample streams relies on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Optimal point of a strictly convex row-form QP.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row, zero off the working set.
    pub y: DVector<f64>,
    /// Sorted working set (rows treated as equalities at the optimum).
    pub working_set: Vec<usize>,
    /// `½xᵀHx + cᵀx` recomputed from the final working set.
    pub objective: f64,
}

/// Reusable solver state for fixed `(H, c, A)`.
#[derive(Debug)]
pub struct QpEngine {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    c: DVector<f64>,
    hchol: Cholesky<f64, Dyn>,
    /// Euclidean norms of the rows of `A`, for scale-fair violation ranking.
    row_norm: Vec<f64>,
    m: usize,
    n: usize,
}

impl QpEngine {
    pub fn new(a: DMatrix<f64>, h: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if h.shape() != (n, n) {
            return Err(Error::Dimension { what: "Hessian", expected: n, got: h.nrows() });
        }
        if c.len() != n {
            return Err(Error::Dimension { what: "cost vector", expected: n, got: c.len() });
        }
        if a.iter().chain(h.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("non-finite entry in QP data".into()));
        }
        let hchol = Cholesky::new(h.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let row_norm = (0..m).map(|i| a.row(i).norm().max(1e-300)).collect();
        Ok(QpEngine { a, h, c, hchol, row_norm, m, n })
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    /// Solves for the given right-hand side; the returned numbers are the
    /// output of [`QpEngine::recompute`] on the discovered working set.
    pub fn solve(&self, btilde: &DVector<f64>) -> Result<QpSolution> {
        if btilde.len() != self.m {
            return Err(Error::Dimension { what: "right-hand side", expected: self.m, got: btilde.len() });
        }
        let feas_tol = |i: usize| 1e-9 * (1.0 + btilde[i].abs()) * self.row_norm[i].max(1.0);

        let mut x = self.hchol.solve(&(-&self.c));
        let mut working: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let max_steps = 50 * (self.m + self.n) + 1000;
        let mut steps = 0usize;

        'outer: loop {
            // Most violated constraint, in units of the row norm; smallest
            // index wins ties so the path is deterministic.
            let mut p = None;
            let mut worst = 0.0f64;
            for i in 0..self.m {
                if working.contains(&i) {
                    continue;
                }
                let s = self.a.row(i).transpose().dot(&x) - btilde[i];
                if s > feas_tol(i) {
                    let v = s / self.row_norm[i];
                    if v > worst * (1.0 + 1e-12) {
                        worst = v;
                        p = Some(i);
                    }
                }
            }
            let Some(p) = p else { break 'outer };

            let ap = self.a.row(p).transpose();
            let mut u_p = 0.0f64;
            loop {
                steps += 1;
                if steps > max_steps {
                    return Err(Error::SolverFailure("QP active-set iteration limit exceeded".into()));
                }
                let z0 = self.hchol.solve(&ap);
                let (z, r) = if working.is_empty() {
                    (z0.clone(), DVector::zeros(0))
                } else {
                    let aw = self.rows(&working);
                    let k = self.hchol.solve(&aw.transpose());
                    let mmat = &aw * &k;
                    let mchol = Cholesky::new(mmat).ok_or_else(|| {
                        Error::Degenerate("working-set Gram matrix lost positive definiteness".into())
                    })?;
                    let r = mchol.solve(&(&aw * &z0));
                    (z0.clone() - &k * &r, r)
                };
                let apz = ap.dot(&z);
                let s_p = ap.dot(&x) - btilde[p];

                // Full step: lands on constraint p.
                let t2 = if apz > 1e-12 { s_p / apz } else { f64::INFINITY };
                // Dual step: first working multiplier driven to zero. Strict
                // `<` keeps the smallest position on ties, so the drop order
                // is deterministic.
                let mut t1 = f64::INFINITY;
                let mut drop_pos = None;
                for (pos, &uk) in u.iter().enumerate() {
                    let rk = r[pos];
                    if rk > 1e-12 {
                        let t = uk / rk;
                        if t < t1 {
                            t1 = t;
                            drop_pos = Some(pos);
                        }
                    }
                }
                if !t1.is_finite() && !t2.is_finite() {
                    return Err(Error::Infeasible(
                        "no dispatch satisfies the constraints at this parameter".into(),
                    ));
                }
                if t2 <= t1 {
                    x -= &z * t2;
                    for (pos, uk) in u.iter_mut().enumerate() {
                        *uk -= t2 * r[pos];
                    }
                    u_p += t2;
                    working.push(p);
                    u.push(u_p);
                    continue 'outer;
                } else {
                    if t1.is_finite() {
                        x -= &z * t1;
                        for (pos, uk) in u.iter_mut().enumerate() {
                            *uk -= t1 * r[pos];
                        }
                        u_p += t1;
                    }
                    let pos = drop_pos.expect("finite dual step without a blocking row");
                    working.remove(pos);
                    u.remove(pos);
                }
            }
        }

        let mut ws = working.clone();
        ws.sort_unstable();
        let (x, y) = self.recompute(&ws, btilde)?;

        let worstv = (0..self.m)
            .map(|i| (self.a.row(i).transpose().dot(&x) - btilde[i]) / self.row_norm[i].max(1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if worstv > 1e-6 * (1.0 + btilde.amax()) {
            return Err(Error::SolverFailure(format!(
                "QP exit failed primal validation (violation {worstv:.3e})"
            )));
        }
        if y.iter().any(|v| *v < -1e-7) {
            return Err(Error::SolverFailure("QP exit failed dual validation".into()));
        }
        let objective = self.objective(&x);
        Ok(QpSolution { x, y, working_set: ws, objective })
    }

    /// Exact primal/dual pair for a given working set:
    ///
    /// ```text
    ///   y_W = −(A_W H⁻¹ A_Wᵀ)⁻¹ (b_W + A_W H⁻¹ c),     x = −H⁻¹(c + A_Wᵀ y_W).
    /// ```
    ///
    /// Every consumer of a cached working set (region construction, cache
    /// hits in the online simulator, the solver itself) funnels through this
    /// one function so their outputs agree bit for bit.
    pub fn recompute(&self, working_sorted: &[usize], btilde: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut y = DVector::zeros(self.m);
        if working_sorted.is_empty() {
            let x = self.hchol.solve(&(-&self.c));
            return Ok((x, y));
        }
        let aw = self.rows(working_sorted);
        let bw = DVector::from_fn(working_sorted.len(), |r, _| btilde[working_sorted[r]]);
        let k = self.hchol.solve(&aw.transpose());
        let mmat = &aw * &k;
        let mchol = Cholesky::new(mmat).ok_or_else(|| {
            Error::Degenerate("working set has linearly dependent rows".into())
        })?;
        let hinv_c = self.hchol.solve(&self.c);
        let rhs = bw + &aw * &hinv_c;
        let yw = -mchol.solve(&rhs);
        let x = -self.hchol.solve(&(&self.c + aw.transpose() * &yw));
        for (pos, &i) in working_sorted.iter().enumerate() {
            y[i] = yw[pos];
        }
        Ok((x, y))
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.h * x).dot(x) + self.c.dot(x)
    }

    fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.n, |r, c| self.a[(idx[r], c)])
    }
}
