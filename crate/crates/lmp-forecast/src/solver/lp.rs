//! Dense linear programming in row form: `min cᵀx subject to A x ≤ b`.
//!
//! The solver works on the dual put in standard form,
//!
//! ```text
//!     min  bᵀy   subject to   Aᵀ y = −c,   y ≥ 0,
//! ```
//!
//! with a two-phase revised simplex under Bland's rule. This shape is a
//! perfect fit for parametric work on the primal:
//!
//! * an optimal dual **basis is the primal active set** (the rows of `A`
//!   whose multipliers are basic),
//! * the dual **variables are the row multipliers** needed for pricing,
//! * the simplex multipliers of the dual recover the **primal point**
//!   `x = A_B⁻¹ b_B`, and
//! * the dual feasible set does not involve `b`, so **Phase 1 depends only
//!   on `(A, c)`** and is computed once per problem, then reused for every
//!   right-hand side `b + Eθ`.
//!
//! Bland's rule (smallest eligible index for both entering and leaving
//! variables) keeps every pivot deterministic and rules out cycling on the
//! degenerate programs that appear at critical-region boundaries.
//!
//! After the simplex terminates, the reported `x`, `y` and objective are
//! recomputed from scratch from the sorted basis with fresh LU
//! factorizations. Downstream code that re-evaluates a cached active set
//! therefore reproduces the solver's output bit for bit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Optimal point of a row-form LP together with its duals and active set.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Primal optimizer.
    pub x: DVector<f64>,
    /// One multiplier per row of `A` (non-negative up to roundoff, zero off
    /// the basis).
    pub y: DVector<f64>,
    /// Sorted row indices forming the optimal basis (`|basis| = n`).
    pub basis: Vec<usize>,
    /// `cᵀx` recomputed from the final basis.
    pub objective: f64,
}

/// Reusable solver state for a fixed `(A, c)` pair.
pub struct LpEngine {
    a: DMatrix<f64>,
    c: DVector<f64>,
    /// `Aᵀ`, the dual constraint matrix (`n × m`).
    at: DMatrix<f64>,
    /// Dual right-hand side `−c`.
    h: DVector<f64>,
    m: usize,
    n: usize,
    /// Signs that make the Phase-1 artificial basis feasible.
    art_sign: Vec<f64>,
    /// Dual-feasible basis produced by Phase 1 (column ids `< m`).
    start_basis: Vec<usize>,
    start_binv: DMatrix<f64>,
    /// Magnitude scale of `A` entries, used for pivot tolerances.
    mat_scale: f64,
    cost_scale_c: f64,
}

enum SimplexExit {
    Optimal,
    Unbounded,
}

const REFACTOR_EVERY: usize = 64;

impl LpEngine {
    /// Builds the engine and runs Phase 1. Fails if the stationarity system
    /// `Aᵀy = −c, y ≥ 0` is infeasible (the primal objective is unbounded
    /// below on any nonempty feasible set) or rank-deficient.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if n == 0 || m < n {
            return Err(Error::SolverFailure(format!(
                "row-form LP needs at least as many rows as variables (m={m}, n={n})"
            )));
        }
        if c.len() != n {
            return Err(Error::Dimension { what: "cost vector", expected: n, got: c.len() });
        }
        if a.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("non-finite entry in LP data".into()));
        }
        let at = a.transpose();
        let h = -&c;
        let art_sign: Vec<f64> = (0..n).map(|i| if h[i] >= 0.0 { 1.0 } else { -1.0 }).collect();
        let mat_scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let cost_scale_c = c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));

        let mut eng = LpEngine {
            a,
            c,
            at,
            h,
            m,
            n,
            art_sign,
            start_basis: Vec::new(),
            start_binv: DMatrix::zeros(n, n),
            mat_scale,
            cost_scale_c,
        };
        eng.phase_one()?;
        Ok(eng)
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    fn phase_one(&mut self) -> Result<()> {
        // Artificial basis: column m+i is sign_i·e_i, so B = diag(sign) and
        // B⁻¹ = diag(sign).
        let mut state = State {
            basis: (self.m..self.m + self.n).collect(),
            in_basis: {
                let mut v = vec![false; self.m + self.n];
                v[self.m..].fill(true);
                v
            },
            b_inv: DMatrix::from_fn(self.n, self.n, |r, c| {
                if r == c {
                    self.art_sign[r]
                } else {
                    0.0
                }
            }),
            pivots: 0,
        };
        let phase1_cost = |j: usize| if j < self.m { 0.0 } else { 1.0 };
        match self.simplex(&mut state, &phase1_cost, true)? {
            SimplexExit::Unbounded => {
                // min of a sum of non-negative variables cannot be unbounded
                return Err(Error::SolverFailure("phase-1 LP reported unbounded".into()));
            }
            SimplexExit::Optimal => {}
        }
        let xb = &state.b_inv * &self.h;
        let infeas: f64 = state
            .basis
            .iter()
            .zip(xb.iter())
            .filter(|(j, _)| **j >= self.m)
            .map(|(_, v)| v.max(0.0))
            .sum();
        if infeas > 1e-7 * self.cost_scale_c {
            return Err(Error::Unbounded(
                "stationarity system A'y = -c, y >= 0 is infeasible; \
                 the objective is unbounded below wherever the program is feasible"
                    .into(),
            ));
        }
        self.drive_out_artificials(&mut state)?;
        self.start_basis = state.basis;
        self.start_binv = state.b_inv;
        Ok(())
    }

    /// Pivots any artificial variables (necessarily at value zero) out of the
    /// basis so Phase 2 can ignore them entirely.
    fn drive_out_artificials(&self, state: &mut State) -> Result<()> {
        for r in 0..self.n {
            if state.basis[r] < self.m {
                continue;
            }
            let row = state.b_inv.row(r).transpose();
            let mut pivoted = false;
            for j in 0..self.m {
                if state.in_basis[j] {
                    continue;
                }
                let entry = row.dot(&self.at.column(j));
                if entry.abs() > 1e-9 * self.mat_scale {
                    let d = &state.b_inv * self.at.column(j);
                    state.pivot(r, j, &d);
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                return Err(Error::SolverFailure(
                    "stationarity system is rank-deficient (constraint rows do not span \
                     the decision space); the optimizer is not unique"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Solves `min cᵀx s.t. Ax ≤ btilde` from the cached Phase-1 basis.
    pub fn solve(&self, btilde: &DVector<f64>) -> Result<LpSolution> {
        if btilde.len() != self.m {
            return Err(Error::Dimension { what: "right-hand side", expected: self.m, got: btilde.len() });
        }
        let mut state = State {
            basis: self.start_basis.clone(),
            in_basis: {
                let mut v = vec![false; self.m + self.n];
                for &j in &self.start_basis {
                    v[j] = true;
                }
                v
            },
            b_inv: self.start_binv.clone(),
            pivots: 0,
        };
        let phase2_cost = |j: usize| if j < self.m { btilde[j] } else { f64::INFINITY };
        match self.simplex(&mut state, &phase2_cost, false)? {
            SimplexExit::Unbounded => {
                // Dual unbounded <=> primal infeasible.
                return Err(Error::Infeasible(
                    "no dispatch satisfies the constraints at this parameter".into(),
                ));
            }
            SimplexExit::Optimal => {}
        }
        self.recompute(&state.basis, btilde)
    }

    /// Rebuilds the solution from a basis with fresh factorizations; shared
    /// by `solve` and by callers re-evaluating a cached active set.
    pub fn recompute(&self, basis: &[usize], btilde: &DVector<f64>) -> Result<LpSolution> {
        let mut basis: Vec<usize> = basis.to_vec();
        basis.sort_unstable();
        let ab = DMatrix::from_fn(self.n, self.n, |r, c| self.a[(basis[r], c)]);
        let bb = DVector::from_fn(self.n, |r, _| btilde[basis[r]]);
        let lu = ab.clone().lu();
        let x = lu
            .solve(&bb)
            .ok_or_else(|| Error::Degenerate("singular basis matrix in LP recompute".into()))?;
        let yb = ab
            .transpose()
            .lu()
            .solve(&self.h)
            .ok_or_else(|| Error::Degenerate("singular basis matrix in LP dual recompute".into()))?;
        let mut y = DVector::zeros(self.m);
        for (r, &i) in basis.iter().enumerate() {
            y[i] = yb[r];
        }
        let objective = self.c.dot(&x);

        // Safety net: a numerically sloppy exit is retried once with the
        // tableau refactored, then rejected.
        let worst = (0..self.m)
            .map(|i| (self.a.row(i).transpose().dot(&x) - btilde[i]) / (1.0 + btilde[i].abs()))
            .fold(f64::NEG_INFINITY, f64::max);
        let dual_ok = y.iter().all(|v| *v >= -1e-7 * self.cost_scale_c);
        if worst > 1e-6 || !dual_ok {
            return Err(Error::SolverFailure(format!(
                "LP exit failed validation (primal violation {worst:.3e}, dual feasible: {dual_ok})"
            )));
        }
        Ok(LpSolution { x, y, basis, objective })
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.m {
            self.at.column(j).into()
        } else {
            let mut e = DVector::zeros(self.n);
            e[j - self.m] = self.art_sign[j - self.m];
            e
        }
    }

    fn simplex(
        &self,
        state: &mut State,
        cost: &dyn Fn(usize) -> f64,
        allow_artificial: bool,
    ) -> Result<SimplexExit> {
        let piv_tol = 1e-10 * self.mat_scale;
        let max_iter = 200 * (self.m + self.n) + 1000;
        let n_cols = if allow_artificial { self.m + self.n } else { self.m };

        for _ in 0..max_iter {
            if state.pivots >= REFACTOR_EVERY {
                self.refactor(state)?;
            }
            // Simplex multipliers for the current basis.
            let cb = DVector::from_fn(self.n, |r, _| cost(state.basis[r]));
            let pi = state.b_inv.transpose() * cb;

            // Bland: first column with a negative reduced cost enters. The
            // tolerance is per column — objective entries of very different
            // magnitudes (big bound rows next to unit rows) must not mask
            // each other's reduced costs.
            let mut entering = None;
            for j in 0..n_cols {
                if state.in_basis[j] {
                    continue;
                }
                let dot = pi.dot(&self.column(j));
                let rc = cost(j) - dot;
                if rc < -1e-9 * (1.0 + cost(j).abs() + dot.abs()) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(SimplexExit::Optimal);
            };

            let d = &state.b_inv * self.column(j);
            let xb = &state.b_inv * &self.h;
            // Bland: among minimum-ratio rows, the smallest basic variable
            // index leaves.
            let mut best: Option<(f64, usize, usize)> = None; // (ratio, var, row)
            for r in 0..self.n {
                if d[r] > piv_tol {
                    let ratio = xb[r].max(0.0) / d[r];
                    match best {
                        None => best = Some((ratio, state.basis[r], r)),
                        Some((br, bv, _)) => {
                            if ratio < br - 1e-12 * (1.0 + br)
                                || (ratio <= br + 1e-12 * (1.0 + br) && state.basis[r] < bv)
                            {
                                best = Some((ratio, state.basis[r], r));
                            }
                        }
                    }
                }
            }
            let Some((_, _, r)) = best else {
                return Ok(SimplexExit::Unbounded);
            };
            state.pivot(r, j, &d);
        }
        Err(Error::SolverFailure("simplex iteration limit exceeded".into()))
    }

    fn refactor(&self, state: &mut State) -> Result<()> {
        let b = DMatrix::from_fn(self.n, self.n, |r, c| self.column(state.basis[c])[r]);
        state.b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::SolverFailure("singular basis during refactorization".into()))?;
        state.pivots = 0;
        Ok(())
    }
}

struct State {
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    b_inv: DMatrix<f64>,
    pivots: usize,
}

impl State {
    /// Product-form update of `B⁻¹` for basis row `r` replaced by column `j`
    /// with tableau column `d = B⁻¹ a_j`.
    fn pivot(&mut self, r: usize, j: usize, d: &DVector<f64>) {
        let n = self.b_inv.nrows();
        let dr = d[r];
        for row in 0..n {
            if row == r {
                continue;
            }
            let factor = d[row] / dr;
            if factor != 0.0 {
                for col in 0..n {
                    let v = self.b_inv[(r, col)];
                    self.b_inv[(row, col)] -= factor * v;
                }
            }
        }
        for col in 0..n {
            self.b_inv[(r, col)] /= dr;
        }
        self.in_basis[self.basis[r]] = false;
        self.in_basis[j] = true;
        self.basis[r] = j;
        self.pivots += 1;
    }
}
