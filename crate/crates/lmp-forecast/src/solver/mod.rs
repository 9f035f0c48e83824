//! Dense active-set LP/QP kernels with exact duals.
//!
//! Both solvers deliver the same three artifacts the rest of the crate is
//! built on: the optimizer, one multiplier per constraint row, and the
//! working set of rows treated as equalities — all deterministic functions
//! of the problem data, with ties broken by index so repeated runs and
//! cached re-evaluations agree exactly.

pub mod lp;
pub mod qp;

use nalgebra::{DMatrix, DVector};

/// Relative tolerance for classifying a constraint row as binding:
/// `|aᵢᵀx − bᵢ| ≤ BIND_TOL · (1 + |bᵢ|)`.
pub const BIND_TOL: f64 = 1e-7;

/// Rows of `A` binding at `x` under the relative tolerance `tol`.
pub fn tight_rows(a: &DMatrix<f64>, btilde: &DVector<f64>, x: &DVector<f64>, tol: f64) -> Vec<usize> {
    (0..a.nrows())
        .filter(|&i| {
            let slack = btilde[i] - a.row(i).transpose().dot(x);
            slack.abs() <= tol * (1.0 + btilde[i].abs())
        })
        .collect()
}

/// Advance strictly increasing positions into `0..m` to the next
/// lexicographic combination; returns `false` once exhausted.
pub(crate) fn next_combination(combo: &mut [usize], m: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if combo[i] != i + m - k {
            break;
        }
    }
    combo[i] += 1;
    for j in i + 1..k {
        combo[j] = combo[j - 1] + 1;
    }
    true
}

/// Lexicographically smallest optimal basis among the tight rows of an LP.
///
/// Scans size-`n` subsets of `tight` (assumed sorted) in lexicographic
/// order and returns the first whose rows are independent and whose basic
/// multipliers solve `A_Wᵀ y = −c` with `y ≥ 0` — i.e. the smallest active
/// set that certifies optimality of `x`. Returns `None` when the search is
/// exhausted or the combination budget `cap` runs out.
pub fn lex_smallest_optimal_basis(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    tight: &[usize],
    n: usize,
    cap: usize,
) -> Option<Vec<usize>> {
    if tight.len() < n {
        return None;
    }
    let mut tried = 0usize;
    let mut combo: Vec<usize> = (0..n).collect(); // positions into `tight`
    loop {
        tried += 1;
        if tried > cap {
            return None;
        }
        let rows: Vec<usize> = combo.iter().map(|&p| tight[p]).collect();
        if let Some(y) = dual_for_basis(a, c, &rows) {
            if y.iter().all(|v| *v >= -1e-7 * (1.0 + c.amax())) {
                return Some(rows);
            }
        }
        if !next_combination(&mut combo, tight.len()) {
            return None;
        }
    }
}

fn dual_for_basis(a: &DMatrix<f64>, c: &DVector<f64>, rows: &[usize]) -> Option<DVector<f64>> {
    let n = a.ncols();
    let ab = DMatrix::from_fn(rows.len(), n, |r, cc| a[(rows[r], cc)]);
    ab.transpose().lu().solve(&(-c))
}
