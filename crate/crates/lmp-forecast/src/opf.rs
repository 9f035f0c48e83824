//! The parametric dispatch problem and pointwise solves.
//!
//! [`build_mpp`] turns a [`SystemSnapshot`] into the standard form
//!
//! ```text
//!     minimize    c·g  (+ g·Q·g for quadratic costs)
//!     subject to  A g ≤ b + E θ
//! ```
//!
//! where `g` is the dispatch vector and `θ` the stochastic injections. The
//! row order is fixed and relied on everywhere downstream:
//!
//! | rows                | meaning                              |
//! |---------------------|--------------------------------------|
//! | `0`, `1`            | energy balance, split into `≤` pair  |
//! | `2 .. 2+m`          | line flow upper bounds               |
//! | `2+m .. 2+2m`       | line flow lower bounds               |
//! | `2+2m .. 2+2m+k`    | generator upper bounds               |
//! | `2+2m+k .. 2+2m+2k` | generator lower bounds               |
//!
//! with `m` in-service lines and `k` generators. Balance rows 0 and 1 are
//! exact negatives of each other, so both are always tight; every consumer
//! of tight sets must treat that pair as one equality.
//!
//! [`MppProblem::solve_at`] solves the program at a fixed `θ` and returns
//! dispatch, row multipliers, nodal prices, flows, and the tight/working
//! constraint sets. Prices follow the usual sensitivity form: with `λ` the
//! balance multiplier and `μ±` the flow multipliers, the price at bus `i`
//! is `λ − Σ_ℓ S[ℓ,i]·(μ⁺_ℓ − μ⁻_ℓ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{CostKind, SystemSnapshot};
use crate::solver::lp::{LpEngine, LpSolution};
use crate::solver::qp::QpEngine;
use crate::solver::{lex_smallest_optimal_basis, tight_rows, BIND_TOL};

/// What a constraint row constrains; the payload indexes into the
/// snapshot's line rows or generator list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    BalanceUpper,
    BalanceLower,
    LineUpper(usize),
    LineLower(usize),
    GenUpper(usize),
    GenLower(usize),
}

enum EngineKind {
    Lp(LpEngine),
    Qp(QpEngine),
}

/// The dispatch program with a parametric right-hand side, plus the cached
/// solver state reused across all parameter values.
pub struct MppProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub e: DMatrix<f64>,
    pub rows: Vec<RowKind>,
    pub cost: CostKind,
    pub cost_linear: DVector<f64>,
    /// Hessian of the objective (`2·diag(quadratic)`), quadratic costs only.
    pub hessian: Option<DMatrix<f64>>,
    pub box_lower: DVector<f64>,
    pub box_upper: DVector<f64>,
    pub shift: DMatrix<f64>,
    pub line_upper: DVector<f64>,
    pub line_lower: DVector<f64>,
    pub n_bus: usize,
    pub gen_bus: Vec<usize>,
    pub line_pos: Vec<usize>,
    pub n_line_total: usize,
    pub time: u32,
    engine: EngineKind,
}

/// A solved dispatch at one parameter value.
#[derive(Debug, Clone)]
pub struct DispatchSolution {
    pub theta: DVector<f64>,
    /// Generator outputs, ordered as in the snapshot.
    pub dispatch: DVector<f64>,
    pub objective: f64,
    /// One multiplier per constraint row.
    pub multipliers: DVector<f64>,
    /// Energy balance multiplier (system marginal price).
    pub lambda: f64,
    /// Flow upper/lower bound multipliers, one per in-service line.
    pub mu_upper: DVector<f64>,
    pub mu_lower: DVector<f64>,
    /// Nodal prices.
    pub lmp: DVector<f64>,
    /// Line flows, one per in-service line, in the from→to direction.
    pub flows: DVector<f64>,
    /// Per original case line: +1 at upper limit with positive multiplier,
    /// −1 at lower limit, 0 otherwise (out-of-service lines are 0).
    pub congestion: Vec<i8>,
    /// All rows binding at the solution (includes both balance rows).
    pub active_set: Vec<usize>,
    /// Row basis (linear) or working set (quadratic) certifying optimality.
    pub working_set: Vec<usize>,
    /// True when more rows were tight than the working set explains.
    pub degenerate: bool,
}

/// Build the parametric program for a frozen system.
pub fn build_mpp(snap: &SystemSnapshot) -> Result<MppProblem> {
    let m = snap.n_line();
    let k = snap.n_gen();
    let p = snap.param_dim();
    let n_rows = 2 + 2 * m + 2 * k;

    let mut a = DMatrix::zeros(n_rows, k);
    let mut b = DVector::zeros(n_rows);
    let mut e = DMatrix::zeros(n_rows, p);
    let mut rows = Vec::with_capacity(n_rows);

    let total_fixed: f64 = snap.fixed_withdrawal.sum();
    let s_dfix = &snap.shift * &snap.fixed_withdrawal;

    // Balance pair.
    for g in 0..k {
        a[(0, g)] = 1.0;
        a[(1, g)] = -1.0;
    }
    b[0] = total_fixed;
    b[1] = -total_fixed;
    for j in 0..p {
        e[(0, j)] = snap.slot_sign[j];
        e[(1, j)] = -snap.slot_sign[j];
    }
    rows.push(RowKind::BalanceUpper);
    rows.push(RowKind::BalanceLower);

    // Flow bounds: S·(Mg·g − w(θ)) ≤ upper and ≥ lower.
    for l in 0..m {
        for g in 0..k {
            a[(2 + l, g)] = snap.shift[(l, snap.gen_bus[g])];
            a[(2 + m + l, g)] = -snap.shift[(l, snap.gen_bus[g])];
        }
        b[2 + l] = snap.line_upper[l] + s_dfix[l];
        b[2 + m + l] = -snap.line_lower[l] - s_dfix[l];
        for j in 0..p {
            let sw = snap.slot_sign[j] * snap.shift[(l, snap.slot_bus[j])];
            e[(2 + l, j)] = sw;
            e[(2 + m + l, j)] = -sw;
        }
        rows.push(RowKind::LineUpper(l));
    }
    for l in 0..m {
        rows.push(RowKind::LineLower(l));
    }

    // Generator bounds.
    for g in 0..k {
        a[(2 + 2 * m + g, g)] = 1.0;
        a[(2 + 2 * m + k + g, g)] = -1.0;
        b[2 + 2 * m + g] = snap.gen_upper[g];
        b[2 + 2 * m + k + g] = -snap.gen_lower[g];
    }
    for g in 0..k {
        rows.push(RowKind::GenUpper(g));
    }
    for g in 0..k {
        rows.push(RowKind::GenLower(g));
    }

    let (hessian, engine) = match snap.cost {
        CostKind::Linear => {
            let engine = LpEngine::new(a.clone(), snap.cost_linear.clone())?;
            (None, EngineKind::Lp(engine))
        }
        CostKind::Quadratic => {
            let q = snap.cost_quadratic.as_ref().expect("quadratic snapshot has coefficients");
            let h = DMatrix::from_diagonal(&q.map(|v| 2.0 * v));
            let engine = QpEngine::new(a.clone(), h.clone(), snap.cost_linear.clone())?;
            (Some(h), EngineKind::Qp(engine))
        }
    };

    Ok(MppProblem {
        a,
        b,
        e,
        rows,
        cost: snap.cost,
        cost_linear: snap.cost_linear.clone(),
        hessian,
        box_lower: snap.box_lower.clone(),
        box_upper: snap.box_upper.clone(),
        shift: snap.shift.clone(),
        line_upper: snap.line_upper.clone(),
        line_lower: snap.line_lower.clone(),
        n_bus: snap.n_bus,
        gen_bus: snap.gen_bus.clone(),
        line_pos: snap.line_pos.clone(),
        n_line_total: snap.n_line_total,
        time: snap.time,
        engine,
    })
}

impl MppProblem {
    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_gen(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_line(&self) -> usize {
        self.line_pos.len()
    }

    pub fn param_dim(&self) -> usize {
        self.e.ncols()
    }

    /// The other half of the balance pair, for rows that have one.
    pub fn twin_row(&self, i: usize) -> Option<usize> {
        match i {
            0 => Some(1),
            1 => Some(0),
            _ => None,
        }
    }

    /// Right-hand side at a parameter value.
    pub fn rhs(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.param_dim() {
            return Err(Error::Dimension {
                what: "theta",
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        Ok(&self.b + &self.e * theta)
    }

    /// Whether `theta` lies inside the declared parameter box.
    pub fn in_box(&self, theta: &DVector<f64>) -> bool {
        (0..theta.len()).all(|j| theta[j] >= self.box_lower[j] && theta[j] <= self.box_upper[j])
    }

    /// Nodal prices from row multipliers.
    pub fn prices(&self, y: &DVector<f64>) -> DVector<f64> {
        let m = self.n_line();
        let lambda = y[1] - y[0];
        let mut pi = DVector::from_element(self.n_bus, lambda);
        for l in 0..m {
            let mu = y[2 + l] - y[2 + m + l];
            if mu != 0.0 {
                for bus in 0..self.n_bus {
                    pi[bus] -= self.shift[(l, bus)] * mu;
                }
            }
        }
        pi
    }

    /// Matrix `T` with `prices(y) = T·y`, used to compose affine price maps.
    pub fn price_matrix(&self) -> DMatrix<f64> {
        let m = self.n_line();
        let mut t = DMatrix::zeros(self.n_bus, self.n_rows());
        for bus in 0..self.n_bus {
            t[(bus, 0)] = -1.0;
            t[(bus, 1)] = 1.0;
            for l in 0..m {
                t[(bus, 2 + l)] = -self.shift[(l, bus)];
                t[(bus, 2 + m + l)] = self.shift[(l, bus)];
            }
        }
        t
    }

    /// Congestion status per original case line from flow multipliers.
    pub fn congestion_from_multipliers(&self, y: &DVector<f64>) -> Vec<i8> {
        let m = self.n_line();
        let tol = 1e-7 * (1.0 + self.cost_linear.amax());
        let mut status = vec![0i8; self.n_line_total];
        for l in 0..m {
            let s = if y[2 + l] > tol {
                1
            } else if y[2 + m + l] > tol {
                -1
            } else {
                0
            };
            status[self.line_pos[l]] = s;
        }
        status
    }

    /// Line flows implied by a dispatch at a parameter value. Row `2+ℓ`
    /// reads `Sᵀ(Mg·g) ≤ upper_ℓ + (S·w(θ))_ℓ = b̃`, so the from→to flow is
    /// `A_{2+ℓ}·g − b̃_{2+ℓ} + upper_ℓ`.
    pub fn flows(&self, x: &DVector<f64>, btilde: &DVector<f64>) -> DVector<f64> {
        let m = self.n_line();
        DVector::from_fn(m, |l, _| {
            self.a.row(2 + l).transpose().dot(x) - btilde[2 + l] + self.line_upper[l]
        })
    }

    /// Re-evaluate primal/dual values for a known working set at `theta`.
    ///
    /// This is the arithmetic shared by fresh solves and cached region
    /// lookups: both end in the same factor-solve sequence, so a stream of
    /// prices is bitwise identical whether or not a cache served it.
    pub fn evaluate_working_set(
        &self,
        working_set: &[usize],
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let btilde = self.rhs(theta)?;
        match &self.engine {
            EngineKind::Lp(lp) => {
                let sol = lp.recompute(working_set, &btilde)?;
                Ok((sol.x, sol.y))
            }
            EngineKind::Qp(qp) => qp.recompute(working_set, &btilde),
        }
    }

    /// Solve the dispatch program at `theta`.
    pub fn solve_at(&self, theta: &DVector<f64>) -> Result<DispatchSolution> {
        let btilde = self.rhs(theta)?;
        let (x, y, working_set, objective) = match &self.engine {
            EngineKind::Lp(lp) => {
                let sol = lp.solve(&btilde)?;
                (sol.x, sol.y, sol.basis, sol.objective)
            }
            EngineKind::Qp(qp) => {
                let sol = qp.solve(&btilde)?;
                (sol.x, sol.y, sol.working_set, sol.objective)
            }
        };

        let active_set = tight_rows(&self.a, &btilde, &x, BIND_TOL);
        let degenerate = self.has_unexplained_tight_rows(&active_set, &working_set);

        let (x, y, working_set, objective) = if degenerate && self.cost == CostKind::Linear {
            match self.lexicographic_cleanup(&active_set, &btilde) {
                Some(sol) => (sol.x, sol.y, sol.basis, sol.objective),
                None => (x, y, working_set, objective),
            }
        } else {
            (x, y, working_set, objective)
        };

        let m = self.n_line();
        let lambda = y[1] - y[0];
        let mu_upper = DVector::from_fn(m, |l, _| y[2 + l]);
        let mu_lower = DVector::from_fn(m, |l, _| y[2 + m + l]);
        let lmp = self.prices(&y);
        let congestion = self.congestion_from_multipliers(&y);
        let flows = self.flows(&x, &btilde);

        Ok(DispatchSolution {
            theta: theta.clone(),
            dispatch: x,
            objective,
            multipliers: y,
            lambda,
            mu_upper,
            mu_lower,
            lmp,
            flows,
            congestion,
            active_set,
            working_set,
            degenerate,
        })
    }

    /// True when some tight row is neither in the working set nor the
    /// balance twin of a working row.
    fn has_unexplained_tight_rows(&self, active: &[usize], working: &[usize]) -> bool {
        active.iter().any(|&i| {
            if working.contains(&i) {
                return false;
            }
            match self.twin_row(i) {
                Some(t) => !working.contains(&t),
                None => true,
            }
        })
    }

    /// At a degenerate vertex of a linear program, pick the optimal basis
    /// with lexicographically smallest row indices so repeated solves and
    /// region seeds agree on one canonical representative.
    fn lexicographic_cleanup(&self, active: &[usize], btilde: &DVector<f64>) -> Option<LpSolution> {
        let lp = match &self.engine {
            EngineKind::Lp(lp) => lp,
            EngineKind::Qp(_) => return None,
        };
        let basis =
            lex_smallest_optimal_basis(&self.a, &self.cost_linear, active, self.n_gen(), 20_000)?;
        lp.recompute(&basis, btilde).ok()
    }

    /// Working set from a solve with an infinitesimally dithered right-hand
    /// side. At a degenerate parameter point this lands in one of the
    /// adjacent full-dimensional configurations; the caller then rebuilds
    /// the region from the exact (undithered) data.
    pub fn solve_perturbed<R: Rng>(&self, theta: &DVector<f64>, rng: &mut R) -> Result<Vec<usize>> {
        let btilde = self.rhs(theta)?;
        let dithered = DVector::from_fn(btilde.len(), |i, _| {
            btilde[i] + (rng.random::<f64>() - 0.5) * 2e-9 * (1.0 + btilde[i].abs())
        });
        match &self.engine {
            EngineKind::Lp(lp) => lp.solve(&dithered).map(|s| s.basis),
            EngineKind::Qp(qp) => qp.solve(&dithered).map(|s| s.working_set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests_support::three_bus_case;
    use approx::assert_relative_eq;

    fn problem() -> MppProblem {
        build_mpp(&three_bus_case().snapshot_at(0).unwrap()).unwrap()
    }

    #[test]
    fn row_layout_matches_contract() {
        let p = problem();
        assert_eq!(p.n_rows(), 2 + 2 * 3 + 2 * 2);
        assert_eq!(p.rows[0], RowKind::BalanceUpper);
        assert_eq!(p.rows[1], RowKind::BalanceLower);
        assert_eq!(p.rows[2], RowKind::LineUpper(0));
        assert_eq!(p.rows[5], RowKind::LineLower(0));
        assert_eq!(p.rows[8], RowKind::GenUpper(0));
        assert_eq!(p.rows[10], RowKind::GenLower(0));
        // Balance rows are exact negatives: twin bookkeeping applies.
        assert_eq!(p.a.row(0), -p.a.row(1));
        assert_eq!(p.twin_row(0), Some(1));
        assert_eq!(p.twin_row(5), None);
    }

    #[test]
    fn cheap_generator_covers_light_load() {
        let p = problem();
        let sol = p.solve_at(&DVector::from_row_slice(&[100.0])).unwrap();
        assert_relative_eq!(sol.dispatch[0], 100.0, epsilon = 1e-8);
        assert_relative_eq!(sol.dispatch[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(sol.lambda, 10.0, epsilon = 1e-9);
        for bus in 0..3 {
            assert_relative_eq!(sol.lmp[bus], 10.0, epsilon = 1e-9);
        }
        assert_eq!(sol.congestion, vec![0, 0, 0]);
        assert!(!sol.degenerate);
    }

    #[test]
    fn marginal_unit_switches_past_cheap_capacity() {
        let p = problem();
        let sol = p.solve_at(&DVector::from_row_slice(&[150.0])).unwrap();
        assert_relative_eq!(sol.dispatch[0], 130.0, epsilon = 1e-8);
        assert_relative_eq!(sol.dispatch[1], 20.0, epsilon = 1e-8);
        for bus in 0..3 {
            assert_relative_eq!(sol.lmp[bus], 15.0, epsilon = 1e-9);
        }
        assert_eq!(sol.congestion, vec![0, 0, 0]);
    }

    #[test]
    fn congestion_splits_nodal_prices() {
        let p = problem();
        let sol = p.solve_at(&DVector::from_row_slice(&[180.0])).unwrap();
        assert_relative_eq!(sol.dispatch[0], 120.0, epsilon = 1e-7);
        assert_relative_eq!(sol.dispatch[1], 60.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lmp[0], 10.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lmp[1], 20.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lmp[2], 15.0, epsilon = 1e-7);
        assert_eq!(sol.congestion, vec![1, 0, 0]);
        assert_relative_eq!(sol.flows[0], 100.0, epsilon = 1e-7);
        assert_relative_eq!(sol.flows[1], 20.0, epsilon = 1e-7);
        assert_relative_eq!(sol.flows[2], -80.0, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_load_is_reported() {
        let p = problem();
        let sol = p.solve_at(&DVector::from_row_slice(&[210.0]));
        assert!(matches!(sol, Err(Error::Infeasible(_))));
    }

    #[test]
    fn degenerate_boundary_uses_smallest_basis() {
        let p = problem();
        // At exactly the cheap generator's capacity, four rows are tight
        // (balance pair, gen 1 upper, gen 2 lower); the canonical basis is
        // the lexicographically smallest dual-feasible pair.
        let sol = p.solve_at(&DVector::from_row_slice(&[130.0])).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.active_set, vec![0, 1, 8, 11]);
        assert_eq!(sol.working_set, vec![1, 8]);
        assert_relative_eq!(sol.lambda, 15.0, epsilon = 1e-9);
    }

    #[test]
    fn balanced_quadratic_pair_splits_load_equally() {
        use crate::network::{Cost, Generator, GridCase, Line, StochasticKind, StochasticUnit};
        let case = GridCase {
            name: "two-bus-quadratic".into(),
            buses: vec![1, 2],
            lines: vec![Line { from: 1, to: 2, reactance: 1.0, lower: -100.0, upper: 100.0, in_service: true }],
            generators: vec![
                Generator { bus: 1, cost: Cost { linear: 0.0, quadratic: 0.5 }, lower: 0.0, upper: 400.0 },
                Generator { bus: 2, cost: Cost { linear: 0.0, quadratic: 0.5 }, lower: 0.0, upper: 400.0 },
            ],
            loads: vec![],
            stochastic_units: vec![StochasticUnit {
                bus: 2,
                kind: StochasticKind::Load,
                capacity: 300.0,
                lower: None,
                upper: None,
            }],
            schedule: vec![],
            contingencies: None,
        };
        let p = build_mpp(&case.snapshot_at(0).unwrap()).unwrap();

        let sol = p.solve_at(&DVector::from_row_slice(&[60.0])).unwrap();
        assert_relative_eq!(sol.dispatch[0], 30.0, epsilon = 1e-8);
        assert_relative_eq!(sol.dispatch[1], 30.0, epsilon = 1e-8);
        assert_relative_eq!(sol.lmp[0], 30.0, epsilon = 1e-8);
        assert_relative_eq!(sol.lmp[1], 30.0, epsilon = 1e-8);

        // A tight line decouples the buses: marginal costs diverge.
        let mut congested = case.clone();
        congested.lines[0].lower = -20.0;
        congested.lines[0].upper = 20.0;
        let pc = build_mpp(&congested.snapshot_at(0).unwrap()).unwrap();
        let sol = pc.solve_at(&DVector::from_row_slice(&[60.0])).unwrap();
        assert_relative_eq!(sol.dispatch[0], 20.0, epsilon = 1e-8);
        assert_relative_eq!(sol.dispatch[1], 40.0, epsilon = 1e-8);
        assert_relative_eq!(sol.lmp[0], 20.0, epsilon = 1e-8);
        assert_relative_eq!(sol.lmp[1], 40.0, epsilon = 1e-8);
        assert_eq!(sol.congestion, vec![1]);
    }
}
