//! Shared test oracles, deliberately written from first principles.
//!
//! The dispatch oracle enumerates basic solutions of the dense LP (or KKT
//! systems of the QP) instead of pivoting, so its answers do not depend on
//! the library's solver path. Prices come from finite differences of the
//! optimal-cost function. Slow but trustworthy; meant for spot checks on
//! small cases.

#![allow(dead_code)]

use lmp_forecast::network::{
    Cost, Generator, GridCase, Line, Load, StochasticKind, StochasticUnit, SystemSnapshot,
};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::Rng;

const FEAS_TOL: f64 = 1e-7;

/// Dense statement of one dispatch problem: minimize `cᵀg (+ ½ gᵀHg)`
/// subject to `1ᵀg = total withdrawal` and `rows·g ≤ rhs`.
pub struct DenseOpf {
    pub n_gen: usize,
    pub cost: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub total_withdrawal: f64,
}

impl DenseOpf {
    /// Assemble from a snapshot, a parameter vector, and an extra fixed
    /// per-bus withdrawal (used for finite-difference prices).
    pub fn assemble(snap: &SystemSnapshot, theta: &DVector<f64>, extra: &DVector<f64>) -> DenseOpf {
        let n_bus = snap.n_bus;
        let n_gen = snap.gen_bus.len();
        let m = snap.shift.nrows();

        // Net withdrawal per bus excluding dispatch.
        let mut withdrawal = snap.fixed_withdrawal.clone() + extra;
        for (slot, &bus) in snap.slot_bus.iter().enumerate() {
            withdrawal[bus] += snap.slot_sign[slot] * theta[slot];
        }

        // Line-flow rows in terms of g: S·(Mg·g − withdrawal).
        let mut gen_cols = DMatrix::zeros(m, n_gen);
        for (j, &bus) in snap.gen_bus.iter().enumerate() {
            for l in 0..m {
                gen_cols[(l, j)] = snap.shift[(l, bus)];
            }
        }
        let base_flow = -&snap.shift * &withdrawal;

        let n_rows = 2 * m + 2 * n_gen;
        let mut rows = DMatrix::zeros(n_rows, n_gen);
        let mut rhs = DVector::zeros(n_rows);
        for l in 0..m {
            for j in 0..n_gen {
                rows[(l, j)] = gen_cols[(l, j)];
                rows[(m + l, j)] = -gen_cols[(l, j)];
            }
            rhs[l] = snap.line_upper[l] - base_flow[l];
            rhs[m + l] = base_flow[l] - snap.line_lower[l];
        }
        for j in 0..n_gen {
            rows[(2 * m + j, j)] = 1.0;
            rhs[2 * m + j] = snap.gen_upper[j];
            rows[(2 * m + n_gen + j, j)] = -1.0;
            rhs[2 * m + n_gen + j] = -snap.gen_lower[j];
        }
        let _ = n_bus;
        DenseOpf {
            n_gen,
            cost: snap.cost_linear.clone(),
            hessian: snap
                .cost_quadratic
                .as_ref()
                .map(|q| DMatrix::from_diagonal(&(q * 2.0))),
            rows,
            rhs,
            total_withdrawal: withdrawal.sum(),
        }
    }

    fn objective(&self, g: &DVector<f64>) -> f64 {
        let mut v = self.cost.dot(g);
        if let Some(h) = &self.hessian {
            v += 0.5 * (g.transpose() * h * g)[(0, 0)];
        }
        v
    }

    fn feasible(&self, g: &DVector<f64>) -> bool {
        let scale = 1.0 + self.rhs.amax();
        if (g.sum() - self.total_withdrawal).abs() > FEAS_TOL * scale {
            return false;
        }
        let slack = &self.rhs - &self.rows * g;
        slack.iter().all(|&s| s >= -FEAS_TOL * scale)
    }

    /// Global minimum by exhaustive basic-solution enumeration (linear
    /// costs) or exhaustive KKT enumeration (quadratic costs). `None`
    /// when no feasible point exists.
    pub fn solve(&self) -> Option<(DVector<f64>, f64)> {
        match &self.hessian {
            None => self.solve_lp(),
            Some(h) => self.solve_qp(h),
        }
    }

    fn solve_lp(&self) -> Option<(DVector<f64>, f64)> {
        let n = self.n_gen;
        let mut best: Option<(DVector<f64>, f64)> = None;
        // Every vertex activates the balance plus n−1 inequality rows.
        for combo in combinations(self.rows.nrows(), n - 1) {
            let mut a = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for j in 0..n {
                a[(0, j)] = 1.0;
            }
            b[0] = self.total_withdrawal;
            for (i, &row) in combo.iter().enumerate() {
                for j in 0..n {
                    a[(i + 1, j)] = self.rows[(row, j)];
                }
                b[i + 1] = self.rhs[row];
            }
            let Some(g) = a.lu().solve(&b) else { continue };
            if !g.iter().all(|v| v.is_finite()) || !self.feasible(&g) {
                continue;
            }
            let obj = self.objective(&g);
            if best.as_ref().is_none_or(|(_, cur)| obj < *cur) {
                best = Some((g, obj));
            }
        }
        best
    }

    fn solve_qp(&self, h: &DMatrix<f64>) -> Option<(DVector<f64>, f64)> {
        let n = self.n_gen;
        let n_rows = self.rows.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for size in 0..=n.min(n_rows) {
            for combo in combinations(n_rows, size) {
                // Stationarity with the balance row and the active set:
                // [H 1 Aᵀ; 1ᵀ 0 0; A 0 0]·[g; λ; μ] = [−c; d; rhs_active].
                let dim = n + 1 + size;
                let mut kkt = DMatrix::zeros(dim, dim);
                let mut rhs = DVector::zeros(dim);
                for i in 0..n {
                    for j in 0..n {
                        kkt[(i, j)] = h[(i, j)];
                    }
                    kkt[(i, n)] = 1.0;
                    kkt[(n, i)] = 1.0;
                    rhs[i] = -self.cost[i];
                }
                rhs[n] = self.total_withdrawal;
                for (k, &row) in combo.iter().enumerate() {
                    for j in 0..n {
                        kkt[(j, n + 1 + k)] = self.rows[(row, j)];
                        kkt[(n + 1 + k, j)] = self.rows[(row, j)];
                    }
                    rhs[n + 1 + k] = self.rhs[row];
                }
                let Some(sol) = kkt.lu().solve(&rhs) else { continue };
                if !sol.iter().all(|v| v.is_finite()) {
                    continue;
                }
                let g = DVector::from_fn(n, |i, _| sol[i]);
                // With stationarity Hg + c + 1λ + Aᵀμ = 0 the
                // multipliers of ≤-rows are nonnegative at a minimum.
                let duals_ok = (0..size).all(|k| sol[n + 1 + k] >= -FEAS_TOL);
                if !duals_ok || !self.feasible(&g) {
                    continue;
                }
                let obj = self.objective(&g);
                if best.as_ref().is_none_or(|(_, cur)| obj < *cur - 1e-12) {
                    best = Some((g, obj));
                }
            }
        }
        best
    }
}

/// All `k`-element index subsets of `0..n`, lexicographic.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Optimal dispatch cost at `theta` with an extra per-bus withdrawal,
/// by the enumeration oracle. `None` = infeasible.
pub fn oracle_cost(snap: &SystemSnapshot, theta: &DVector<f64>, extra: &DVector<f64>) -> Option<f64> {
    DenseOpf::assemble(snap, theta, extra).solve().map(|(_, v)| v)
}

/// Nodal prices by central finite differences of the optimal cost with
/// respect to a fixed withdrawal at each bus. Exact away from region
/// boundaries (the cost is piecewise linear/quadratic in demand); `None`
/// when perturbed problems go infeasible.
pub fn oracle_lmp(snap: &SystemSnapshot, theta: &DVector<f64>, eps: f64) -> Option<DVector<f64>> {
    let n = snap.n_bus;
    let mut lmp = DVector::zeros(n);
    for bus in 0..n {
        let mut up = DVector::zeros(n);
        up[bus] = eps;
        let mut down = DVector::zeros(n);
        down[bus] = -eps;
        let v_up = oracle_cost(snap, theta, &up)?;
        let v_down = oracle_cost(snap, theta, &down)?;
        lmp[bus] = (v_up - v_down) / (2.0 * eps);
    }
    Some(lmp)
}

/// A random connected case with 2–5 buses, distinct generator costs, and
/// one or two stochastic units. Sized so a healthy share of the
/// parameter box is feasible.
pub fn random_small_case(rng: &mut StdRng) -> GridCase {
    let n_bus = rng.random_range(2..=5);
    let mut lines = Vec::new();
    // Random spanning tree, then a few extra lines for meshes.
    for bus in 2..=n_bus {
        let parent = rng.random_range(1..bus);
        lines.push(Line {
            from: parent,
            to: bus,
            reactance: rng.random_range(0.5..2.0),
            lower: 0.0,
            upper: 0.0,
            in_service: true,
        });
    }
    for _ in 0..rng.random_range(0..=n_bus / 2) {
        let a = rng.random_range(1..=n_bus);
        let b = rng.random_range(1..=n_bus);
        if a != b && !lines.iter().any(|l| (l.from, l.to) == (a.min(b), a.max(b))) {
            lines.push(Line {
                from: a.min(b),
                to: a.max(b),
                reactance: rng.random_range(0.5..2.0),
                lower: 0.0,
                upper: 0.0,
                in_service: true,
            });
        }
    }
    for line in &mut lines {
        let limit = rng.random_range(60.0..180.0);
        line.lower = -limit;
        line.upper = limit;
    }

    let n_gen = rng.random_range(1..=n_bus);
    let mut gen_buses: Vec<usize> = (1..=n_bus).collect();
    for i in (1..gen_buses.len()).rev() {
        gen_buses.swap(i, rng.random_range(0..=i));
    }
    gen_buses.truncate(n_gen);
    gen_buses.sort_unstable();
    let generators: Vec<Generator> = gen_buses
        .iter()
        .enumerate()
        .map(|(i, &bus)| Generator {
            bus,
            // Distinct costs keep optima unique away from boundaries.
            cost: Cost { linear: 10.0 + 7.0 * i as f64 + rng.random_range(0.0..3.0), quadratic: 0.0 },
            lower: 0.0,
            upper: rng.random_range(120.0..260.0),
        })
        .collect();

    let n_sto = rng.random_range(1..=2.min(n_bus));
    let mut sto_buses: Vec<usize> = (1..=n_bus).collect();
    for i in (1..sto_buses.len()).rev() {
        sto_buses.swap(i, rng.random_range(0..=i));
    }
    sto_buses.truncate(n_sto);
    sto_buses.sort_unstable();
    let stochastic_units: Vec<StochasticUnit> = sto_buses
        .iter()
        .map(|&bus| StochasticUnit {
            bus,
            kind: if rng.random_bool(0.7) { StochasticKind::Load } else { StochasticKind::Generation },
            capacity: rng.random_range(60.0..140.0),
            lower: None,
            upper: None,
        })
        .collect();

    let loads = vec![Load { bus: rng.random_range(1..=n_bus), demand: rng.random_range(0.0..40.0) }];

    GridCase {
        name: format!("random-{n_bus}bus"),
        buses: (1..=n_bus).collect(),
        lines,
        generators,
        loads,
        stochastic_units,
        schedule: vec![],
        contingencies: None,
    }
}

/// Path of a file in the repository's `data/` directory.
pub fn data_file(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}
