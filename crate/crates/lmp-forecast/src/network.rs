//! Grid case files, schedules, contingencies, and network sensitivities.
//!
//! A [`GridCase`] is the on-disk description of a transmission system:
//! buses, lines, generators, fixed loads, and the stochastic injection
//! units whose outputs form the parameter vector of the forecasting
//! problem. A case can carry a time-indexed [`ScheduleEntry`] list of
//! cumulative overrides (capacity changes, line outages) and an optional
//! [`ContingencyModel`] assigning probabilities to discrete deviations.
//!
//! [`GridCase::snapshot_at`] freezes the case at one time step into a
//! [`SystemSnapshot`]: dense vectors/matrices in bus order, including the
//! injection shift factor matrix used by the dispatch problem.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost coefficients of one generator: `linear·g + quadratic·g²`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    pub linear: f64,
    #[serde(default)]
    pub quadratic: f64,
}

/// Which objective class a case belongs to. Mixing classes is rejected
/// because the two lead to structurally different parametric solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineSpec {
    from: usize,
    to: usize,
    reactance: f64,
    #[serde(default)]
    limit: Option<f64>,
    #[serde(default)]
    lower: Option<f64>,
    #[serde(default)]
    upper: Option<f64>,
    #[serde(default = "default_true")]
    in_service: bool,
}

fn default_true() -> bool {
    true
}

/// A transmission line. In case files the flow bounds may be given either
/// as a symmetric `limit` or as explicit `lower`/`upper`; they are
/// normalized to explicit bounds on load.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(try_from = "LineSpec")]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub lower: f64,
    pub upper: f64,
    pub in_service: bool,
}

impl TryFrom<LineSpec> for Line {
    type Error = String;

    fn try_from(s: LineSpec) -> std::result::Result<Self, String> {
        let (lower, upper) = match (s.limit, s.lower, s.upper) {
            (Some(l), None, None) => (-l, l),
            (None, Some(lo), Some(hi)) => (lo, hi),
            (None, None, None) => {
                return Err(format!("line {}-{}: missing flow bounds", s.from, s.to))
            }
            _ => {
                return Err(format!(
                    "line {}-{}: give either `limit` or `lower`+`upper`, not both",
                    s.from, s.to
                ))
            }
        };
        Ok(Line {
            from: s.from,
            to: s.to,
            reactance: s.reactance,
            lower,
            upper,
            in_service: s.in_service,
        })
    }
}

/// A dispatchable generator, keyed by its bus (one per bus).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub cost: Cost,
    #[serde(default)]
    pub lower: f64,
    pub upper: f64,
}

/// A fixed (deterministic) withdrawal at a bus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub demand: f64,
}

/// Whether a stochastic unit withdraws from or injects into the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticKind {
    Load,
    Generation,
}

/// One uncertain injection: a stochastic load or a non-dispatchable
/// generator (wind, solar). Each unit contributes one coordinate to the
/// parameter vector, bounded by `[lower, upper]` in device units
/// (defaults `[0, capacity]`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StochasticUnit {
    pub bus: usize,
    pub kind: StochasticKind,
    pub capacity: f64,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

impl StochasticUnit {
    /// Parameter-box bounds of this unit in device units.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower.unwrap_or(0.0), self.upper.unwrap_or(self.capacity))
    }

    /// Sign with which the unit enters net withdrawal: +1 for load,
    /// −1 for generation.
    pub fn sign(&self) -> f64 {
        match self.kind {
            StochasticKind::Load => 1.0,
            StochasticKind::Generation => -1.0,
        }
    }
}

/// One structural change to a case, applied by schedules and contingencies.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CaseOverride {
    /// Change the capacity bounds of the generator at `bus`.
    GenCapacity {
        bus: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    /// Replace the flow bounds of line `from`-`to` by a symmetric limit.
    LineLimit { from: usize, to: usize, limit: f64 },
    /// Take line `from`-`to` out of service.
    LineOutage { from: usize, to: usize },
}

/// Overrides that take effect at `time` and stay in effect afterwards.
/// Schedules are cumulative: the snapshot at `t` applies every entry with
/// `time ≤ t`, in order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub time: u32,
    pub overrides: Vec<CaseOverride>,
}

/// Discrete system deviations with prior probabilities. Index 0 is the
/// unmodified case with probability `1 − Σ probabilities`; deviation `k ≥ 1`
/// applies `deltas[k−1]` with probability `probabilities[k−1]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContingencyModel {
    pub probabilities: Vec<f64>,
    pub deltas: Vec<Vec<CaseOverride>>,
}

impl ContingencyModel {
    /// Number of configurations including the unmodified case.
    pub fn n_outcomes(&self) -> usize {
        self.deltas.len() + 1
    }

    /// Probabilities over all configurations; index 0 is the unmodified
    /// case, carrying whatever mass the deviations leave over.
    pub fn outcome_probabilities(&self) -> Vec<f64> {
        let rest: f64 = self.probabilities.iter().sum();
        let mut out = Vec::with_capacity(self.probabilities.len() + 1);
        out.push((1.0 - rest).max(0.0));
        out.extend_from_slice(&self.probabilities);
        out
    }
}

/// A complete grid description as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridCase {
    pub name: String,
    /// Bus ids; must be exactly `1..=n` (any order in the file).
    pub buses: Vec<usize>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub stochastic_units: Vec<StochasticUnit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contingencies: Option<ContingencyModel>,
}

impl GridCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Validate structural integrity. Called by [`load_case`]; call it
    /// yourself on programmatically built cases.
    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::CaseFormat("case has no buses".into()));
        }
        let mut sorted = self.buses.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n || sorted[0] != 1 || sorted[n - 1] != n {
            return Err(Error::CaseFormat(format!(
                "bus ids must be exactly 1..={n} without gaps or repeats"
            )));
        }

        let valid_bus = |b: usize| b >= 1 && b <= n;
        let mut pairs = HashSet::new();
        for l in &self.lines {
            if !valid_bus(l.from) || !valid_bus(l.to) || l.from == l.to {
                return Err(Error::CaseFormat(format!(
                    "line {}-{}: endpoints must be two distinct bus ids",
                    l.from, l.to
                )));
            }
            if !l.reactance.is_finite() || l.reactance <= 0.0 {
                return Err(Error::CaseFormat(format!(
                    "line {}-{}: reactance must be positive and finite",
                    l.from, l.to
                )));
            }
            if !(l.lower <= 0.0 && 0.0 <= l.upper) || !l.lower.is_finite() || !l.upper.is_finite()
            {
                return Err(Error::CaseFormat(format!(
                    "line {}-{}: flow bounds must satisfy lower ≤ 0 ≤ upper",
                    l.from, l.to
                )));
            }
            let key = (l.from.min(l.to), l.from.max(l.to));
            if !pairs.insert(key) {
                return Err(Error::CaseFormat(format!(
                    "duplicate line between buses {} and {}",
                    key.0, key.1
                )));
            }
        }

        if self.generators.is_empty() {
            return Err(Error::CaseFormat("case needs at least one generator".into()));
        }
        let mut gen_buses = HashSet::new();
        let mut any_quadratic = false;
        let mut all_quadratic = true;
        for g in &self.generators {
            if !valid_bus(g.bus) {
                return Err(Error::CaseFormat(format!("generator at unknown bus {}", g.bus)));
            }
            if !gen_buses.insert(g.bus) {
                return Err(Error::CaseFormat(format!(
                    "more than one generator at bus {}",
                    g.bus
                )));
            }
            if !g.lower.is_finite() || !g.upper.is_finite() || g.lower > g.upper {
                return Err(Error::CaseFormat(format!(
                    "generator at bus {}: need lower ≤ upper, both finite",
                    g.bus
                )));
            }
            if !g.cost.linear.is_finite() || !g.cost.quadratic.is_finite() || g.cost.quadratic < 0.0
            {
                return Err(Error::CaseFormat(format!(
                    "generator at bus {}: bad cost coefficients",
                    g.bus
                )));
            }
            any_quadratic |= g.cost.quadratic > 0.0;
            all_quadratic &= g.cost.quadratic > 0.0;
        }
        if any_quadratic && !all_quadratic {
            return Err(Error::CaseFormat(
                "generator costs mix linear and quadratic classes; use one class per case".into(),
            ));
        }

        let mut load_buses = HashSet::new();
        for l in &self.loads {
            if !valid_bus(l.bus) {
                return Err(Error::CaseFormat(format!("load at unknown bus {}", l.bus)));
            }
            if !load_buses.insert(l.bus) {
                return Err(Error::CaseFormat(format!("more than one load at bus {}", l.bus)));
            }
            if !l.demand.is_finite() {
                return Err(Error::CaseFormat(format!("load at bus {}: demand not finite", l.bus)));
            }
        }

        let mut st_buses = HashSet::new();
        for u in &self.stochastic_units {
            if !valid_bus(u.bus) {
                return Err(Error::CaseFormat(format!(
                    "stochastic unit at unknown bus {}",
                    u.bus
                )));
            }
            if !st_buses.insert(u.bus) {
                return Err(Error::CaseFormat(format!(
                    "more than one stochastic unit at bus {}",
                    u.bus
                )));
            }
            let (lo, hi) = u.bounds();
            if !u.capacity.is_finite()
                || u.capacity <= 0.0
                || !lo.is_finite()
                || !hi.is_finite()
                || lo >= hi
                || lo < 0.0
                || hi > u.capacity
            {
                return Err(Error::CaseFormat(format!(
                    "stochastic unit at bus {}: need finite 0 ≤ lower < upper ≤ capacity",
                    u.bus
                )));
            }
        }

        let mut last = None;
        for e in &self.schedule {
            if let Some(prev) = last {
                if e.time <= prev {
                    return Err(Error::CaseFormat(
                        "schedule times must be strictly increasing".into(),
                    ));
                }
            }
            last = Some(e.time);
            self.check_overrides(&e.overrides)?;
        }

        if let Some(cm) = &self.contingencies {
            if cm.probabilities.len() != cm.deltas.len() {
                return Err(Error::CaseFormat(
                    "contingency probabilities and deltas must have equal length".into(),
                ));
            }
            let sum: f64 = cm.probabilities.iter().sum();
            if cm.probabilities.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || sum > 1.0 + 1e-12 {
                return Err(Error::InvalidProbabilities(
                    "contingency probabilities must lie in [0,1] and sum to at most one".into(),
                ));
            }
            for d in &cm.deltas {
                self.check_overrides(d)?;
            }
        }

        self.connected_component_count(&self.lines)?;
        Ok(())
    }

    fn check_overrides(&self, ovs: &[CaseOverride]) -> Result<()> {
        for ov in ovs {
            match ov {
                CaseOverride::GenCapacity { bus, lower, upper } => {
                    if !self.generators.iter().any(|g| g.bus == *bus) {
                        return Err(Error::CaseFormat(format!(
                            "override references missing generator at bus {bus}"
                        )));
                    }
                    if lower.is_none() && upper.is_none() {
                        return Err(Error::CaseFormat(format!(
                            "generator override at bus {bus} changes nothing"
                        )));
                    }
                }
                CaseOverride::LineLimit { from, to, limit } => {
                    self.line_index(*from, *to)?;
                    if !limit.is_finite() || *limit < 0.0 {
                        return Err(Error::CaseFormat(format!(
                            "line {from}-{to}: override limit must be nonnegative and finite"
                        )));
                    }
                }
                CaseOverride::LineOutage { from, to } => {
                    self.line_index(*from, *to)?;
                }
            }
        }
        Ok(())
    }

    fn line_index(&self, from: usize, to: usize) -> Result<usize> {
        self.lines
            .iter()
            .position(|l| {
                (l.from == from && l.to == to) || (l.from == to && l.to == from)
            })
            .ok_or_else(|| Error::CaseFormat(format!("override references missing line {from}-{to}")))
    }

    /// Number of connected components over in-service lines; errors unless 1.
    fn connected_component_count(&self, lines: &[Line]) -> Result<()> {
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for l in lines.iter().filter(|l| l.in_service) {
            let (a, b) = (find(&mut parent, l.from - 1), find(&mut parent, l.to - 1));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        for i in 1..n {
            if find(&mut parent, i) != root {
                return Err(Error::Disconnected(
                    "in-service lines do not connect all buses".into(),
                ));
            }
        }
        Ok(())
    }

    /// Apply overrides in place. Errors on references to missing devices.
    pub fn apply_overrides(&mut self, ovs: &[CaseOverride]) -> Result<()> {
        for ov in ovs {
            match ov {
                CaseOverride::GenCapacity { bus, lower, upper } => {
                    let g = self
                        .generators
                        .iter_mut()
                        .find(|g| g.bus == *bus)
                        .ok_or_else(|| {
                            Error::CaseFormat(format!("override references missing generator at bus {bus}"))
                        })?;
                    if let Some(lo) = lower {
                        g.lower = *lo;
                    }
                    if let Some(hi) = upper {
                        g.upper = *hi;
                    }
                }
                CaseOverride::LineLimit { from, to, limit } => {
                    let idx = self.line_index(*from, *to)?;
                    self.lines[idx].lower = -limit;
                    self.lines[idx].upper = *limit;
                }
                CaseOverride::LineOutage { from, to } => {
                    let idx = self.line_index(*from, *to)?;
                    self.lines[idx].in_service = false;
                }
            }
        }
        Ok(())
    }

    /// The case with contingency `k` applied: `k = 0` is the base case,
    /// `k ≥ 1` applies `deltas[k−1]`. Errors if the result is disconnected.
    pub fn with_contingency(&self, k: usize) -> Result<GridCase> {
        let mut c = self.clone();
        if k > 0 {
            let cm = self
                .contingencies
                .as_ref()
                .ok_or_else(|| Error::CaseFormat("case has no contingency model".into()))?;
            let delta = cm
                .deltas
                .get(k - 1)
                .ok_or_else(|| Error::CaseFormat(format!("contingency index {k} out of range")))?;
            c.apply_overrides(delta)?;
            c.connected_component_count(&c.lines)?;
        }
        Ok(c)
    }

    /// Freeze the case at time `t`: apply every schedule entry with
    /// `time ≤ t` cumulatively, then assemble dense system data.
    pub fn snapshot_at(&self, t: u32) -> Result<SystemSnapshot> {
        self.validate()?;
        let mut c = self.clone();
        let entries: Vec<_> = self.schedule.iter().filter(|e| e.time <= t).cloned().collect();
        for e in &entries {
            c.apply_overrides(&e.overrides)?;
        }
        c.connected_component_count(&c.lines)?;

        let n = c.buses.len();
        let active: Vec<usize> = (0..c.lines.len()).filter(|&i| c.lines[i].in_service).collect();
        let shift = shift_factors(
            n,
            &active
                .iter()
                .map(|&i| (c.lines[i].from, c.lines[i].to, c.lines[i].reactance))
                .collect::<Vec<_>>(),
        )?;
        let line_lower = DVector::from_iterator(active.len(), active.iter().map(|&i| c.lines[i].lower));
        let line_upper = DVector::from_iterator(active.len(), active.iter().map(|&i| c.lines[i].upper));

        let mut gens = c.generators.clone();
        gens.sort_by_key(|g| g.bus);
        let ng = gens.len();
        let gen_bus: Vec<usize> = gens.iter().map(|g| g.bus - 1).collect();
        let gen_lower = DVector::from_iterator(ng, gens.iter().map(|g| g.lower));
        let gen_upper = DVector::from_iterator(ng, gens.iter().map(|g| g.upper));
        let cost_linear = DVector::from_iterator(ng, gens.iter().map(|g| g.cost.linear));
        let cost = if gens.iter().any(|g| g.cost.quadratic > 0.0) {
            CostKind::Quadratic
        } else {
            CostKind::Linear
        };
        let cost_quadratic = match cost {
            CostKind::Linear => None,
            CostKind::Quadratic => {
                Some(DVector::from_iterator(ng, gens.iter().map(|g| g.cost.quadratic)))
            }
        };

        let mut fixed_withdrawal = DVector::zeros(n);
        for l in &c.loads {
            fixed_withdrawal[l.bus - 1] += l.demand;
        }

        let mut units = c.stochastic_units.clone();
        units.sort_by_key(|u| u.bus);
        let p = units.len();
        let slot_bus: Vec<usize> = units.iter().map(|u| u.bus - 1).collect();
        let slot_sign = DVector::from_iterator(p, units.iter().map(|u| u.sign()));
        let box_lower = DVector::from_iterator(p, units.iter().map(|u| u.bounds().0));
        let box_upper = DVector::from_iterator(p, units.iter().map(|u| u.bounds().1));

        Ok(SystemSnapshot {
            time: t,
            n_bus: n,
            n_line_total: c.lines.len(),
            line_pos: active,
            shift,
            line_lower,
            line_upper,
            gen_bus,
            gen_lower,
            gen_upper,
            cost,
            cost_linear,
            cost_quadratic,
            fixed_withdrawal,
            slot_bus,
            slot_sign,
            box_lower,
            box_upper,
        })
    }
}

/// A case frozen at one time step, in dense numeric form.
///
/// Buses are 0-indexed here; line arrays cover in-service lines only, with
/// `line_pos` mapping each row back to the case's line list.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSnapshot {
    pub time: u32,
    pub n_bus: usize,
    pub n_line_total: usize,
    /// Original case index of each in-service line (row of `shift`).
    pub line_pos: Vec<usize>,
    /// Injection shift factors, one row per in-service line, one column per
    /// bus; reference bus is the highest-numbered bus (column of zeros).
    pub shift: DMatrix<f64>,
    pub line_lower: DVector<f64>,
    pub line_upper: DVector<f64>,
    /// 0-indexed bus of each generator, sorted by bus.
    pub gen_bus: Vec<usize>,
    pub gen_lower: DVector<f64>,
    pub gen_upper: DVector<f64>,
    pub cost: CostKind,
    pub cost_linear: DVector<f64>,
    pub cost_quadratic: Option<DVector<f64>>,
    /// Fixed withdrawal per bus from deterministic loads.
    pub fixed_withdrawal: DVector<f64>,
    /// 0-indexed bus of each stochastic unit, sorted by bus.
    pub slot_bus: Vec<usize>,
    /// +1 where the unit withdraws (load), −1 where it injects (generation).
    pub slot_sign: DVector<f64>,
    pub box_lower: DVector<f64>,
    pub box_upper: DVector<f64>,
}

impl SystemSnapshot {
    pub fn n_gen(&self) -> usize {
        self.gen_bus.len()
    }

    pub fn n_line(&self) -> usize {
        self.line_pos.len()
    }

    /// Dimension of the stochastic parameter vector.
    pub fn param_dim(&self) -> usize {
        self.slot_bus.len()
    }

    /// Net withdrawal per bus at parameter value `theta`.
    pub fn withdrawal(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut w = self.fixed_withdrawal.clone();
        for (j, &b) in self.slot_bus.iter().enumerate() {
            w[b] += self.slot_sign[j] * theta[j];
        }
        w
    }
}

/// Injection shift factors for a connected network.
///
/// `lines` holds `(from, to, reactance)` with 1-indexed buses. The result
/// has one row per line and one column per bus; column `n` (the reference)
/// is identically zero. Row `ℓ` dotted with nodal net injections gives the
/// flow on line `ℓ` in the `from → to` direction.
pub fn shift_factors(n_bus: usize, lines: &[(usize, usize, f64)]) -> Result<DMatrix<f64>> {
    let m = lines.len();
    if n_bus == 1 {
        return Ok(DMatrix::zeros(m, 1));
    }
    let r = n_bus - 1; // reduced system size; reference bus dropped
    let mut b_red = DMatrix::zeros(r, r);
    let mut bf_red = DMatrix::zeros(m, r);
    for (row, &(f, t, x)) in lines.iter().enumerate() {
        let s = 1.0 / x;
        let (fi, ti) = (f - 1, t - 1);
        if fi < r {
            b_red[(fi, fi)] += s;
            bf_red[(row, fi)] = s;
        }
        if ti < r {
            b_red[(ti, ti)] += s;
            bf_red[(row, ti)] = -s;
        }
        if fi < r && ti < r {
            b_red[(fi, ti)] -= s;
            b_red[(ti, fi)] -= s;
        }
    }
    let lu = b_red.lu();
    let solved = lu
        .solve(&bf_red.transpose())
        .ok_or_else(|| Error::Disconnected("reduced susceptance matrix is singular".into()))?;
    let mut shift = DMatrix::zeros(m, n_bus);
    shift.view_mut((0, 0), (m, r)).copy_from(&solved.transpose());
    Ok(shift)
}

/// Read and validate a case file.
pub fn load_case<P: AsRef<Path>>(path: P) -> Result<GridCase> {
    let text = std::fs::read_to_string(path)?;
    let case: GridCase = serde_json::from_str(&text)?;
    case.validate()?;
    Ok(case)
}

/// Write a case in canonical form: devices sorted by bus (lines by
/// endpoint pair), two-space indentation, trailing newline. Saving the
/// same case twice yields identical bytes.
pub fn save_case<P: AsRef<Path>>(path: P, case: &GridCase) -> Result<()> {
    let mut c = case.clone();
    c.buses.sort_unstable();
    c.lines.sort_by_key(|l| (l.from.min(l.to), l.from.max(l.to)));
    c.generators.sort_by_key(|g| g.bus);
    c.loads.sort_by_key(|l| l.bus);
    c.stochastic_units.sort_by_key(|u| u.bus);
    let mut text = serde_json::to_string_pretty(&c)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Two generators (cheap at bus 1 capped at 130, expensive at bus 3),
    /// one stochastic load at bus 2, three equal lines limited to 100.
    /// Hand analysis gives three price patterns over load in (0, 200):
    /// (10,10,10) below 130, (15,15,15) up to 170 where line 1-2 saturates,
    /// then (10,20,15); loads past 200 are infeasible.
    pub(crate) fn three_bus_case() -> GridCase {
        GridCase {
            name: "three-bus".into(),
            buses: vec![1, 2, 3],
            lines: vec![
                Line { from: 1, to: 2, reactance: 1.0, lower: -100.0, upper: 100.0, in_service: true },
                Line { from: 1, to: 3, reactance: 1.0, lower: -100.0, upper: 100.0, in_service: true },
                Line { from: 2, to: 3, reactance: 1.0, lower: -100.0, upper: 100.0, in_service: true },
            ],
            generators: vec![
                Generator { bus: 1, cost: Cost { linear: 10.0, quadratic: 0.0 }, lower: 0.0, upper: 130.0 },
                Generator { bus: 3, cost: Cost { linear: 15.0, quadratic: 0.0 }, lower: 0.0, upper: 200.0 },
            ],
            loads: vec![],
            stochastic_units: vec![StochasticUnit {
                bus: 2,
                kind: StochasticKind::Load,
                capacity: 200.0,
                lower: None,
                upper: None,
            }],
            schedule: vec![],
            contingencies: None,
        }
    }
}
