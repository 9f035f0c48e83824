//! Critical regions: construction, enumeration, and the region store.
//!
//! Over the parameter box, the dispatch program's optimal working set is
//! piecewise constant: each working set `W` is optimal on a polyhedral
//! *critical region*. Within a region, prices are constant (linear costs)
//! or affine in the parameter (quadratic costs), so a solved region can
//! answer price queries for every parameter it contains without touching
//! the optimizer again.
//!
//! [`build_region`] turns one working set into its region: the affine
//! primal map, the price map, and the polytope where the working set stays
//! optimal (primal feasibility rows, dual feasibility rows for quadratic
//! costs, intersected with the parameter box and reduced to facets).
//!
//! [`enumerate_regions`] walks the whole box breadth-first: starting from
//! a feasible seed, it steps a small distance outward through each facet
//! of each known region and solves there, discovering neighbors until the
//! box is covered. [`RegionStore`] holds the result and answers
//! [`RegionStore::locate`] queries (lowest region id wins on shared
//! boundaries, after a bounding-box prefilter).

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::CostKind;
use crate::opf::MppProblem;
use crate::polytope::Polytope;

/// Price as a function of the parameter, valid on one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceMap {
    /// Nodal prices do not move inside the region (linear costs).
    Constant { value: DVector<f64> },
    /// Nodal prices are `u·θ + v` (quadratic costs).
    Affine { u: DMatrix<f64>, v: DVector<f64> },
}

impl PriceMap {
    pub fn at(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            PriceMap::Constant { value } => value.clone(),
            PriceMap::Affine { u, v } => u * theta + v,
        }
    }
}

/// One critical region of the parametric program.
#[derive(Debug, Serialize, Deserialize)]
pub struct CriticalRegion {
    pub id: usize,
    /// Irredundant description, parameter box included.
    pub polytope: Polytope,
    /// Rows tight throughout the region interior (working set plus the
    /// balance twin).
    pub active_set: Vec<usize>,
    /// The optimal basis (linear) or working set (quadratic), sorted.
    pub working_set: Vec<usize>,
    pub price: PriceMap,
    /// Congestion status per original case line, constant on the region.
    pub congestion: Vec<i8>,
    /// Dispatch as a function of the parameter: `x0 + x_map·θ`.
    pub dispatch_map: DMatrix<f64>,
    pub dispatch_offset: DVector<f64>,
    pub bbox_lower: DVector<f64>,
    pub bbox_upper: DVector<f64>,
    #[serde(skip)]
    anchor: OnceLock<(DVector<f64>, bool)>,
}

impl Clone for CriticalRegion {
    fn clone(&self) -> Self {
        CriticalRegion {
            id: self.id,
            polytope: self.polytope.clone(),
            active_set: self.active_set.clone(),
            working_set: self.working_set.clone(),
            price: self.price.clone(),
            congestion: self.congestion.clone(),
            dispatch_map: self.dispatch_map.clone(),
            dispatch_offset: self.dispatch_offset.clone(),
            bbox_lower: self.bbox_lower.clone(),
            bbox_upper: self.bbox_upper.clone(),
            anchor: OnceLock::new(),
        }
    }
}

impl CriticalRegion {
    /// Interior point used to center importance-sampling proposals.
    ///
    /// For small parameter dimensions this is the mean of the region's
    /// vertices; when vertex enumeration is out of budget the Chebyshev
    /// center stands in and the flag in the result is `true`.
    pub fn anchor(&self) -> (&DVector<f64>, bool) {
        let (v, fallback) = self.anchor.get_or_init(|| {
            if self.polytope.dim() <= 6 {
                if let Some(verts) = self.polytope.vertices(100_000) {
                    if !verts.is_empty() {
                        let mut mean = DVector::zeros(self.polytope.dim());
                        for v in &verts {
                            mean += v;
                        }
                        mean /= verts.len() as f64;
                        return (mean, false);
                    }
                }
            }
            match self.polytope.chebyshev_center() {
                Ok((c, _)) => (c, true),
                Err(_) => ((&self.bbox_lower + &self.bbox_upper) * 0.5, true),
            }
        });
        (v, *fallback)
    }

    /// Optimal dispatch at a parameter inside the region.
    pub fn dispatch_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.dispatch_map * theta + &self.dispatch_offset
    }
}

/// Build the critical region of `working_set`, exact data only.
///
/// Fails with [`Error::EmptyRegion`] when the working set is never
/// optimal on a full-dimensional subset of the box, and with
/// [`Error::Degenerate`] when its rows are dependent.
pub fn build_region(problem: &MppProblem, working_set: &[usize]) -> Result<CriticalRegion> {
    let mut ws: Vec<usize> = working_set.to_vec();
    ws.sort_unstable();
    ws.dedup();
    let maps = match problem.cost {
        CostKind::Linear => linear_region_maps(problem, &ws)?,
        CostKind::Quadratic => quadratic_region_maps(problem, &ws)?,
    };

    let m = problem.n_rows();
    let p = problem.param_dim();

    // Primal feasibility of the affine optimizer on the non-working rows:
    // (A_i·X − E_i)·θ ≤ b_i − A_i·x0.
    let outside: Vec<usize> = (0..m).filter(|i| !ws.contains(i)).collect();
    let mut c = DMatrix::zeros(outside.len(), p);
    let mut e = DVector::zeros(outside.len());
    for (r, &i) in outside.iter().enumerate() {
        let ai = problem.a.row(i).transpose();
        let row = maps.x_map.transpose() * &ai - problem.e.row(i).transpose();
        c.row_mut(r).copy_from(&row.transpose());
        e[r] = problem.b[i] - ai.dot(&maps.x_offset);
    }
    let mut region = Polytope::new(c, e);

    // Dual feasibility rows for parameter-dependent multipliers.
    if let Some((y_map_w, y_offset_w)) = &maps.dual_affine {
        let dual = Polytope::new(-y_map_w.clone(), y_offset_w.clone());
        region = region.intersect(&dual);
    }

    let boxed = region.intersect(&Polytope::from_box(&problem.box_lower, &problem.box_upper));
    let polytope = boxed.reduce()?;
    let (bbox_lower, bbox_upper) = polytope.bounding_box()?;
    let (center, _) = polytope.chebyshev_center()?;

    let y_center = maps.y_at(&center);
    let price = match problem.cost {
        CostKind::Linear => PriceMap::Constant { value: problem.prices(&y_center) },
        CostKind::Quadratic => {
            let t = problem.price_matrix();
            let (y_map, y_offset) = maps.full_dual_affine(m, &ws);
            PriceMap::Affine { u: &t * y_map, v: &t * y_offset }
        }
    };
    let congestion = problem.congestion_from_multipliers(&y_center);

    let mut active_set = ws.clone();
    for &i in &ws {
        if let Some(twin) = problem.twin_row(i) {
            if !active_set.contains(&twin) {
                active_set.push(twin);
            }
        }
    }
    active_set.sort_unstable();

    Ok(CriticalRegion {
        id: usize::MAX,
        polytope,
        active_set,
        working_set: ws,
        price,
        congestion,
        dispatch_map: maps.x_map,
        dispatch_offset: maps.x_offset,
        bbox_lower,
        bbox_upper,
        anchor: OnceLock::new(),
    })
}

/// Affine maps of one region: optimizer `x(θ) = x0 + X·θ` and, for
/// parameter-dependent duals, `y_W(θ) = y0_W + Y_W·θ`.
struct RegionMaps {
    x_map: DMatrix<f64>,
    x_offset: DVector<f64>,
    /// Constant multipliers on working rows (linear costs).
    dual_constant: Option<DVector<f64>>,
    /// Affine multipliers on working rows (quadratic costs).
    dual_affine: Option<(DMatrix<f64>, DVector<f64>)>,
    working: Vec<usize>,
    n_rows: usize,
}

impl RegionMaps {
    /// Full-length multiplier vector at a parameter value.
    fn y_at(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_rows);
        match (&self.dual_constant, &self.dual_affine) {
            (Some(yw), None) => {
                for (r, &i) in self.working.iter().enumerate() {
                    y[i] = yw[r];
                }
            }
            (None, Some((y_map, y_offset))) => {
                let yw = y_map * theta + y_offset;
                for (r, &i) in self.working.iter().enumerate() {
                    y[i] = yw[r];
                }
            }
            _ => unreachable!("exactly one dual representation is set"),
        }
        y
    }

    /// Expand working-row dual maps to all rows (zeros elsewhere).
    fn full_dual_affine(&self, m: usize, ws: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.x_map.ncols();
        let mut y_map = DMatrix::zeros(m, p);
        let mut y_offset = DVector::zeros(m);
        match (&self.dual_constant, &self.dual_affine) {
            (Some(yw), None) => {
                for (r, &i) in ws.iter().enumerate() {
                    y_offset[i] = yw[r];
                }
            }
            (None, Some((map, offset))) => {
                for (r, &i) in ws.iter().enumerate() {
                    y_map.row_mut(i).copy_from(&map.row(r));
                    y_offset[i] = offset[r];
                }
            }
            _ => unreachable!("exactly one dual representation is set"),
        }
        (y_map, y_offset)
    }
}

fn linear_region_maps(problem: &MppProblem, ws: &[usize]) -> Result<RegionMaps> {
    let n = problem.n_gen();
    if ws.len() != n {
        return Err(Error::Degenerate(format!(
            "linear basis must have {n} rows, got {}",
            ws.len()
        )));
    }
    let ab = DMatrix::from_fn(n, n, |r, c| problem.a[(ws[r], c)]);
    let bb = DVector::from_fn(n, |r, _| problem.b[ws[r]]);
    let eb = DMatrix::from_fn(n, problem.param_dim(), |r, c| problem.e[(ws[r], c)]);
    let lu = ab.clone().lu();
    let x_offset = lu
        .solve(&bb)
        .ok_or_else(|| Error::Degenerate("dependent basis rows".into()))?;
    let x_map = lu
        .solve(&eb)
        .ok_or_else(|| Error::Degenerate("dependent basis rows".into()))?;
    let yw = ab
        .transpose()
        .lu()
        .solve(&(-&problem.cost_linear))
        .ok_or_else(|| Error::Degenerate("dependent basis rows".into()))?;
    let dual_tol = 1e-7 * (1.0 + problem.cost_linear.amax());
    if yw.iter().any(|v| *v < -dual_tol) {
        return Err(Error::EmptyRegion(
            "basis is dual infeasible: never optimal".into(),
        ));
    }
    Ok(RegionMaps {
        x_map,
        x_offset,
        dual_constant: Some(yw),
        dual_affine: None,
        working: ws.to_vec(),
        n_rows: problem.n_rows(),
    })
}

fn quadratic_region_maps(problem: &MppProblem, ws: &[usize]) -> Result<RegionMaps> {
    let h = problem.hessian.as_ref().expect("quadratic problem has a Hessian");
    let hchol = Cholesky::new(h.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("cost Hessian".into()))?;
    let n = problem.n_gen();
    let p = problem.param_dim();
    let c = &problem.cost_linear;

    if ws.is_empty() {
        return Ok(RegionMaps {
            x_map: DMatrix::zeros(n, p),
            x_offset: hchol.solve(&(-c)),
            dual_constant: None,
            dual_affine: Some((DMatrix::zeros(0, p), DVector::zeros(0))),
            working: Vec::new(),
            n_rows: problem.n_rows(),
        });
    }

    let k = ws.len();
    let aw = DMatrix::from_fn(k, n, |r, cc| problem.a[(ws[r], cc)]);
    let bw = DVector::from_fn(k, |r, _| problem.b[ws[r]]);
    let ew = DMatrix::from_fn(k, p, |r, cc| problem.e[(ws[r], cc)]);

    let hinv_awt = hchol.solve(&aw.transpose()); // n × k
    let m = &aw * &hinv_awt; // k × k
    let mchol = Cholesky::new(m)
        .ok_or_else(|| Error::Degenerate("dependent working-set rows".into()))?;
    let hinv_c = hchol.solve(c);

    // y_W(θ) = −M⁻¹(b_W + E_W·θ + A_W·H⁻¹·c)
    let y_offset = -mchol.solve(&(&bw + &aw * &hinv_c));
    let y_map = -mchol.solve(&ew);

    // x(θ) = −H⁻¹(c + A_Wᵀ·y_W(θ))
    let x_offset = -(&hinv_c + &hinv_awt * &y_offset);
    let x_map = -(&hinv_awt * &y_map);

    Ok(RegionMaps {
        x_map,
        x_offset,
        dual_constant: None,
        dual_affine: Some((y_map, y_offset)),
        working: ws.to_vec(),
        n_rows: problem.n_rows(),
    })
}

/// A set of critical regions with lookup indexes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionStore {
    /// Free-form provenance tag (case name, time step).
    pub label: String,
    pub param_dim: usize,
    /// Root seed of the randomness that produced the store (enumeration
    /// fallback seeding, online sample streams).
    #[serde(default)]
    pub seed: u64,
    /// True when enumeration stopped at the region cap.
    pub truncated: bool,
    pub regions: Vec<CriticalRegion>,
    /// `(region, facet row, neighbor)` adjacencies found during enumeration.
    pub adjacency: Vec<(usize, usize, usize)>,
    #[serde(skip)]
    by_working_set: HashMap<Vec<usize>, usize>,
}

impl RegionStore {
    pub fn new(label: impl Into<String>, param_dim: usize) -> Self {
        RegionStore {
            label: label.into(),
            param_dim,
            seed: 0,
            truncated: false,
            regions: Vec::new(),
            adjacency: Vec::new(),
            by_working_set: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Insert a region unless its working set is already present; returns
    /// the region id and whether it was newly added.
    pub fn insert(&mut self, mut region: CriticalRegion) -> (usize, bool) {
        if let Some(&id) = self.by_working_set.get(&region.working_set) {
            return (id, false);
        }
        let id = self.regions.len();
        region.id = id;
        self.by_working_set.insert(region.working_set.clone(), id);
        self.regions.push(region);
        (id, true)
    }

    /// Id of a stored region with this working set, if any.
    pub fn find_working_set(&self, ws: &[usize]) -> Option<usize> {
        self.by_working_set.get(ws).copied()
    }

    /// Lowest-id region containing `theta` (bounding-box prefiltered).
    pub fn locate(&self, theta: &DVector<f64>) -> Option<usize> {
        self.regions
            .iter()
            .find(|r| bbox_admits(&r.bbox_lower, &r.bbox_upper, theta) && r.polytope.contains(theta, 1e-9))
            .map(|r| r.id)
    }

    /// Rebuild the in-memory indexes; required after deserialization.
    pub fn rebuild_index(&mut self) {
        self.by_working_set = self
            .regions
            .iter()
            .map(|r| (r.working_set.clone(), r.id))
            .collect();
    }
}

fn bbox_admits(lo: &DVector<f64>, hi: &DVector<f64>, theta: &DVector<f64>) -> bool {
    (0..theta.len()).all(|j| {
        let pad = 1e-9 * (1.0 + theta[j].abs());
        theta[j] >= lo[j] - pad && theta[j] <= hi[j] + pad
    })
}

/// Write a region store as pretty JSON (stable field order, trailing
/// newline).
pub fn save_store<P: AsRef<Path>>(path: P, store: &RegionStore) -> Result<()> {
    let mut text = serde_json::to_string_pretty(store)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a region store and rebuild its indexes.
pub fn load_store<P: AsRef<Path>>(path: P) -> Result<RegionStore> {
    let text = std::fs::read_to_string(path)?;
    let mut store: RegionStore = serde_json::from_str(&text)?;
    store.rebuild_index();
    Ok(store)
}

/// Controls for [`enumerate_regions`].
#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    /// Stop after this many regions and mark the store truncated.
    pub max_regions: usize,
    /// Seed for the dithering used only at degenerate points.
    pub seed: u64,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions { max_regions: 10_000, seed: 7 }
    }
}

/// Enumerate every critical region intersecting the parameter box.
///
/// Breadth-first facet crossing: each facet center of a known region is
/// pushed a small step outward along the facet normal and the program is
/// solved there, yielding either a known neighbor (recorded in the
/// adjacency list) or a new region to queue. Hitting
/// [`EnumerateOptions::max_regions`] stops the walk and marks the store
/// truncated rather than failing.
pub fn enumerate_regions(problem: &MppProblem, opts: &EnumerateOptions) -> Result<RegionStore> {
    let p = problem.param_dim();
    if p == 0 {
        return Err(Error::EmptyBox);
    }
    for j in 0..p {
        if problem.box_lower[j].partial_cmp(&problem.box_upper[j]) != Some(std::cmp::Ordering::Less)
        {
            return Err(Error::EmptyBox);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = RegionStore::new(format!("enumerated@t={}", problem.time), p);
    store.seed = opts.seed;
    let diag = (&problem.box_upper - &problem.box_lower).norm();
    let step = 1e-6 * diag;

    let seed_ws = find_seed_working_set(problem, &mut rng)?;
    let seed_region = build_region(problem, &seed_ws)?;
    let (first_id, _) = store.insert(seed_region);

    let mut queue: VecDeque<usize> = VecDeque::from([first_id]);
    let mut truncated = false;
    'bfs: while let Some(id) = queue.pop_front() {
        for facet in 0..store.regions[id].polytope.n_rows() {
            let (center, _) = match store.regions[id].polytope.facet_center(facet) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let normal = store.regions[id].polytope.c.row(facet).transpose();
            let mut found = None;
            for scale in [1.0, 10.0] {
                let probe = &center + &normal * (step * scale);
                if !problem.in_box(&probe) {
                    break;
                }
                if let Some(nb) = store.locate(&probe) {
                    found = Some(nb);
                    break;
                }
                match probe_working_set(problem, &probe, &mut rng) {
                    Ok(Some(ws)) => match build_region(problem, &ws) {
                        Ok(region) => {
                            let (nb, new) = store.insert(region);
                            if new {
                                if store.len() >= opts.max_regions {
                                    store.adjacency.push((id, facet, nb));
                                    truncated = true;
                                    break 'bfs;
                                }
                                queue.push_back(nb);
                            }
                            found = Some(nb);
                            break;
                        }
                        // Landed on a lower-dimensional slice; widen stride.
                        Err(Error::EmptyRegion(_)) | Err(Error::Degenerate(_)) => continue,
                        Err(other) => return Err(other),
                    },
                    Ok(None) => continue, // unresolved degeneracy
                    Err(Error::Infeasible(_)) => break, // facet borders the infeasible set
                    Err(other) => return Err(other),
                }
            }
            if let Some(nb) = found {
                if nb != id {
                    store.adjacency.push((id, facet, nb));
                }
            }
        }
    }
    store.truncated = truncated;
    Ok(store)
}

/// Working set at a probe point: the plain solve when clean, a dithered
/// retry when degenerate (`None` when even that stays ambiguous).
fn probe_working_set(
    problem: &MppProblem,
    theta: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<usize>>> {
    let sol = problem.solve_at(theta)?;
    if !sol.degenerate {
        return Ok(Some(sol.working_set));
    }
    match problem.solve_perturbed(theta, rng) {
        Ok(ws) => Ok(Some(ws)),
        Err(Error::Infeasible(_)) => Ok(Some(sol.working_set)),
        Err(_) => Ok(None),
    }
}

/// A working set valid on a full-dimensional region, found from the box
/// center or, failing that, uniform samples of the box.
fn find_seed_working_set(problem: &MppProblem, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    use rand::Rng;
    let p = problem.param_dim();
    let center = (&problem.box_lower + &problem.box_upper) * 0.5;
    let mut last_err = None;
    for attempt in 0..200 {
        let theta = if attempt == 0 {
            center.clone()
        } else {
            DVector::from_fn(p, |j, _| {
                problem.box_lower[j]
                    + rng.random::<f64>() * (problem.box_upper[j] - problem.box_lower[j])
            })
        };
        match probe_working_set(problem, &theta, rng) {
            Ok(Some(ws)) => match build_region(problem, &ws) {
                Ok(_) => return Ok(ws),
                Err(e @ Error::EmptyRegion(_)) | Err(e @ Error::Degenerate(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(other) => return Err(other),
            },
            Ok(None) => continue,
            Err(e @ Error::Infeasible(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(other) => return Err(other),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::SolverFailure("no full-dimensional seed region found in the box".into())
    }))
}
