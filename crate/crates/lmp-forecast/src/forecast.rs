//! Probabilistic price/congestion forecasts over a region store.
//!
//! Given a [`RegionStore`] and the conditional Gaussian law of the
//! stochastic parameter a horizon ahead, [`forecast_regions`] estimates
//! the probability that the parameter lands in each critical region —
//! which is exactly the probability of that region's price/congestion
//! outcome. Each region is estimated by importance sampling from a
//! Gaussian proposal recentered at the region's anchor (same covariance
//! as the law), so tail regions get well-conditioned estimates; a plain
//! Monte Carlo pass bounds the mass the store does not cover.
//!
//! [`forecast_with_contingencies`] mixes per-configuration forecasts by
//! the total probability theorem. [`dcrg_simulate`] is the online path:
//! it grows the store on demand while streaming samples, paying one
//! optimizer solve per *distinct region* rather than per sample, and
//! emits prices through the exact same recompute routine as a direct
//! per-sample solve, so its output stream is bit-identical.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpp::{build_region, PriceMap, RegionStore};
use crate::network::ContingencyModel;
use crate::opf::MppProblem;
use crate::par::{map_indexed, ExecMode};
use crate::stochastic::{validate_outcome_probabilities, ConditionalLaw};

/// Cap on log importance weights before exponentiation.
const MAX_LOG_WEIGHT: f64 = 700.0;

/// Splitting constant for per-configuration seeds.
const SEED_SPLIT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Price outcome attached to one forecast entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceLabel {
    /// The region prices every bus at a fixed value (linear costs).
    Constant { lmp: DVector<f64> },
    /// The region maps the Gaussian parameter through `u·θ + v`, so the
    /// price is Gaussian with the recorded moments (quadratic costs).
    Gaussian {
        u: DMatrix<f64>,
        v: DVector<f64>,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
}

/// One (configuration, region) outcome with its estimated probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastEntry {
    /// Contingency configuration index; 0 is the unmodified system.
    pub config: usize,
    pub region: usize,
    pub probability: f64,
    pub std_error: f64,
    pub price: PriceLabel,
    pub congestion: Vec<i8>,
}

/// A forecast distribution over region outcomes at `time + horizon`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub time: usize,
    pub horizon: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// True when a singular law covariance forced plain Monte Carlo.
    pub plain_monte_carlo: bool,
    /// Upper bound on probability mass outside the stored regions.
    pub unexplored_mass: f64,
    pub entries: Vec<ForecastEntry>,
}

impl ForecastDistribution {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    /// Mass assigned to "none of the stored outcomes".
    pub fn none_probability(&self) -> f64 {
        (1.0 - self.total_probability()).max(0.0)
    }

    /// Probabilities per entry with the residual "none" outcome appended,
    /// summing to one; the layout scoring code indexes into.
    pub fn probability_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries.iter().map(|e| e.probability).collect();
        v.push(self.none_probability());
        v
    }

    /// Position of the entry for a (configuration, region) outcome.
    pub fn find_entry(&self, config: usize, region: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.config == config && e.region == region)
    }

    /// Per-bus Gaussian mixture components `(weight, mean, variance)`.
    ///
    /// Only meaningful for quadratic-cost stores; constant-price entries
    /// are the wrong cost class and are rejected.
    pub fn component_marginals(&self, bus: usize) -> Result<Vec<(f64, f64, f64)>> {
        self.entries
            .iter()
            .map(|e| match &e.price {
                PriceLabel::Gaussian { mean, cov, .. } => {
                    if bus >= mean.len() {
                        return Err(Error::Dimension {
                            what: "bus index",
                            expected: mean.len(),
                            got: bus,
                        });
                    }
                    Ok((e.probability, mean[bus], cov[(bus, bus)]))
                }
                PriceLabel::Constant { .. } => Err(Error::Evaluation(
                    "price mixture requires affine price maps (quadratic costs)".into(),
                )),
            })
            .collect()
    }
}

/// Save a forecast as pretty JSON with a trailing newline.
pub fn save_forecast<P: AsRef<std::path::Path>>(
    path: P,
    forecast: &ForecastDistribution,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(forecast)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn price_label(price: &PriceMap, law: &ConditionalLaw) -> PriceLabel {
    match price {
        PriceMap::Constant { value } => PriceLabel::Constant { lmp: value.clone() },
        PriceMap::Affine { u, v } => PriceLabel::Gaussian {
            u: u.clone(),
            v: v.clone(),
            mean: u * &law.mean + v,
            cov: u * &law.cov * u.transpose(),
        },
    }
}

fn draw_samples(law: &ConditionalLaw, n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..n).map(|_| law.sample(rng)).collect()
}

/// Estimate the probability of every region outcome under `law`.
///
/// Per region, `n_samples` draws come from a proposal sharing the law's
/// covariance but centered at the region anchor; each draw contributes
/// `density-ratio × indicator(located in the region)`. A separate plain
/// pass from the law itself measures the mass falling outside every
/// stored region, reported (together with any clipping loss) as
/// [`ForecastDistribution::unexplored_mass`]. Estimates are clipped to
/// `[0, 1]` and rescaled proportionally only if they sum above one.
///
/// A singular covariance has no density, so the estimator falls back to
/// plain Monte Carlo counting and flags
/// [`ForecastDistribution::plain_monte_carlo`]; callers should surface
/// that as a warning.
pub fn forecast_regions(
    store: &RegionStore,
    law: &ConditionalLaw,
    issued_at: usize,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<ForecastDistribution> {
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot forecast over an empty region store".into()));
    }
    if law.dim() != store.param_dim {
        return Err(Error::Dimension {
            what: "law dimension",
            expected: store.param_dim,
            got: law.dim(),
        });
    }
    if n_samples == 0 {
        return Err(Error::Evaluation("forecast needs at least one sample".into()));
    }

    let plain = law.is_degenerate();
    let (mut probs, std_errors, uncovered) = if plain {
        plain_monte_carlo(store, law, n_samples, seed, mode)
    } else {
        importance_sampled(store, law, n_samples, seed, mode)
    };

    // Independent estimates of disjoint masses can sum slightly above
    // one; rescale proportionally so the distribution stays a
    // distribution, and fold the discrepancy into the unexplored mass.
    let total: f64 = probs.iter().sum();
    if total > 1.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
    let total = total.min(1.0);
    let unexplored_mass = uncovered.max(1.0 - total);

    let entries = store
        .regions
        .iter()
        .enumerate()
        .map(|(i, region)| ForecastEntry {
            config: 0,
            region: region.id,
            probability: probs[i],
            std_error: std_errors[i],
            price: price_label(&region.price, law),
            congestion: region.congestion.clone(),
        })
        .collect();

    Ok(ForecastDistribution {
        time: issued_at,
        horizon: law.horizon,
        n_samples,
        seed,
        plain_monte_carlo: plain,
        unexplored_mass,
        entries,
    })
}

/// Acceptance window for the mean importance weight. The weight function
/// has expectation exactly one under the proposal, so a sample mean far
/// from one means the proposal failed to cover the law and the
/// importance-sampling estimate cannot be trusted.
const WEIGHT_DIAGNOSTIC: std::ops::RangeInclusive<f64> = 0.5..=2.0;

/// Per-region importance sampling plus the plain coverage pass.
/// Returns (probabilities, standard errors, uncovered fraction).
///
/// Anchor-centered proposals are sharp for regions commensurate with the
/// law's spread, but collapse when a region is so wide that its anchor
/// sits many standard deviations from the law (every weight is then
/// astronomically small and the estimate biases toward zero at any
/// finite sample size). The mean of *all* weights diagnoses this — it
/// estimates exactly 1 — and regions failing [`WEIGHT_DIAGNOSTIC`] fall
/// back to the plain counts from the coverage stream.
fn importance_sampled(
    store: &RegionStore,
    law: &ConditionalLaw,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> (Vec<f64>, Vec<f64>, f64) {
    let (counts, missed) = coverage_counts(store, law, n_samples, seed, mode);
    let n = n_samples as f64;
    let n_regions = store.len();
    let mut probs = vec![0.0; n_regions];
    let mut errors = vec![0.0; n_regions];
    for (i, region) in store.regions.iter().enumerate() {
        let (anchor, _) = region.anchor();
        let proposal = law.recentered(anchor.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let thetas = draw_samples(&proposal, n_samples, &mut rng);
        let pairs = map_indexed(mode, n_samples, |j| {
            let theta = &thetas[j];
            let log_ratio = law.log_density(theta).expect("law checked non-degenerate")
                - proposal
                    .log_density(theta)
                    .expect("proposal shares the non-degenerate covariance");
            let weight = log_ratio.min(MAX_LOG_WEIGHT).exp();
            let term = if store.locate(theta) == Some(region.id) { weight } else { 0.0 };
            (term, weight)
        });
        let mean_weight = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        if WEIGHT_DIAGNOSTIC.contains(&mean_weight) {
            let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let var = pairs.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum::<f64>()
                / (n * (n_samples.max(2) - 1) as f64);
            probs[i] = mean.clamp(0.0, 1.0);
            errors[i] = var.sqrt();
        } else {
            let p = counts[i] as f64 / n;
            probs[i] = p;
            errors[i] = (p * (1.0 - p) / n).sqrt();
        }
    }
    (probs, errors, missed as f64 / n)
}

/// Fallback when the law has no density: count located samples.
fn plain_monte_carlo(
    store: &RegionStore,
    law: &ConditionalLaw,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> (Vec<f64>, Vec<f64>, f64) {
    let (counts, missed) = coverage_counts(store, law, n_samples, seed, mode);
    let n = n_samples as f64;
    let probs: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    let errors = probs.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    (probs, errors, missed as f64 / n)
}

/// Locate a stream drawn from the law itself: per-region hit counts plus
/// the number of draws no region contains.
fn coverage_counts(
    store: &RegionStore,
    law: &ConditionalLaw,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> (Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(store.len() as u64);
    let thetas = draw_samples(law, n_samples, &mut rng);
    let located = map_indexed(mode, n_samples, |j| store.locate(&thetas[j]));
    let mut counts = vec![0usize; store.len()];
    let mut missed = 0usize;
    for loc in &located {
        match loc {
            Some(r) => counts[*r] += 1,
            None => missed += 1,
        }
    }
    (counts, missed)
}

/// Deterministic per-configuration seed used by the contingency mixture.
fn config_seed(seed: u64, config: usize) -> u64 {
    seed.wrapping_add(SEED_SPLIT.wrapping_mul(config as u64))
}

/// Forecast under discrete contingencies by the total probability
/// theorem: `Σ_k p_k · f(outcome | configuration k)`.
///
/// `stores[k]` must hold the regions of configuration `k` whenever
/// `p_k > 0` (index 0 = unmodified system). If the configuration is
/// already `observed`, the mixture collapses to that configuration's
/// forecast. Entry probabilities are exactly `p_k` times the standalone
/// per-configuration estimates run at the same split seeds.
#[allow(clippy::too_many_arguments)]
pub fn forecast_with_contingencies(
    stores: &[RegionStore],
    model: &ContingencyModel,
    law: &ConditionalLaw,
    observed: Option<usize>,
    issued_at: usize,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<ForecastDistribution> {
    let probabilities = model.outcome_probabilities();
    validate_outcome_probabilities(&probabilities)?;
    if stores.len() != probabilities.len() {
        return Err(Error::Dimension {
            what: "per-configuration region stores",
            expected: probabilities.len(),
            got: stores.len(),
        });
    }

    if let Some(k) = observed {
        if k >= stores.len() {
            return Err(Error::Dimension {
                what: "observed configuration",
                expected: stores.len(),
                got: k,
            });
        }
        let mut f = forecast_regions(&stores[k], law, issued_at, n_samples, config_seed(seed, k), mode)?;
        for entry in f.entries.iter_mut() {
            entry.config = k;
        }
        f.seed = seed;
        return Ok(f);
    }

    let mut entries = Vec::new();
    let mut unexplored = 0.0;
    let mut any_plain = false;
    for (k, &pk) in probabilities.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        let f = forecast_regions(&stores[k], law, issued_at, n_samples, config_seed(seed, k), mode)?;
        any_plain |= f.plain_monte_carlo;
        unexplored += pk * f.unexplored_mass;
        for mut entry in f.entries {
            entry.config = k;
            entry.probability *= pk;
            entry.std_error *= pk;
            entries.push(entry);
        }
    }
    Ok(ForecastDistribution {
        time: issued_at,
        horizon: law.horizon,
        n_samples,
        seed,
        plain_monte_carlo: any_plain,
        unexplored_mass: unexplored,
        entries,
    })
}

/// Price samples under `law`: draw parameters, locate, and evaluate the
/// region price maps. Returns the located samples' prices and the count
/// of draws that fell outside every region.
pub fn sample_prices(
    store: &RegionStore,
    law: &ConditionalLaw,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(Vec<DVector<f64>>, usize)> {
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot sample prices from an empty store".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas = draw_samples(law, n_samples, &mut rng);
    let prices = map_indexed(mode, n_samples, |j| {
        store
            .locate(&thetas[j])
            .map(|r| store.regions[r].price.at(&thetas[j]))
    });
    let mut out = Vec::with_capacity(n_samples);
    let mut missed = 0usize;
    for p in prices {
        match p {
            Some(v) => out.push(v),
            None => missed += 1,
        }
    }
    Ok((out, missed))
}

/// Run counters for [`dcrg_simulate`].
///
/// `cache_hits` counts samples answered without growing the store;
/// `opf_solves` counts samples whose solve added a region, so it always
/// equals the number of regions the run discovered; `infeasible` counts
/// excluded samples. The three partition the sample count. `degenerate`
/// counts samples that needed a dithered re-solve and overlaps the other
/// buckets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcrgCounters {
    pub samples: usize,
    pub opf_solves: usize,
    pub cache_hits: usize,
    pub infeasible: usize,
    pub degenerate: usize,
}

/// One emitted sample of the online simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcrgSample {
    /// Region the sample fell in; `None` for infeasible parameters and
    /// for boundary parameters whose lower-dimensional region cannot be
    /// stored.
    pub region: Option<usize>,
    pub lmp: Option<DVector<f64>>,
    pub congestion: Option<Vec<i8>>,
}

/// Stream prices for a parameter sequence, growing `store` on demand.
///
/// Each batch is located against the frozen store in parallel; misses
/// are resolved sequentially (re-locate, solve, build, insert-if-absent)
/// so region ids are deterministic under any worker count. Every
/// emission — cache hit or fresh solve — goes through the same
/// working-set recompute as a direct per-sample solve, which makes the
/// output stream bit-identical to solving every sample directly.
pub fn dcrg_simulate(
    problem: &MppProblem,
    thetas: &[DVector<f64>],
    store: &mut RegionStore,
    seed: u64,
    mode: ExecMode,
) -> Result<(Vec<DcrgSample>, DcrgCounters)> {
    const BATCH: usize = 256;
    let mut counters = DcrgCounters { samples: thetas.len(), ..DcrgCounters::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(thetas.len());

    for chunk in thetas.chunks(BATCH) {
        let located = map_indexed(mode, chunk.len(), |i| store.locate(&chunk[i]));
        // Working set per sample, resolved in order; None = infeasible.
        let mut plans: Vec<Option<(Option<usize>, Vec<usize>)>> = Vec::with_capacity(chunk.len());
        for (i, loc) in located.into_iter().enumerate() {
            let theta = &chunk[i];
            // An earlier miss in this chunk may have inserted the region.
            let loc = loc.or_else(|| store.locate(theta));
            if let Some(r) = loc {
                counters.cache_hits += 1;
                plans.push(Some((Some(r), store.regions[r].working_set.clone())));
                continue;
            }
            let sol = match problem.solve_at(theta) {
                Ok(sol) => sol,
                Err(Error::Infeasible(_)) => {
                    counters.infeasible += 1;
                    plans.push(None);
                    continue;
                }
                Err(other) => return Err(other),
            };
            let ws = if sol.degenerate {
                counters.degenerate += 1;
                problem
                    .solve_perturbed(theta, &mut rng)
                    .unwrap_or_else(|_| sol.working_set.clone())
            } else {
                sol.working_set.clone()
            };
            match build_region(problem, &ws) {
                Ok(region) => {
                    let (id, new) = store.insert(region);
                    if new {
                        counters.opf_solves += 1;
                    } else {
                        counters.cache_hits += 1;
                    }
                    plans.push(Some((Some(id), store.regions[id].working_set.clone())));
                }
                // The parameter sits on a lower-dimensional boundary; its
                // working set still prices it, but there is no
                // full-dimensional region to store.
                Err(Error::EmptyRegion(_)) | Err(Error::Degenerate(_)) => {
                    counters.cache_hits += 1;
                    plans.push(Some((None, ws)));
                }
                Err(other) => return Err(other),
            }
        }

        let emitted = map_indexed(mode, chunk.len(), |i| -> Result<DcrgSample> {
            match &plans[i] {
                None => Ok(DcrgSample { region: None, lmp: None, congestion: None }),
                Some((region, ws)) => {
                    let (_, y) = problem.evaluate_working_set(ws, &chunk[i])?;
                    Ok(DcrgSample {
                        region: *region,
                        lmp: Some(problem.prices(&y)),
                        congestion: Some(problem.congestion_from_multipliers(&y)),
                    })
                }
            }
        });
        for sample in emitted {
            out.push(sample?);
        }
    }

    debug_assert_eq!(
        counters.cache_hits + counters.opf_solves + counters.infeasible,
        counters.samples
    );
    Ok((out, counters))
}

/// Forecast by streaming the Monte Carlo draws through the online
/// simulator instead of a pre-enumerated store.
///
/// Draws `n_samples` parameters from `law`, prices them with
/// [`dcrg_simulate`] (growing `store` lazily), and turns the per-region
/// hit counts into a plain Monte Carlo forecast. Mass that never lands
/// in a storable region — infeasible draws and boundary hits — is
/// reported as unexplored.
pub fn forecast_via_dcrg(
    problem: &MppProblem,
    store: &mut RegionStore,
    law: &ConditionalLaw,
    issued_at: usize,
    n_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(ForecastDistribution, DcrgCounters)> {
    if law.dim() != problem.param_dim() {
        return Err(Error::Dimension {
            what: "law dimension",
            expected: problem.param_dim(),
            got: law.dim(),
        });
    }
    if n_samples == 0 {
        return Err(Error::Evaluation("forecast needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas = draw_samples(law, n_samples, &mut rng);
    let (samples, counters) = dcrg_simulate(problem, &thetas, store, seed, mode)?;

    let mut counts = vec![0usize; store.len()];
    for sample in &samples {
        if let Some(r) = sample.region {
            counts[r] += 1;
        }
    }
    let n = n_samples as f64;
    let covered: usize = counts.iter().sum();
    let entries = store
        .regions
        .iter()
        .zip(&counts)
        .map(|(region, &count)| {
            let p = count as f64 / n;
            ForecastEntry {
                config: 0,
                region: region.id,
                probability: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                price: price_label(&region.price, law),
                congestion: region.congestion.clone(),
            }
        })
        .collect();
    Ok((
        ForecastDistribution {
            time: issued_at,
            horizon: law.horizon,
            n_samples,
            seed,
            plain_monte_carlo: true,
            unexplored_mass: (n_samples - covered) as f64 / n,
            entries,
        },
        counters,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpp::{enumerate_regions, EnumerateOptions};
    use crate::network::tests_support::three_bus_case;
    use crate::network::{CaseOverride, GridCase};
    use crate::opf::build_mpp;
    use approx::assert_relative_eq;

    fn three_bus_problem() -> MppProblem {
        build_mpp(&three_bus_case().snapshot_at(0).unwrap()).unwrap()
    }

    fn three_bus_store() -> RegionStore {
        enumerate_regions(&three_bus_problem(), &EnumerateOptions::default()).unwrap()
    }

    fn law(mean: f64, var: f64) -> ConditionalLaw {
        ConditionalLaw::new(
            DVector::from_row_slice(&[mean]),
            DMatrix::identity(1, 1) * var,
            4,
        )
    }

    #[test]
    fn law_inside_one_region_gets_probability_one() {
        let store = three_bus_store();
        let f = forecast_regions(&store, &law(100.0, 25.0), 16, 4000, 1, ExecMode::Sequential).unwrap();
        let r1 = store.locate(&DVector::from_row_slice(&[100.0])).unwrap();
        for entry in &f.entries {
            if entry.region == r1 {
                assert!((entry.probability - 1.0).abs() < 1e-3);
                assert!(matches!(&entry.price, PriceLabel::Constant { lmp } if lmp[0] == 10.0));
            } else {
                assert!(entry.probability < 1e-3);
            }
        }
        assert!(f.unexplored_mass < 1e-3);
        assert!(!f.plain_monte_carlo);
        let v = f.probability_vector();
        assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_centered_law_splits_mass_evenly() {
        let store = three_bus_store();
        let f = forecast_regions(&store, &law(130.0, 4.0), 16, 20_000, 2, ExecMode::Sequential).unwrap();
        let left = store.locate(&DVector::from_row_slice(&[100.0])).unwrap();
        let right = store.locate(&DVector::from_row_slice(&[150.0])).unwrap();
        let pl = f.entries[f.find_entry(0, left).unwrap()].probability;
        let pr = f.entries[f.find_entry(0, right).unwrap()].probability;
        assert!((pl - 0.5).abs() < 0.02, "left mass {pl}");
        assert!((pr - 0.5).abs() < 0.02, "right mass {pr}");
    }

    #[test]
    fn anchored_proposal_equals_plain_counting_when_centered() {
        // Law centered exactly on the region anchor: the density ratio is
        // exactly one for every draw, so the importance-sampling estimate
        // must equal the raw indicator frequency of the proposal stream.
        let store = three_bus_store();
        let g = law(150.0, 4.0);
        let mid = store.locate(&DVector::from_row_slice(&[150.0])).unwrap();
        let n = 10_000;
        let seed = 5;
        let f = forecast_regions(&store, &g, 16, n, seed, ExecMode::Sequential).unwrap();

        let (anchor, fallback) = store.regions[mid].anchor();
        assert!(!fallback);
        assert_eq!(anchor[0], 150.0);
        let proposal = g.recentered(anchor.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(mid as u64);
        let hits = (0..n)
            .filter(|_| store.locate(&proposal.sample(&mut rng)) == Some(mid))
            .count();
        let frequency = hits as f64 / n as f64;
        let estimated = f.entries[f.find_entry(0, mid).unwrap()].probability;
        assert_eq!(estimated, frequency, "unit weights must reproduce plain counting exactly");
    }

    #[test]
    fn importance_sampling_agrees_with_plain_counting() {
        let store = three_bus_store();
        let g = law(140.0, 225.0);
        let n = 20_000;
        let f = forecast_regions(&store, &g, 16, n, 3, ExecMode::Sequential).unwrap();
        // Independent plain Monte Carlo estimate.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = vec![0usize; store.len()];
        for _ in 0..n {
            if let Some(r) = store.locate(&g.sample(&mut rng)) {
                counts[r] += 1;
            }
        }
        for (i, entry) in f.entries.iter().enumerate() {
            let plain = counts[i] as f64 / n as f64;
            let se_plain = (plain * (1.0 - plain) / n as f64).sqrt();
            let tol = 3.0 * (entry.std_error + se_plain);
            assert!(
                (entry.probability - plain).abs() <= tol,
                "region {i}: IS {} vs plain {plain} (tol {tol})",
                entry.probability
            );
        }
    }

    #[test]
    fn mass_outside_the_store_is_reported() {
        let store = three_bus_store();
        // N(195, 100): a visible share of the law sits past the feasible
        // box at 200 where no region exists.
        let f = forecast_regions(&store, &law(195.0, 100.0), 16, 20_000, 4, ExecMode::Sequential).unwrap();
        // The mass past 200 is Φ(-0.5) ≈ 0.3085.
        assert!(f.unexplored_mass > 0.25 && f.unexplored_mass < 0.40);
        assert!(f.total_probability() <= 1.0 + 1e-9);
        assert_relative_eq!(
            f.total_probability() + f.unexplored_mass,
            1.0,
            epsilon = 0.02
        );
    }

    #[test]
    fn singular_covariance_falls_back_to_plain_counting() {
        let store = three_bus_store();
        let f = forecast_regions(&store, &law(100.0, 0.0), 16, 500, 5, ExecMode::Sequential).unwrap();
        assert!(f.plain_monte_carlo);
        let r1 = store.locate(&DVector::from_row_slice(&[100.0])).unwrap();
        assert_eq!(f.entries[f.find_entry(0, r1).unwrap()].probability, 1.0);
    }

    #[test]
    fn parallel_and_sequential_forecasts_match_exactly() {
        let store = three_bus_store();
        let g = law(140.0, 225.0);
        let a = forecast_regions(&store, &g, 16, 5000, 7, ExecMode::Sequential).unwrap();
        let b = forecast_regions(&store, &g, 16, 5000, 7, ExecMode::best()).unwrap();
        for (ea, eb) in a.entries.iter().zip(b.entries.iter()) {
            assert_eq!(ea.probability, eb.probability);
            assert_eq!(ea.std_error, eb.std_error);
        }
        assert_eq!(a.unexplored_mass, b.unexplored_mass);
    }

    fn derated_case() -> GridCase {
        let mut case = three_bus_case();
        case.contingencies = Some(ContingencyModel {
            probabilities: vec![0.1],
            deltas: vec![vec![CaseOverride::GenCapacity { bus: 1, lower: None, upper: Some(100.0) }]],
        });
        case
    }

    fn contingency_stores(case: &GridCase) -> Vec<RegionStore> {
        (0..case.contingencies.as_ref().unwrap().n_outcomes())
            .map(|k| {
                let snap = case.with_contingency(k).unwrap().snapshot_at(0).unwrap();
                enumerate_regions(&build_mpp(&snap).unwrap(), &EnumerateOptions::default()).unwrap()
            })
            .collect()
    }

    #[test]
    fn contingency_mixture_is_entrywise_in_the_probabilities() {
        let case = derated_case();
        let model = case.contingencies.clone().unwrap();
        let stores = contingency_stores(&case);
        let g = law(120.0, 400.0);
        let n = 4000;
        let mixed = forecast_with_contingencies(
            &stores, &model, &g, None, 16, n, 11, ExecMode::Sequential,
        )
        .unwrap();
        // Standalone forecasts at the same split seeds.
        let parts: Vec<ForecastDistribution> = (0..stores.len())
            .map(|k| {
                forecast_regions(&stores[k], &g, 16, n, config_seed(11, k), ExecMode::Sequential)
                    .unwrap()
            })
            .collect();
        let p = model.outcome_probabilities();
        assert!(!mixed.entries.is_empty());
        for entry in &mixed.entries {
            let standalone =
                &parts[entry.config].entries[parts[entry.config].find_entry(0, entry.region).unwrap()];
            assert_relative_eq!(
                entry.probability,
                p[entry.config] * standalone.probability,
                epsilon = 1e-12
            );
        }
        // Perturbing a contingency probability moves each entry by
        // exactly the perturbation times the standalone estimate.
        let mut shifted_model = model.clone();
        shifted_model.probabilities = vec![0.15];
        let shifted = forecast_with_contingencies(
            &stores, &shifted_model, &g, None, 16, n, 11, ExecMode::Sequential,
        )
        .unwrap();
        for (a, b) in mixed.entries.iter().zip(shifted.entries.iter()) {
            let standalone =
                &parts[a.config].entries[parts[a.config].find_entry(0, a.region).unwrap()];
            let delta = if a.config == 1 { 0.05 } else { -0.05 };
            assert_relative_eq!(
                b.probability - a.probability,
                delta * standalone.probability,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn observed_contingency_collapses_the_mixture() {
        let case = derated_case();
        let model = case.contingencies.clone().unwrap();
        let stores = contingency_stores(&case);
        let g = law(120.0, 400.0);
        let observed = forecast_with_contingencies(
            &stores, &model, &g, Some(1), 16, 2000, 13, ExecMode::Sequential,
        )
        .unwrap();
        let standalone =
            forecast_regions(&stores[1], &g, 16, 2000, config_seed(13, 1), ExecMode::Sequential)
                .unwrap();
        assert_eq!(observed.entries.len(), standalone.entries.len());
        for (a, b) in observed.entries.iter().zip(standalone.entries.iter()) {
            assert_eq!(a.config, 1);
            assert_eq!(a.probability, b.probability);
        }
    }

    fn quadratic_case() -> GridCase {
        use crate::network::{Cost, Generator, Line, StochasticKind, StochasticUnit};
        GridCase {
            name: "two-bus-quadratic".into(),
            buses: vec![1, 2],
            lines: vec![Line { from: 1, to: 2, reactance: 1.0, lower: -20.0, upper: 20.0, in_service: true }],
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
        }
    }

    #[test]
    fn quadratic_entries_carry_the_affine_image_moments() {
        let problem = build_mpp(&quadratic_case().snapshot_at(0).unwrap()).unwrap();
        let store = enumerate_regions(&problem, &EnumerateOptions::default()).unwrap();
        let g = law(20.0, 16.0);
        let f = forecast_regions(&store, &g, 0, 4000, 17, ExecMode::Sequential).unwrap();
        let slack = store.locate(&DVector::from_row_slice(&[20.0])).unwrap();
        let entry = &f.entries[f.find_entry(0, slack).unwrap()];
        match &entry.price {
            PriceLabel::Gaussian { mean, cov, .. } => {
                // π = (θ/2, θ/2): mean (10, 10), covariance 16/4 = 4.
                assert_relative_eq!(mean[0], 10.0, epsilon = 1e-9);
                assert_relative_eq!(mean[1], 10.0, epsilon = 1e-9);
                for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    assert_relative_eq!(cov[(i, j)], 4.0, epsilon = 1e-9);
                }
            }
            PriceLabel::Constant { .. } => panic!("quadratic store must yield Gaussian labels"),
        }
        let comps = f.component_marginals(0).unwrap();
        assert_eq!(comps.len(), store.len());
        assert!(comps[slack].0 > 0.99);
    }

    #[test]
    fn sampled_prices_follow_the_gaussian_mixture() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let problem = build_mpp(&quadratic_case().snapshot_at(0).unwrap()).unwrap();
        let store = enumerate_regions(&problem, &EnumerateOptions::default()).unwrap();
        // Law well inside the slack region: the mixture is effectively a
        // single Gaussian, so the empirical CDF must match it closely.
        let g = law(20.0, 16.0);
        let n = 100_000;
        let f = forecast_regions(&store, &g, 0, 20_000, 19, ExecMode::best()).unwrap();
        let comps = f.component_marginals(0).unwrap();
        let total: f64 = comps.iter().map(|c| c.0).sum();
        let (mut prices, missed) = sample_prices(&store, &g, n, 23, ExecMode::best()).unwrap();
        assert!(missed < n / 1000);
        let mut xs: Vec<f64> = prices.drain(..).map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mixture_cdf = |x: f64| -> f64 {
            comps
                .iter()
                .map(|&(w, mean, var)| {
                    if var > 1e-12 {
                        w * Normal::new(mean, var.sqrt()).unwrap().cdf(x)
                    } else {
                        w * f64::from(u8::from(x >= mean))
                    }
                })
                .sum::<f64>()
                / total
        };
        let mut ks: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let empirical = (i + 1) as f64 / xs.len() as f64;
            ks = ks.max((empirical - mixture_cdf(*x)).abs());
        }
        assert!(ks < 0.02, "Kolmogorov–Smirnov statistic {ks} too large");
    }

    #[test]
    fn dcrg_stream_is_bit_identical_to_direct_solving() {
        let problem = three_bus_problem();
        let g = law(150.0, 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let thetas: Vec<DVector<f64>> = (0..500).map(|_| g.sample(&mut rng)).collect();

        let mut store = RegionStore::new("dcrg", problem.param_dim());
        let (samples, counters) =
            dcrg_simulate(&problem, &thetas, &mut store, 41, ExecMode::best()).unwrap();

        assert_eq!(counters.samples, 500);
        assert_eq!(counters.cache_hits + counters.opf_solves + counters.infeasible, 500);
        assert_eq!(counters.opf_solves, store.len());
        assert!(counters.infeasible > 0, "law tail past 200 must produce infeasible draws");

        for (theta, sample) in thetas.iter().zip(samples.iter()) {
            match problem.solve_at(theta) {
                Ok(direct) => {
                    let lmp = sample.lmp.as_ref().expect("feasible sample must price");
                    assert_eq!(lmp.as_slice(), direct.lmp.as_slice(), "stream diverged at {theta}");
                    assert_eq!(sample.congestion.as_ref().unwrap(), &direct.congestion);
                }
                Err(Error::Infeasible(_)) => {
                    assert!(sample.lmp.is_none());
                    assert!(sample.region.is_none());
                }
                Err(other) => panic!("unexpected solve error: {other}"),
            }
        }
    }

    #[test]
    fn dcrg_pays_one_solve_per_region() {
        let problem = three_bus_problem();
        let g = law(60.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let thetas: Vec<DVector<f64>> = (0..300).map(|_| g.sample(&mut rng)).collect();
        let mut store = RegionStore::new("dcrg", problem.param_dim());
        let (_, counters) =
            dcrg_simulate(&problem, &thetas, &mut store, 43, ExecMode::Sequential).unwrap();
        assert_eq!(counters.opf_solves, 1);
        assert_eq!(counters.cache_hits, 299);
        assert_eq!(counters.infeasible, 0);
        assert_eq!(store.len(), 1);

        // A second stream through the warmed store pays nothing.
        let more: Vec<DVector<f64>> = (0..100).map(|_| g.sample(&mut rng)).collect();
        let (_, counters) =
            dcrg_simulate(&problem, &more, &mut store, 47, ExecMode::Sequential).unwrap();
        assert_eq!(counters.opf_solves, 0);
        assert_eq!(counters.cache_hits, 100);
    }

    #[test]
    fn dcrg_sequential_and_parallel_agree() {
        let problem = three_bus_problem();
        let g = law(150.0, 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let thetas: Vec<DVector<f64>> = (0..400).map(|_| g.sample(&mut rng)).collect();
        let mut store_a = RegionStore::new("a", problem.param_dim());
        let (sa, ca) = dcrg_simulate(&problem, &thetas, &mut store_a, 3, ExecMode::Sequential).unwrap();
        let mut store_b = RegionStore::new("b", problem.param_dim());
        let (sb, cb) = dcrg_simulate(&problem, &thetas, &mut store_b, 3, ExecMode::best()).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(store_a.len(), store_b.len());
        for (a, b) in sa.iter().zip(sb.iter()) {
            assert_eq!(a.region, b.region);
            assert_eq!(a.lmp.as_ref().map(|v| v.as_slice()), b.lmp.as_ref().map(|v| v.as_slice()));
        }
    }

    #[test]
    fn dcrg_forecast_matches_the_offline_store() {
        let problem = three_bus_problem();
        let g = law(150.0, 400.0);
        let mut store = RegionStore::new("dcrg", problem.param_dim());
        let (f, counters) =
            forecast_via_dcrg(&problem, &mut store, &g, 4, 6000, 21, ExecMode::best()).unwrap();
        assert!(f.plain_monte_carlo);
        assert_eq!(f.entries.len(), store.len());
        assert_eq!(store.len(), 3, "a wide law visits every interval");
        assert_eq!(counters.opf_solves, 3);
        assert_relative_eq!(
            f.probability_vector().iter().sum::<f64>(),
            1.0,
            epsilon = 1e-12
        );

        // Same law against the enumerated store: estimates agree.
        // Region ids differ (discovery order vs breadth-first order), so
        // regions pair up by working set.
        let enumerated = three_bus_store();
        let offline = forecast_regions(&enumerated, &g, 4, 6000, 22, ExecMode::best()).unwrap();
        for (region, entry) in store.regions.iter().zip(&f.entries) {
            let offline_id = enumerated.find_working_set(&region.working_set).unwrap();
            let other = &offline.entries[offline.find_entry(0, offline_id).unwrap()];
            let tol = 3.0 * (entry.std_error + other.std_error).max(1e-3);
            assert!(
                (entry.probability - other.probability).abs() <= tol,
                "region {}: dcrg {} vs offline {}",
                entry.region,
                entry.probability,
                other.probability
            );
        }

        // Identical seeds reproduce the forecast exactly.
        let mut store2 = RegionStore::new("dcrg", problem.param_dim());
        let (f2, _) =
            forecast_via_dcrg(&problem, &mut store2, &g, 4, 6000, 21, ExecMode::Sequential).unwrap();
        for (a, b) in f.entries.iter().zip(&f2.entries) {
            assert_eq!(a.probability, b.probability);
        }
    }
}
