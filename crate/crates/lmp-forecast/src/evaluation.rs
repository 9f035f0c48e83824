//! Scoring probabilistic forecasts against realized outcomes.
//!
//! The central score is the Brier score: the squared 2-norm distance
//! between a forecast probability vector and the realized outcome's unit
//! vector, averaged over events — 0 for a perfect forecast, 2 for a
//! maximally wrong point forecast. Reliability diagrams bin forecast
//! probabilities and compare them against observed frequencies.
//!
//! Two point-forecast baselines bracket the probabilistic forecast: one
//! locates the mean trajectory a horizon ahead and bets everything on
//! that region; the other does the same with the conditional mean given
//! today's observation. [`run_trajectory_experiment`] replays full
//! trajectory replications, scoring all three per target time — the
//! harness behind the boundary-crossing comparisons.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{forecast_regions, ForecastDistribution, PriceLabel};
use crate::mpp::RegionStore;
use crate::par::{map_indexed, ExecMode};
use crate::stochastic::ScenarioModel;

/// Squared distance between a probability vector and the realized
/// outcome's unit vector. An index at or past the vector's end denotes an
/// outcome the forecast assigned zero probability.
pub fn brier_score_event(forecast: &[f64], realized: usize) -> f64 {
    let mut score = 0.0;
    for (i, f) in forecast.iter().enumerate() {
        let target = f64::from(u8::from(i == realized));
        score += (f - target) * (f - target);
    }
    if realized >= forecast.len() {
        score += 1.0;
    }
    score
}

/// Mean Brier score over a sequence of events.
///
/// Every forecast vector must sum to one within 1e-6; the sequences must
/// have equal length.
pub fn brier_score(forecasts: &[Vec<f64>], realizations: &[usize]) -> Result<f64> {
    if forecasts.len() != realizations.len() {
        return Err(Error::Evaluation(format!(
            "{} forecasts against {} realizations",
            forecasts.len(),
            realizations.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::Evaluation("no events to score".into()));
    }
    for (i, f) in forecasts.iter().enumerate() {
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Evaluation(format!(
                "forecast {i} sums to {sum}, expected 1"
            )));
        }
    }
    let total: f64 = forecasts
        .iter()
        .zip(realizations)
        .map(|(f, &r)| brier_score_event(f, r))
        .sum();
    Ok(total / forecasts.len() as f64)
}

/// One bin of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of events in the bin that occurred; `None` when empty.
    pub observed_frequency: Option<f64>,
}

impl ReliabilityBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Equal-width reliability diagram over forecast probabilities.
pub fn reliability_diagram(
    probabilities: &[f64],
    outcomes: &[bool],
    n_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if probabilities.len() != outcomes.len() {
        return Err(Error::Evaluation(format!(
            "{} probabilities against {} outcomes",
            probabilities.len(),
            outcomes.len()
        )));
    }
    if n_bins < 2 {
        return Err(Error::Evaluation("reliability diagram needs at least 2 bins".into()));
    }
    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Evaluation("forecast probabilities must lie in [0,1]".into()));
    }
    let mut counts = vec![0usize; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&p, &occurred) in probabilities.iter().zip(outcomes) {
        let bin = ((p * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
        hits[bin] += usize::from(occurred);
    }
    let width = 1.0 / n_bins as f64;
    Ok((0..n_bins)
        .map(|b| ReliabilityBin {
            lower: b as f64 * width,
            upper: (b + 1) as f64 * width,
            count: counts[b],
            observed_frequency: if counts[b] > 0 {
                Some(hits[b] as f64 / counts[b] as f64)
            } else {
                None
            },
        })
        .collect())
}

/// Point-forecast baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Locate the mean trajectory at the target time, ignoring the
    /// observation.
    MeanTrajectory,
    /// Locate the conditional mean given the observation.
    CertaintyEquivalent,
}

/// Deterministic single-region forecast: the region containing the
/// baseline's point prediction, plus the price there.
pub fn baseline_point_forecast(
    kind: BaselineKind,
    store: &RegionStore,
    model: &ScenarioModel,
    theta_t: &DVector<f64>,
    t: usize,
    horizon: usize,
) -> Result<(usize, DVector<f64>)> {
    let point = match kind {
        BaselineKind::MeanTrajectory => {
            if t + horizon >= model.len() {
                return Err(Error::HorizonOutOfRange { t, horizon, len: model.len() });
            }
            model.mean_trajectory()[t + horizon].clone()
        }
        BaselineKind::CertaintyEquivalent => model.conditional_law(t, horizon, theta_t)?.mean,
    };
    let region = store.locate(&point).ok_or(Error::OutsideStore)?;
    let price = store.regions[region].price.at(&point);
    Ok((region, price))
}

/// Per-bus sample summary with a histogram and Gaussian fit parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusMarginal {
    pub mean: f64,
    pub variance: f64,
    /// Standard deviation of the Gaussian fit (same moments).
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Summarize per-bus marginals of a price sample matrix.
pub fn summarize_marginals(samples: &[DVector<f64>], n_bins: usize) -> Result<Vec<BusMarginal>> {
    if samples.len() < 2 {
        return Err(Error::Evaluation("marginal summaries need at least 2 samples".into()));
    }
    if n_bins == 0 {
        return Err(Error::Evaluation("histogram needs at least one bin".into()));
    }
    let n_bus = samples[0].len();
    if samples.iter().any(|s| s.len() != n_bus) {
        return Err(Error::Evaluation("price samples have mixed dimensions".into()));
    }
    let n = samples.len() as f64;
    Ok((0..n_bus)
        .map(|bus| {
            let xs: Vec<f64> = samples.iter().map(|s| s[bus]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let histogram = if hi > lo {
                let width = (hi - lo) / n_bins as f64;
                let mut counts = vec![0usize; n_bins];
                for &x in &xs {
                    let b = (((x - lo) / width) as usize).min(n_bins - 1);
                    counts[b] += 1;
                }
                counts
                    .into_iter()
                    .enumerate()
                    .map(|(b, count)| HistogramBin {
                        lower: lo + b as f64 * width,
                        upper: lo + (b + 1) as f64 * width,
                        count,
                    })
                    .collect()
            } else {
                // Constant samples: a single bin holds everything.
                vec![HistogramBin { lower: lo, upper: hi, count: xs.len() }]
            };
            BusMarginal { mean, variance, std: variance.sqrt(), histogram }
        })
        .collect())
}

/// Constant-price outcomes of a forecast, grouped by LMP vector.
///
/// Distinct (configuration, region) entries can price identically — a
/// derated configuration often reproduces a base-case price — and for
/// scoring, the price is the forecast quantity. Entries whose LMP
/// vectors agree within `tol` (∞-norm) pool their probability. The
/// residual "none of the stored outcomes" mass is appended by
/// [`OutcomeGroups::probability_vector`].
#[derive(Debug, Clone)]
pub struct OutcomeGroups {
    pub lmps: Vec<DVector<f64>>,
    pub probabilities: Vec<f64>,
    /// The (configuration, region) pairs pooled into each group.
    pub members: Vec<Vec<(usize, usize)>>,
    none_mass: f64,
}

impl OutcomeGroups {
    /// Group index of a (configuration, region) outcome.
    pub fn index_of(&self, config: usize, region: usize) -> Option<usize> {
        self.members
            .iter()
            .position(|m| m.contains(&(config, region)))
    }

    /// Group index of a realized price vector.
    pub fn index_of_price(&self, lmp: &DVector<f64>, tol: f64) -> Option<usize> {
        self.lmps.iter().position(|g| (g - lmp).amax() <= tol)
    }

    /// Index of the "none of the stored outcomes" category.
    pub fn none_index(&self) -> usize {
        self.lmps.len()
    }

    /// Group probabilities with the residual mass appended (sums to 1).
    pub fn probability_vector(&self) -> Vec<f64> {
        let mut v = self.probabilities.clone();
        v.push(self.none_mass);
        v
    }
}

/// Pool a forecast's constant-price entries by LMP vector.
pub fn group_constant_outcomes(
    forecast: &ForecastDistribution,
    tol: f64,
) -> Result<OutcomeGroups> {
    let mut groups = OutcomeGroups {
        lmps: Vec::new(),
        probabilities: Vec::new(),
        members: Vec::new(),
        none_mass: forecast.none_probability(),
    };
    for entry in &forecast.entries {
        let lmp = match &entry.price {
            PriceLabel::Constant { lmp } => lmp,
            PriceLabel::Gaussian { .. } => {
                return Err(Error::Evaluation(
                    "price-vector outcome grouping needs constant-price regions".into(),
                ))
            }
        };
        match groups.index_of_price(lmp, tol) {
            Some(g) => {
                groups.probabilities[g] += entry.probability;
                groups.members[g].push((entry.config, entry.region));
            }
            None => {
                groups.lmps.push(lmp.clone());
                groups.probabilities.push(entry.probability);
                groups.members.push(vec![(entry.config, entry.region)]);
            }
        }
    }
    Ok(groups)
}

/// Configuration of a replicated trajectory-forecasting experiment.
#[derive(Debug, Clone)]
pub struct TrajectoryExperiment {
    pub horizon: usize,
    /// Samples per probabilistic forecast.
    pub n_samples: usize,
    pub replications: usize,
    pub seed: u64,
}

/// Per-target-time Brier scores of the probabilistic forecast and the
/// two point baselines, averaged over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryScores {
    /// Target times `t + horizon` the scores are indexed by.
    pub target_times: Vec<usize>,
    pub probabilistic: Vec<f64>,
    pub mean_trajectory: Vec<f64>,
    pub certainty_equivalent: Vec<f64>,
    /// (forecast probability, occurred) pairs of every per-region
    /// indicator event of the probabilistic forecast.
    #[serde(skip)]
    pub reliability_events: Vec<(f64, bool)>,
}

impl TrajectoryScores {
    /// Scores averaged over target times: (probabilistic, mean
    /// trajectory, certainty equivalent).
    pub fn time_averaged(&self) -> (f64, f64, f64) {
        let n = self.target_times.len() as f64;
        (
            self.probabilistic.iter().sum::<f64>() / n,
            self.mean_trajectory.iter().sum::<f64>() / n,
            self.certainty_equivalent.iter().sum::<f64>() / n,
        )
    }

    /// Target time with the highest mean-trajectory score within
    /// `window` (inclusive bounds on target time).
    pub fn peak_in(&self, window: (usize, usize)) -> Option<usize> {
        self.target_times
            .iter()
            .zip(&self.mean_trajectory)
            .filter(|(s, _)| (window.0..=window.1).contains(*s))
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(s, _)| *s)
    }
}

fn rep_seed(seed: u64, rep: usize, t: usize) -> u64 {
    seed.wrapping_add(
        0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(((rep as u64) << 24) | (t as u64 + 1)),
    )
}

/// Replay whole-trajectory forecasting: simulate `replications` paths of
/// `model`, issue a forecast at every time with a full horizon ahead,
/// and score all three algorithms against the realized region at the
/// target time.
///
/// Outcomes live on the store's regions plus an explicit "no stored
/// region" category — random-walk paths can leave the feasible box, and
/// honest scoring needs that mass accounted. Point baselines whose
/// located point falls outside the store likewise bet on that category.
pub fn run_trajectory_experiment(
    store: &RegionStore,
    model: &ScenarioModel,
    cfg: &TrajectoryExperiment,
    mode: ExecMode,
) -> Result<TrajectoryScores> {
    if cfg.replications == 0 {
        return Err(Error::Evaluation("experiment needs at least one replication".into()));
    }
    let len = model.len();
    if cfg.horizon == 0 || cfg.horizon >= len {
        return Err(Error::HorizonOutOfRange { t: 0, horizon: cfg.horizon, len });
    }
    model.validate()?;
    let issue_times: Vec<usize> = (0..len - cfg.horizon).collect();
    let none_outcome = store.len();

    struct RepResult {
        p: Vec<f64>,
        d: Vec<f64>,
        c: Vec<f64>,
        events: Vec<(f64, bool)>,
    }

    let reps = map_indexed(mode, cfg.replications, |rep| -> Result<RepResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let path = model.sample_path(len - 1, &mut rng)?;
        let mut out = RepResult {
            p: Vec::with_capacity(issue_times.len()),
            d: Vec::with_capacity(issue_times.len()),
            c: Vec::with_capacity(issue_times.len()),
            events: Vec::new(),
        };
        for &t in &issue_times {
            let theta_t = &path[t];
            let realized = store
                .locate(&path[t + cfg.horizon])
                .unwrap_or(none_outcome);

            let law = model.conditional_law(t, cfg.horizon, theta_t)?;
            let forecast = forecast_regions(
                store,
                &law,
                t,
                cfg.n_samples,
                rep_seed(cfg.seed, rep, t),
                ExecMode::Sequential,
            )?;
            // Entry order is region id order, so outcome indices align.
            let probs = forecast.probability_vector();
            out.p.push(brier_score_event(&probs, realized));
            for (region_id, &p) in probs[..store.len()].iter().enumerate() {
                out.events.push((p, realized == region_id));
            }

            for (kind, acc) in [
                (BaselineKind::MeanTrajectory, &mut out.d),
                (BaselineKind::CertaintyEquivalent, &mut out.c),
            ] {
                let bet = match baseline_point_forecast(kind, store, model, theta_t, t, cfg.horizon)
                {
                    Ok((region, _)) => region,
                    Err(Error::OutsideStore) => none_outcome,
                    Err(other) => return Err(other),
                };
                let mut unit = vec![0.0; store.len() + 1];
                unit[bet] = 1.0;
                acc.push(brier_score_event(&unit, realized));
            }
        }
        Ok(out)
    });

    let n_times = issue_times.len();
    let mut scores = TrajectoryScores {
        target_times: issue_times.iter().map(|t| t + cfg.horizon).collect(),
        probabilistic: vec![0.0; n_times],
        mean_trajectory: vec![0.0; n_times],
        certainty_equivalent: vec![0.0; n_times],
        reliability_events: Vec::new(),
    };
    for rep in reps {
        let rep = rep?;
        for i in 0..n_times {
            scores.probabilistic[i] += rep.p[i];
            scores.mean_trajectory[i] += rep.d[i];
            scores.certainty_equivalent[i] += rep.c[i];
        }
        scores.reliability_events.extend(rep.events);
    }
    let n = cfg.replications as f64;
    for i in 0..n_times {
        scores.probabilistic[i] /= n;
        scores.mean_trajectory[i] /= n;
        scores.certainty_equivalent[i] /= n;
    }
    Ok(scores)
}

/// Full evaluation output as written by the command-line tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scores: TrajectoryScores,
    pub time_averaged_probabilistic: f64,
    pub time_averaged_mean_trajectory: f64,
    pub time_averaged_certainty_equivalent: f64,
    pub reliability: Vec<ReliabilityBin>,
}

impl EvaluationReport {
    pub fn from_scores(scores: TrajectoryScores, n_bins: usize) -> Result<EvaluationReport> {
        let (p, d, c) = scores.time_averaged();
        let (probs, outcomes): (Vec<f64>, Vec<bool>) =
            scores.reliability_events.iter().copied().unzip();
        let reliability = reliability_diagram(&probs, &outcomes, n_bins)?;
        Ok(EvaluationReport {
            scores,
            time_averaged_probabilistic: p,
            time_averaged_mean_trajectory: d,
            time_averaged_certainty_equivalent: c,
            reliability,
        })
    }
}

/// Write per-time scores as `time,BS_AlgP,BS_AlgD,BS_AlgC` rows.
pub fn write_score_csv<P: AsRef<std::path::Path>>(
    path: P,
    scores: &TrajectoryScores,
) -> Result<()> {
    let mut text = String::from("time,BS_AlgP,BS_AlgD,BS_AlgC\n");
    for (i, s) in scores.target_times.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            s, scores.probabilistic[i], scores.mean_trajectory[i], scores.certainty_equivalent[i]
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Write reliability bins as `bin_center,observed_freq,count` rows;
/// empty bins print `nan`.
pub fn write_reliability_csv<P: AsRef<std::path::Path>>(
    path: P,
    bins: &[ReliabilityBin],
) -> Result<()> {
    let mut text = String::from("bin_center,observed_freq,count\n");
    for bin in bins {
        let freq = bin
            .observed_frequency
            .map_or_else(|| "nan".to_string(), |f| f.to_string());
        text.push_str(&format!("{},{},{}\n", bin.center(), freq, bin.count));
    }
    std::fs::write(path, text)?;
    Ok(())
}
