//! Stochastic models of the uncertain injections.
//!
//! A [`ScenarioModel`] describes how the vector of stochastic loads and
//! generation evolves around a known mean trajectory: either a random
//! walk (increments of the mean plus Gaussian noise) or a mean-reverting
//! AR(1) process on the deviation from the mean. Both admit a closed-form
//! Gaussian [`ConditionalLaw`] for the parameter a fixed horizon ahead
//! given today's observation, which is what the forecaster integrates
//! over the critical regions.
//!
//! Discrete topology/capacity deviations ride on top as a categorical
//! draw over configurations ([`sample_outcome`]).

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the AR(1) noise accumulates over a multi-step horizon.
///
/// Independent per-step innovations give a cumulative covariance of
/// `Σ·Σ_{i<T} φ^{2i}` — the coefficient enters squared, because variance
/// is quadratic in the coefficient. [`Ar1Variance::LinearPhi`] instead
/// accumulates `Σ·Σ_{i<T} φ^i`, for comparison against conventions that
/// sum the coefficient itself; it is not variance-correct and exists only
/// as a reference switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ar1Variance {
    #[default]
    SquaredPhi,
    LinearPhi,
}

/// Law of the stochastic parameter trajectory around its mean.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioModel {
    /// `θ_{t+1} = θ_t + (θ̄_{t+1} − θ̄_t) + ε_t`, `ε_t ~ N(0, Σ)`.
    RandomWalk { mean: Vec<DVector<f64>>, sigma: DMatrix<f64> },
    /// Deviation `x_t = θ_t − θ̄_t` follows `x_{t+1} = φ·x_t + ε_t`.
    Ar1 {
        mean: Vec<DVector<f64>>,
        phi: f64,
        sigma: DMatrix<f64>,
        variance: Ar1Variance,
    },
}

impl ScenarioModel {
    /// Number of stochastic parameters.
    pub fn dim(&self) -> usize {
        self.mean_trajectory().first().map_or(0, |m| m.len())
    }

    /// Number of time steps the mean trajectory covers.
    pub fn len(&self) -> usize {
        self.mean_trajectory().len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_trajectory().is_empty()
    }

    pub fn mean_trajectory(&self) -> &[DVector<f64>] {
        match self {
            ScenarioModel::RandomWalk { mean, .. } => mean,
            ScenarioModel::Ar1 { mean, .. } => mean,
        }
    }

    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        match self {
            ScenarioModel::RandomWalk { sigma, .. } => sigma,
            ScenarioModel::Ar1 { sigma, .. } => sigma,
        }
    }

    /// Structural checks: consistent dimensions, a symmetric positive
    /// semidefinite noise covariance, and a stable AR(1) coefficient.
    pub fn validate(&self) -> Result<()> {
        let mean = self.mean_trajectory();
        if mean.is_empty() {
            return Err(Error::CaseFormat("scenario mean trajectory is empty".into()));
        }
        let p = mean[0].len();
        if p == 0 {
            return Err(Error::CaseFormat("scenario has zero stochastic dimensions".into()));
        }
        if mean.iter().any(|m| m.len() != p) {
            return Err(Error::CaseFormat(
                "scenario mean trajectory entries have mixed dimensions".into(),
            ));
        }
        let sigma = self.noise_covariance();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::Dimension {
                what: "scenario noise covariance",
                expected: p,
                got: sigma.nrows(),
            });
        }
        let scale = 1.0 + sigma.amax();
        for i in 0..p {
            for j in (i + 1)..p {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::CaseFormat(
                        "scenario noise covariance is not symmetric".into(),
                    ));
                }
            }
        }
        let min_eig = sigma
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * scale {
            return Err(Error::CaseFormat(
                "scenario noise covariance is not positive semidefinite".into(),
            ));
        }
        if let ScenarioModel::Ar1 { phi, .. } = self {
            if !phi.is_finite() || phi.abs() >= 1.0 {
                return Err(Error::CaseFormat(format!(
                    "AR(1) coefficient must satisfy |phi| < 1, got {phi}"
                )));
            }
        }
        Ok(())
    }

    /// Gaussian law of the parameter at `t + horizon` given `theta_t`.
    pub fn conditional_law(
        &self,
        t: usize,
        horizon: usize,
        theta_t: &DVector<f64>,
    ) -> Result<ConditionalLaw> {
        if horizon == 0 || t + horizon >= self.len() {
            return Err(Error::HorizonOutOfRange { t, horizon, len: self.len() });
        }
        if theta_t.len() != self.dim() {
            return Err(Error::Dimension {
                what: "observed parameter",
                expected: self.dim(),
                got: theta_t.len(),
            });
        }
        let mean_traj = self.mean_trajectory();
        let (mean, cov) = match self {
            ScenarioModel::RandomWalk { sigma, .. } => {
                let mean = theta_t + &mean_traj[t + horizon] - &mean_traj[t];
                (mean, sigma * horizon as f64)
            }
            ScenarioModel::Ar1 { phi, sigma, variance, .. } => {
                let damp = phi.powi(horizon as i32);
                let mean = &mean_traj[t + horizon] + (theta_t - &mean_traj[t]) * damp;
                let scale: f64 = (0..horizon)
                    .map(|i| match variance {
                        Ar1Variance::SquaredPhi => phi.powi(2 * i as i32),
                        Ar1Variance::LinearPhi => phi.powi(i as i32),
                    })
                    .sum();
                (mean, sigma * scale)
            }
        };
        Ok(ConditionalLaw::new(mean, cov, horizon))
    }

    /// Simulate the recursion from time 0 through `horizon`, starting on
    /// the mean. Entry `k` of the result is the parameter at time `k`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        if horizon >= self.len() {
            return Err(Error::HorizonOutOfRange { t: 0, horizon, len: self.len() });
        }
        let mean = self.mean_trajectory();
        let factor = covariance_factor(self.noise_covariance());
        let mut path = Vec::with_capacity(horizon + 1);
        path.push(mean[0].clone());
        match self {
            ScenarioModel::RandomWalk { .. } => {
                for k in 0..horizon {
                    let step = &path[k] + (&mean[k + 1] - &mean[k]) + &factor * standard_normal(self.dim(), rng);
                    path.push(step);
                }
            }
            ScenarioModel::Ar1 { phi, .. } => {
                let mut x = DVector::zeros(self.dim());
                for k in 0..horizon {
                    x = &x * *phi + &factor * standard_normal(self.dim(), rng);
                    path.push(&mean[k + 1] + &x);
                }
            }
        }
        Ok(path)
    }
}

/// Standard normal vector with a fixed fill order (index 0 first).
fn standard_normal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// A factor `L` with `L·Lᵀ = cov`: the Cholesky factor when the matrix is
/// positive definite, otherwise an eigenvalue square root with negative
/// eigenvalues clamped to zero (covers semidefinite and zero covariances).
fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Gaussian distribution of the parameter a fixed horizon ahead.
#[derive(Debug)]
pub struct ConditionalLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub horizon: usize,
    chol: OnceLock<Option<Cholesky<f64, Dyn>>>,
    factor: OnceLock<DMatrix<f64>>,
}

impl Clone for ConditionalLaw {
    fn clone(&self) -> Self {
        ConditionalLaw::new(self.mean.clone(), self.cov.clone(), self.horizon)
    }
}

impl ConditionalLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, horizon: usize) -> Self {
        ConditionalLaw { mean, cov, horizon, chol: OnceLock::new(), factor: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol
            .get_or_init(|| Cholesky::new(self.cov.clone()))
            .as_ref()
    }

    /// True when the covariance is singular (density undefined).
    pub fn is_degenerate(&self) -> bool {
        self.cholesky().is_none()
    }

    /// Draw one parameter vector. Works for singular covariances too.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let factor = self.factor.get_or_init(|| covariance_factor(&self.cov));
        &self.mean + factor * standard_normal(self.dim(), rng)
    }

    /// Log density at a point; requires a non-singular covariance.
    pub fn log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        let chol = self
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("conditional covariance".into()))?;
        let d = theta - &self.mean;
        let quad = d.dot(&chol.solve(&d));
        let log_det = chol.determinant().ln();
        let p = self.dim() as f64;
        Ok(-0.5 * (quad + log_det + p * (2.0 * std::f64::consts::PI).ln()))
    }

    /// Same distribution recentered at `mean` (shared covariance); used
    /// for importance-sampling proposals.
    pub fn recentered(&self, mean: DVector<f64>) -> ConditionalLaw {
        ConditionalLaw::new(mean, self.cov.clone(), self.horizon)
    }
}

/// Draw a configuration index from categorical probabilities over the
/// `K+1` outcomes (index 0 = unmodified system).
pub fn sample_outcome<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Result<usize> {
    validate_outcome_probabilities(probabilities)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(probabilities.len() - 1)
}

/// Categorical probabilities must be in `[0,1]` and sum to one.
pub fn validate_outcome_probabilities(probabilities: &[f64]) -> Result<()> {
    if probabilities.is_empty() {
        return Err(Error::InvalidProbabilities("no outcomes given".into()));
    }
    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidProbabilities(
            "outcome probabilities must lie in [0,1]".into(),
        ));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!(
            "outcome probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// On-disk scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    /// `"rw"` for the random walk, `"ar1"` for the autoregression.
    model: String,
    mean_trajectory: Vec<Vec<f64>>,
    sigma: SigmaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ar1_variance: Option<Ar1Variance>,
    #[serde(default)]
    seed: u64,
}

/// Noise covariance shorthand: a scalar means `s·I`, a vector the
/// diagonal, a matrix the full covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl SigmaSpec {
    fn to_matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            SigmaSpec::Scalar(s) => Ok(DMatrix::identity(p, p) * *s),
            SigmaSpec::Diagonal(d) => {
                if d.len() != p {
                    return Err(Error::Dimension { what: "sigma diagonal", expected: p, got: d.len() });
                }
                Ok(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
            }
            SigmaSpec::Full(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(Error::Dimension { what: "sigma matrix", expected: p, got: rows.len() });
                }
                Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
            }
        }
    }
}

/// A scenario model plus the seed its file suggests for simulation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ScenarioModel,
    pub seed: u64,
}

/// Read and validate a scenario JSON file.
pub fn load_scenario<P: AsRef<Path>>(path: P) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    let mean: Vec<DVector<f64>> = file
        .mean_trajectory
        .iter()
        .map(|m| DVector::from_row_slice(m))
        .collect();
    let p = mean.first().map_or(0, |m| m.len());
    let sigma = file.sigma.to_matrix(p)?;
    let model = match file.model.as_str() {
        "rw" => {
            if file.phi.is_some() || file.ar1_variance.is_some() {
                return Err(Error::CaseFormat(
                    "random-walk scenarios take no phi / ar1_variance".into(),
                ));
            }
            ScenarioModel::RandomWalk { mean, sigma }
        }
        "ar1" => ScenarioModel::Ar1 {
            mean,
            phi: file
                .phi
                .ok_or_else(|| Error::CaseFormat("ar1 scenario requires phi".into()))?,
            sigma,
            variance: file.ar1_variance.unwrap_or_default(),
        },
        other => {
            return Err(Error::CaseFormat(format!(
                "unknown scenario model {other:?}, expected \"rw\" or \"ar1\""
            )))
        }
    };
    model.validate()?;
    Ok(Scenario { model, seed: file.seed })
}
