//! Shared data model: parameter points, simulator outputs, priors, observed
//! data, and the metric primitives every other module reports with.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian priors are truncated at this many standard deviations so that
/// the sampler always works on a bounded support.
pub const GAUSSIAN_TRUNCATION_SIGMAS: f64 = 6.0;

/// A point in the hidden-parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("parameter vector is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter value {v}")));
        }
        Ok(Self(values))
    }

    pub fn with_dim(values: Vec<f64>, dim: usize) -> Result<Self> {
        if values.len() != dim {
            return Err(Error::Dimension(format!(
                "expected {dim} parameters, got {}",
                values.len()
            )));
        }
        Self::new(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A `T x M` simulator (or surrogate) output matrix; row `t` holds the `M`
/// features at time step `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSeries {
    values: Array2<f64>,
}

impl OutputSeries {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension(
                "output series must be at least 1x1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "output series contains non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_flat(time_steps: usize, features: usize, flat: Vec<f64>) -> Result<Self> {
        let values = Array2::from_shape_vec((time_steps, features), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn time_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Row-major (time-major) flattening.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.values[[t, m]]
    }
}

/// Observed data `D_o` together with the per-cell Gaussian noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    data: Array2<f64>,
    noise_sigma: Array2<f64>,
}

impl ObservedData {
    pub fn new(data: Array2<f64>, noise_sigma: Array2<f64>) -> Result<Self> {
        if data.dim() != noise_sigma.dim() {
            return Err(Error::Dimension(format!(
                "data is {:?} but noise_sigma is {:?}",
                data.dim(),
                noise_sigma.dim()
            )));
        }
        if let Some(s) = noise_sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidNoise(format!(
                "noise sigma must be positive, got {s}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "observed data contains non-finite values".into(),
            ));
        }
        Ok(Self { data, noise_sigma })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn noise_sigma(&self) -> &Array2<f64> {
        &self.noise_sigma
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Prior over the hidden parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    UniformBox {
        bounds: Vec<(f64, f64)>,
    },
    /// Independent Gaussians (diagonal covariance).
    Gaussian {
        mean: Vec<f64>,
        variance: Vec<f64>,
    },
}

impl PriorSpec {
    pub fn uniform(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let prior = PriorSpec::UniformBox { bounds };
        prior.validate()?;
        Ok(prior)
    }

    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let prior = PriorSpec::Gaussian { mean, variance };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::UniformBox { bounds } => {
                if bounds.is_empty() {
                    return Err(Error::Config("uniform prior has no dimensions".into()));
                }
                for (j, (lo, hi)) in bounds.iter().enumerate() {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::Config(format!(
                            "uniform prior dimension {j}: need lower < upper, got ({lo}, {hi})"
                        )));
                    }
                }
            }
            PriorSpec::Gaussian { mean, variance } => {
                if mean.is_empty() || mean.len() != variance.len() {
                    return Err(Error::Config(format!(
                        "gaussian prior: mean has {} entries, variance has {}",
                        mean.len(),
                        variance.len()
                    )));
                }
                for (j, (m, v)) in mean.iter().zip(variance).enumerate() {
                    if !(m.is_finite() && v.is_finite() && *v > 0.0) {
                        return Err(Error::Config(format!(
                            "gaussian prior dimension {j}: need finite mean and variance > 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::UniformBox { bounds } => bounds.len(),
            PriorSpec::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Bounded support per dimension; Gaussian priors are cut at
    /// `GAUSSIAN_TRUNCATION_SIGMAS`.
    pub fn support(&self) -> Vec<(f64, f64)> {
        match self {
            PriorSpec::UniformBox { bounds } => bounds.clone(),
            PriorSpec::Gaussian { mean, variance } => mean
                .iter()
                .zip(variance)
                .map(|(m, v)| {
                    let half = GAUSSIAN_TRUNCATION_SIGMAS * v.sqrt();
                    (m - half, m + half)
                })
                .collect(),
        }
    }

    pub fn contains(&self, theta: &ParamVector) -> bool {
        theta.len() == self.dim()
            && self
                .support()
                .iter()
                .zip(theta.as_slice())
                .all(|((lo, hi), x)| *lo <= *x && *x <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta_star: ParamVector,
}

impl GroundTruth {
    pub fn new(theta_star: ParamVector, prior: &PriorSpec) -> Result<Self> {
        if !prior.contains(&theta_star) {
            return Err(Error::Config(format!(
                "ground truth {:?} lies outside the prior support",
                theta_star.as_slice()
            )));
        }
        Ok(Self { theta_star })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub rmse: f64,
    pub pearson: f64,
}

impl MetricPair {
    /// RMSE and Pearson correlation of two equally long flat arrays.
    pub fn between(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, truth)?,
            pearson: pearson(pred, truth)?,
        })
    }
}

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::Dimension(format!(
            "need at least {min_len} elements, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite input".into()));
    }
    Ok(())
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 1)?;
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sse / a.len() as f64).sqrt())
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateInput(
            "zero variance input to pearson".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Gaussian log-likelihood of an output matrix against observed data, summed
/// cell by cell in log space.
pub fn log_likelihood(z: &OutputSeries, obs: &ObservedData) -> Result<f64> {
    log_likelihood_values(z.values(), obs)
}

pub(crate) fn log_likelihood_values(z: &Array2<f64>, obs: &ObservedData) -> Result<f64> {
    if z.dim() != obs.dim() {
        return Err(Error::Dimension(format!(
            "outputs are {:?} but observation is {:?}",
            z.dim(),
            obs.dim()
        )));
    }
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    let mut total = 0.0;
    for ((zv, d), s) in z.iter().zip(obs.data.iter()).zip(obs.noise_sigma.iter()) {
        let r = (d - zv) / s;
        total += -0.5 * (LN_2PI + 2.0 * s.ln()) - 0.5 * r * r;
    }
    Ok(total)
}
