//! Parameter-space exploration: Latin hypercube designs, prior transforms and
//! nested sampling with single-ellipsoid constrained drawing.
//!
//! The nested sampler works in unit-cube coordinates `u in [0,1]^J`; the
//! prior transform maps them to parameter space. Prior volume shrinks
//! deterministically as `X_i = exp(-i / N_live)`, each dead point gets the
//! trapezoid weight `w_i = (X_{i-1} - X_{i+1}) / 2`, and after termination the
//! surviving live points carry the remaining volume `X_I / N_live` each.
//! Everything is accumulated in log space.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{ParamVector, PriorSpec, GAUSSIAN_TRUNCATION_SIGMAS};

pub const DEFAULT_MAX_TRIES: usize = 10_000;
pub const HISTOGRAM_BINS: usize = 50;

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Latin hypercube design over a uniform box: per dimension every one of the
/// `n` equal-width strata holds exactly one point.
pub fn lhc_sample<R: Rng + ?Sized>(
    n: usize,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<Vec<ParamVector>> {
    let bounds = match prior {
        PriorSpec::UniformBox { bounds } => bounds,
        PriorSpec::Gaussian { .. } => {
            return Err(Error::UnsupportedPrior(
                "latin hypercube sampling needs a uniform-box prior".into(),
            ))
        }
    };
    if n == 0 {
        return Err(Error::Config("lhc sample size must be at least 1".into()));
    }
    let mut columns = Vec::with_capacity(bounds.len());
    for &(lo, hi) in bounds {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let width = (hi - lo) / n as f64;
        let column: Vec<f64> = strata
            .into_iter()
            .map(|s| {
                let offset: f64 = rng.random();
                (lo + (s as f64 + offset) * width).min(hi)
            })
            .collect();
        columns.push(column);
    }
    (0..n)
        .map(|i| ParamVector::new(columns.iter().map(|c| c[i]).collect()))
        .collect()
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Maps a unit-cube point to parameter space.
pub fn prior_transform(u: &[f64], prior: &PriorSpec) -> Result<ParamVector> {
    if u.len() != prior.dim() {
        return Err(Error::Dimension(format!(
            "unit point has {} coordinates, prior has {}",
            u.len(),
            prior.dim()
        )));
    }
    if let Some(v) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "unit-cube coordinate {v} outside [0, 1]"
        )));
    }
    let theta = match prior {
        PriorSpec::UniformBox { bounds } => u
            .iter()
            .zip(bounds)
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect(),
        PriorSpec::Gaussian { mean, variance } => {
            let normal = standard_normal();
            let lo = normal.cdf(-GAUSSIAN_TRUNCATION_SIGMAS);
            let hi = normal.cdf(GAUSSIAN_TRUNCATION_SIGMAS);
            u.iter()
                .zip(mean.iter().zip(variance))
                .map(|(u, (m, v))| {
                    let q = normal
                        .inverse_cdf(u.clamp(lo, hi))
                        .clamp(-GAUSSIAN_TRUNCATION_SIGMAS, GAUSSIAN_TRUNCATION_SIGMAS);
                    m + v.sqrt() * q
                })
                .collect()
        }
    };
    ParamVector::new(theta)
}

/// Linear scale applied to the minimal enclosing ellipsoid so that its volume
/// grows by `1 / erf`.
pub fn enlargement_factor(erf: f64, dim: usize) -> f64 {
    (1.0 / erf).powf(1.0 / dim as f64)
}

/// `{x : (x - c)^T A^{-1} (x - c) <= 1}`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    shape_inv: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn center(&self) -> &[f64] {
        self.center.as_slice()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        (d.transpose() * &self.shape_inv * &d)[(0, 0)]
    }

    /// Uniform draw from the ellipsoid's interior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dim = self.dim();
        let mut z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = z.norm();
        let radius = rng.random::<f64>().powf(1.0 / dim as f64);
        z *= radius / norm;
        (&self.center + &self.chol * z).as_slice().to_vec()
    }
}

/// Fits the sample-covariance ellipsoid around `points`, scales it to just
/// enclose every point, then enlarges its volume by `1 / erf`.
pub fn fit_bounding_ellipsoid(points: &[Vec<f64>], erf: f64) -> Result<Ellipsoid> {
    if !(erf > 0.0 && erf <= 1.0) {
        return Err(Error::Config(format!("erf must lie in (0, 1], got {erf}")));
    }
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 || n <= dim {
        return Err(Error::DegenerateLiveSet(format!(
            "{n} points cannot bound a {dim}-dimensional ellipsoid"
        )));
    }
    let data = DMatrix::from_fn(n, dim, |i, j| points[i][j]);
    let center: DVector<f64> = data.row_mean().transpose();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in data.row_iter() {
        let d = row.transpose() - &center;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;

    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * cov.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
            let mut regularized = cov.clone();
            for j in 0..dim {
                regularized[(j, j)] += jitter;
            }
            cov = regularized;
            cov.clone().cholesky().ok_or_else(|| {
                Error::DegenerateLiveSet("covariance of live points is singular".into())
            })?
        }
    };
    let cov_inv = chol.inverse();
    let max_d2 = data
        .row_iter()
        .map(|row| {
            let d = row.transpose() - &center;
            (d.transpose() * &cov_inv * &d)[(0, 0)]
        })
        .fold(0.0f64, f64::max);
    if !(max_d2.is_finite() && max_d2 > 0.0) {
        return Err(Error::DegenerateLiveSet("live points coincide".into()));
    }
    let scale = max_d2 * enlargement_factor(erf, dim).powi(2);
    let shape = cov * scale;
    let shape_inv = cov_inv / scale;
    let chol = chol.l() * scale.sqrt();
    Ok(Ellipsoid {
        center,
        shape,
        shape_inv,
        chol,
    })
}

#[derive(Debug, Clone)]
pub struct ConstrainedDraw {
    pub unit: Vec<f64>,
    pub theta: ParamVector,
    pub log_like: f64,
    pub n_evals: usize,
}

/// Rejection-samples the ellipsoid until a point inside the prior support has
/// `ln L > log_threshold`. Draws outside the unit cube cost no likelihood
/// evaluation but do count against `max_tries`.
pub fn draw_constrained<F, R>(
    ellipsoid: &Ellipsoid,
    prior: &PriorSpec,
    loglike: &mut F,
    log_threshold: f64,
    rng: &mut R,
    max_tries: usize,
) -> Result<ConstrainedDraw>
where
    F: FnMut(&ParamVector) -> Result<f64>,
    R: Rng + ?Sized,
{
    if max_tries == 0 {
        return Err(Error::Config("max_tries must be at least 1".into()));
    }
    let mut n_evals = 0;
    for _ in 0..max_tries {
        let unit = ellipsoid.sample(rng);
        if unit.iter().any(|u| !(0.0..=1.0).contains(u)) {
            continue;
        }
        let theta = prior_transform(&unit, prior)?;
        let log_like = checked(loglike(&theta)?, &theta)?;
        n_evals += 1;
        if log_like > log_threshold {
            return Ok(ConstrainedDraw {
                unit,
                theta,
                log_like,
                n_evals,
            });
        }
    }
    Err(Error::ConstrainedDrawFailure {
        iteration: 0,
        tries: max_tries,
        threshold: log_threshold,
    })
}

fn checked(value: f64, theta: &ParamVector) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidLikelihood {
            value,
            theta: theta.as_slice().to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Stop once `max L * X_i < exp(tol) * Z`.
    #[default]
    Literal,
    /// Stop once the remaining-evidence bound satisfies
    /// `ln(Z + max L * X_i) - ln Z < tol`.
    RemainingEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsConfig {
    pub n_live: usize,
    pub tol: f64,
    pub erf: f64,
    pub max_iter: usize,
    pub max_tries: usize,
    pub seed: u64,
    pub termination: Termination,
    pub verbose: bool,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            n_live: 300,
            tol: 0.5,
            erf: 0.8,
            max_iter: 1_000_000,
            max_tries: DEFAULT_MAX_TRIES,
            seed: 0,
            termination: Termination::Literal,
            verbose: false,
        }
    }
}

impl NsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_live < 2 {
            return Err(Error::Config(format!(
                "n_live must be >= 2, got {}",
                self.n_live
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.erf > 0.0 && self.erf <= 1.0) {
            return Err(Error::Config(format!(
                "erf must lie in (0, 1], got {}",
                self.erf
            )));
        }
        if self.max_iter == 0 || self.max_tries == 0 {
            return Err(Error::Config("max_iter and max_tries must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LiveSet {
    pub points: Vec<ParamVector>,
    pub unit: Vec<Vec<f64>>,
    pub log_likes: Vec<f64>,
}

impl LiveSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the lowest likelihood; ties go to the lowest index.
    pub fn worst(&self) -> usize {
        let mut idx = 0;
        for (i, ll) in self.log_likes.iter().enumerate() {
            if *ll < self.log_likes[idx] {
                idx = i;
            }
        }
        idx
    }

    pub fn max_log_like(&self) -> f64 {
        self.log_likes
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bounding_ellipsoid(&self, erf: f64) -> Result<Ellipsoid> {
        fit_bounding_ellipsoid(&self.unit, erf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub theta: ParamVector,
    pub log_like: f64,
    pub log_weight: f64,
    pub log_importance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NestedRunResult {
    /// Dead points in replacement order, followed by the final live points in
    /// ascending likelihood.
    pub samples: Vec<WeightedSample>,
    pub log_evidence: f64,
    /// Information (KL divergence of posterior from prior), in nats.
    pub information: f64,
    /// Number of dead points.
    pub iterations: usize,
    pub n_live: usize,
    pub n_like_evals: usize,
    pub converged: bool,
    pub wall_time: f64,
}

impl NestedRunResult {
    pub fn dead(&self) -> &[WeightedSample] {
        &self.samples[..self.iterations]
    }

    /// Rough standard error of `ln Z`, `sqrt(H / N_live)`.
    pub fn log_evidence_error(&self) -> f64 {
        (self.information.max(0.0) / self.n_live as f64).sqrt()
    }

    pub fn importance_weights(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.log_importance.exp())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgressRecord {
    pub iteration: usize,
    pub log_like: f64,
    pub log_volume: f64,
    pub log_evidence: f64,
}

pub fn nested_sampling<F>(loglike: F, prior: &PriorSpec, cfg: &NsConfig) -> Result<NestedRunResult>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let verbose = cfg.verbose;
    nested_sampling_with_progress(loglike, prior, cfg, |rec| {
        if verbose {
            if let Ok(line) = serde_json::to_string(rec) {
                eprintln!("{line}");
            }
        }
    })
}

pub fn nested_sampling_with_progress<F, P>(
    mut loglike: F,
    prior: &PriorSpec,
    cfg: &NsConfig,
    mut progress: P,
) -> Result<NestedRunResult>
where
    F: FnMut(&ParamVector) -> Result<f64>,
    P: FnMut(&ProgressRecord),
{
    cfg.validate()?;
    prior.validate()?;
    let start = Instant::now();
    let n_live = cfg.n_live;
    let dim = prior.dim();
    let nf = n_live as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut live = LiveSet {
        points: Vec::with_capacity(n_live),
        unit: Vec::with_capacity(n_live),
        log_likes: Vec::with_capacity(n_live),
    };
    for _ in 0..n_live {
        let unit: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let theta = prior_transform(&unit, prior)?;
        let ll = checked(loglike(&theta)?, &theta)?;
        live.unit.push(unit);
        live.points.push(theta);
        live.log_likes.push(ll);
    }
    let mut n_like_evals = n_live;

    // ln(X_{i-1} - X_{i+1}) - ln 2 = -(i-1)/N + ln(1 - e^{-2/N}) - ln 2
    let log_width = (-(-2.0 / nf).exp_m1()).ln() - std::f64::consts::LN_2;
    let stop_offset = match cfg.termination {
        Termination::Literal => cfg.tol,
        Termination::RemainingEvidence => cfg.tol.exp_m1().ln(),
    };

    let mut dead: Vec<WeightedSample> = Vec::new();
    let mut log_z = f64::NEG_INFINITY;
    let mut converged = false;
    let mut last_iter = 0;
    for i in 1..=cfg.max_iter {
        let worst = live.worst();
        let log_l = live.log_likes[worst];
        let log_w = -((i - 1) as f64) / nf + log_width;
        log_z = log_add_exp(log_z, log_l + log_w);
        dead.push(WeightedSample {
            theta: live.points[worst].clone(),
            log_like: log_l,
            log_weight: log_w,
            log_importance: f64::NAN,
        });

        let ellipsoid = live.bounding_ellipsoid(cfg.erf)?;
        let draw = draw_constrained(
            &ellipsoid,
            prior,
            &mut loglike,
            log_l,
            &mut rng,
            cfg.max_tries,
        )
        .map_err(|e| match e {
            Error::ConstrainedDrawFailure {
                tries, threshold, ..
            } => Error::ConstrainedDrawFailure {
                iteration: i,
                tries,
                threshold,
            },
            other => other,
        })?;
        n_like_evals += draw.n_evals;
        live.unit[worst] = draw.unit;
        live.points[worst] = draw.theta;
        live.log_likes[worst] = draw.log_like;

        let log_x = -(i as f64) / nf;
        progress(&ProgressRecord {
            iteration: i,
            log_like: log_l,
            log_volume: log_x,
            log_evidence: log_z,
        });
        last_iter = i;
        if live.max_log_like() + log_x < stop_offset + log_z {
            converged = true;
            break;
        }
    }

    let iterations = last_iter;
    let log_x_final = -(iterations as f64) / nf;
    let log_live_weight = log_x_final - nf.ln();
    log_z = log_add_exp(log_z, log_sum_exp(&live.log_likes) + log_live_weight);

    let mut order: Vec<usize> = (0..n_live).collect();
    order.sort_by(|&a, &b| live.log_likes[a].total_cmp(&live.log_likes[b]));
    let mut samples = dead;
    samples.extend(order.into_iter().map(|k| WeightedSample {
        theta: live.points[k].clone(),
        log_like: live.log_likes[k],
        log_weight: log_live_weight,
        log_importance: f64::NAN,
    }));
    let mut information = 0.0;
    for s in &mut samples {
        s.log_importance = s.log_like + s.log_weight - log_z;
        information += s.log_importance.exp() * s.log_like;
    }
    information -= log_z;

    Ok(NestedRunResult {
        samples,
        log_evidence: log_z,
        information,
        iterations,
        n_live,
        n_like_evals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Multinomial resampling to `n` equally weighted posterior draws.
pub fn posterior_resample<R: Rng + ?Sized>(
    result: &NestedRunResult,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ParamVector>> {
    if result.samples.is_empty() {
        return Err(Error::EmptyResult("no samples to resample".into()));
    }
    let index = WeightedIndex::new(result.importance_weights())
        .map_err(|e| Error::EmptyResult(format!("unusable importance weights: {e}")))?;
    Ok((0..n)
        .map(|_| result.samples[index.sample(rng)].theta.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1d {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub dims: (usize, usize),
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    /// `weights[bx][by]`.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Highest-likelihood sample.
    pub map: Vec<f64>,
    /// Central 95% credible interval per dimension.
    pub credible_95: Vec<(f64, f64)>,
    pub log_evidence: f64,
    pub marginals: Vec<Histogram1d>,
    pub pairs: Vec<Histogram2d>,
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let b = ((x - lo) / (hi - lo) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Importance-weighted quantile.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= q * total {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty")]
}

pub fn posterior_summary(result: &NestedRunResult, prior: &PriorSpec) -> Result<PosteriorSummary> {
    if result.samples.is_empty() {
        return Err(Error::EmptyResult("no samples to summarize".into()));
    }
    let dim = prior.dim();
    if result.samples[0].theta.len() != dim {
        return Err(Error::Dimension(
            "samples do not match prior dimension".into(),
        ));
    }
    let weights = result.importance_weights();
    let total: f64 = weights.iter().sum();
    let support = prior.support();

    let mut mean = vec![0.0; dim];
    for (s, w) in result.samples.iter().zip(&weights) {
        for (m, x) in mean.iter_mut().zip(s.theta.as_slice()) {
            *m += w * x / total;
        }
    }
    let mut var = vec![0.0; dim];
    for (s, w) in result.samples.iter().zip(&weights) {
        for j in 0..dim {
            let d = s.theta[j] - mean[j];
            var[j] += w * d * d / total;
        }
    }
    let map = result
        .samples
        .iter()
        .max_by(|a, b| a.log_like.total_cmp(&b.log_like))
        .expect("non-empty")
        .theta
        .as_slice()
        .to_vec();

    let column = |j: usize| -> Vec<f64> { result.samples.iter().map(|s| s.theta[j]).collect() };
    let credible_95 = (0..dim)
        .map(|j| {
            let col = column(j);
            (
                weighted_quantile(&col, &weights, 0.025),
                weighted_quantile(&col, &weights, 0.975),
            )
        })
        .collect();

    let marginals = (0..dim)
        .map(|j| {
            let (lo, hi) = support[j];
            let mut hist = vec![0.0; HISTOGRAM_BINS];
            for (s, w) in result.samples.iter().zip(&weights) {
                hist[bin_of(s.theta[j], lo, hi, HISTOGRAM_BINS)] += w / total;
            }
            Histogram1d {
                dim: j,
                lo,
                hi,
                weights: hist,
            }
        })
        .collect();

    let mut pairs = Vec::new();
    for a in 0..dim {
        for b in (a + 1)..dim {
            let (ra, rb) = (support[a], support[b]);
            let mut grid = vec![vec![0.0; HISTOGRAM_BINS]; HISTOGRAM_BINS];
            for (s, w) in result.samples.iter().zip(&weights) {
                let ba = bin_of(s.theta[a], ra.0, ra.1, HISTOGRAM_BINS);
                let bb = bin_of(s.theta[b], rb.0, rb.1, HISTOGRAM_BINS);
                grid[ba][bb] += w / total;
            }
            pairs.push(Histogram2d {
                dims: (a, b),
                range_x: ra,
                range_y: rb,
                weights: grid,
            });
        }
    }

    Ok(PosteriorSummary {
        mean,
        std: var.into_iter().map(f64::sqrt).collect(),
        map,
        credible_95,
        log_evidence: result.log_evidence,
        marginals,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(dim: usize) -> PriorSpec {
        PriorSpec::uniform(vec![(0.0, 1.0); dim]).unwrap()
    }

    fn gaussian_loglike(theta: &ParamVector) -> Result<f64> {
        let s2 = 0.01;
        let r2: f64 = theta.as_slice().iter().map(|x| (x - 0.5) * (x - 0.5)).sum();
        Ok(-r2 / (2.0 * s2))
    }

    #[test]
    fn lhc_strata_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = lhc_sample(4, &unit_box(1), &mut rng).unwrap();
        let mut strata: Vec<usize> = pts.iter().map(|p| bin_of(p[0], 0.0, 1.0, 4)).collect();
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2, 3]);

        let prior = PriorSpec::uniform(vec![(0.0, 15.0)]).unwrap();
        let pts = lhc_sample(1, &prior, &mut rng).unwrap();
        assert!((0.0..=15.0).contains(&pts[0][0]));
    }

    #[test]
    fn lhc_occupancy_is_exactly_one() {
        let prior = PriorSpec::uniform(vec![(0.0, 15.0), (-2.0, 3.0)]).unwrap();
        let pts = lhc_sample(1000, &prior, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        for (j, (lo, hi)) in prior.support().into_iter().enumerate() {
            let mut counts = vec![0usize; 1000];
            for p in &pts {
                counts[bin_of(p[j], lo, hi, 1000)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "dimension {j}");
        }
    }

    #[test]
    fn lhc_rejects_gaussian_prior() {
        let prior = PriorSpec::gaussian(vec![0.0], vec![1.0]).unwrap();
        let err = lhc_sample(5, &prior, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedPrior(_)));
    }

    #[test]
    fn prior_transform_examples() {
        let box15 = PriorSpec::uniform(vec![(0.0, 15.0); 2]).unwrap();
        assert_eq!(
            prior_transform(&[0.5, 0.5], &box15).unwrap().as_slice(),
            &[7.5, 7.5]
        );
        let b = PriorSpec::uniform(vec![(0.2, 5.0)]).unwrap();
        assert_eq!(prior_transform(&[0.0], &b).unwrap()[0], 0.2);
        let g = PriorSpec::gaussian(vec![0.0], vec![1.0]).unwrap();
        // Phi(1) = 0.8413447
        assert_abs_diff_eq!(
            prior_transform(&[0.8413], &g).unwrap()[0],
            1.0,
            epsilon = 2e-4
        );
        assert_abs_diff_eq!(
            prior_transform(&[0.0], &g).unwrap()[0],
            -6.0,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(prior_transform(&[1.0], &g).unwrap()[0], 6.0, epsilon = 1e-6);
        assert!(matches!(prior_transform(&[1.2], &b), Err(Error::Domain(_))));
    }

    #[test]
    fn ellipsoid_of_square_corners() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 2.0],
            vec![2.0, 2.0],
        ];
        let e = fit_bounding_ellipsoid(&pts, 1.0).unwrap();
        assert_abs_diff_eq!(e.center()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.center()[1], 1.0, epsilon = 1e-12);
        let max = pts.iter().map(|p| e.mahalanobis_sq(p)).fold(0.0, f64::max);
        assert!(max <= 1.0 + 1e-12);
        assert_abs_diff_eq!(max, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ellipsoid_enlargement() {
        assert_abs_diff_eq!(
            enlargement_factor(0.8, 2),
            1.118_033_988_749_895,
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random(), rng.random::<f64>() * 3.0])
            .collect();
        let tight = fit_bounding_ellipsoid(&pts, 1.0).unwrap();
        let loose = fit_bounding_ellipsoid(&pts, 0.8).unwrap();
        let ratio = (loose.shape().determinant() / tight.shape().determinant()).sqrt();
        assert_abs_diff_eq!(ratio, 1.25, epsilon = 1e-9);
        for p in &pts {
            assert!(loose.mahalanobis_sq(p) <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn ellipsoid_samples_stay_inside() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.3, 1.0],
            vec![0.9, 0.8],
            vec![0.5, 0.4],
        ];
        let e = fit_bounding_ellipsoid(&pts, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(e.mahalanobis_sq(&e.sample(&mut rng)) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn ellipsoid_degenerate_inputs() {
        let collinear: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        // jitter rescues an exactly rank-deficient cloud
        assert!(fit_bounding_ellipsoid(&collinear, 0.8).is_ok());
        let same = vec![vec![1.0, 1.0]; 5];
        assert!(matches!(
            fit_bounding_ellipsoid(&same, 0.8),
            Err(Error::DegenerateLiveSet(_))
        ));
        assert!(matches!(
            fit_bounding_ellipsoid(&[vec![0.0, 0.0], vec![1.0, 1.0]], 0.8),
            Err(Error::DegenerateLiveSet(_))
        ));
    }

    #[test]
    fn draw_constrained_contracts() {
        let prior = unit_box(2);
        let pts = vec![
            vec![0.4, 0.4],
            vec![0.6, 0.4],
            vec![0.4, 0.6],
            vec![0.6, 0.6],
            vec![0.5, 0.5],
        ];
        let e = fit_bounding_ellipsoid(&pts, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ll = |_: &ParamVector| Ok(0.0);
        let d = draw_constrained(&e, &prior, &mut ll, f64::NEG_INFINITY, &mut rng, 10).unwrap();
        assert_eq!(d.n_evals, 1);

        let mut ll = gaussian_loglike;
        let d = draw_constrained(&e, &prior, &mut ll, -1.0, &mut rng, 10_000).unwrap();
        assert!(d.log_like > -1.0);

        let mut never = |_: &ParamVector| Ok(-10.0);
        let err = draw_constrained(&e, &prior, &mut never, 0.0, &mut rng, 50).unwrap_err();
        assert!(matches!(
            err,
            Error::ConstrainedDrawFailure { tries: 50, .. }
        ));
    }

    #[test]
    fn shrinkage_and_first_weight() {
        let cfg = NsConfig {
            n_live: 50,
            seed: 1,
            ..NsConfig::default()
        };
        let res = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        let n = 50.0f64;
        assert_abs_diff_eq!(
            (-(50.0 / n)).exp(),
            0.367_879_441_171_442_3,
            epsilon = 1e-15
        );
        let w1 = 0.5 * (1.0 - (-2.0 / n).exp());
        assert_abs_diff_eq!(res.samples[0].log_weight.exp(), w1, epsilon = 1e-15);
        let w2 = 0.5 * ((-1.0 / n).exp() - (-3.0 / n).exp());
        assert_abs_diff_eq!(res.samples[1].log_weight.exp(), w2, epsilon = 1e-15);
    }

    #[test]
    fn run_invariants() {
        let cfg = NsConfig {
            n_live: 100,
            seed: 3,
            ..NsConfig::default()
        };
        let res = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        let total: f64 = res.importance_weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        assert!(res
            .samples
            .windows(2)
            .all(|w| w[0].log_like <= w[1].log_like));
        assert!(res
            .dead()
            .windows(2)
            .all(|w| w[1].log_weight < w[0].log_weight));
        assert!(res.samples.iter().all(|s| s.log_weight.is_finite()));
        assert_eq!(res.samples.len(), res.iterations + res.n_live);
        assert!(res.n_like_evals >= res.iterations + res.n_live);
        assert!(res.converged);
    }

    #[test]
    fn run_is_reproducible() {
        let cfg = NsConfig {
            n_live: 60,
            seed: 17,
            ..NsConfig::default()
        };
        let a = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        let b = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        assert_eq!(a.log_evidence.to_bits(), b.log_evidence.to_bits());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn evidence_of_gaussian_in_box() {
        // ln(2 pi 0.01 * P(box)) from mpmath
        let truth = -2.767_294_266_185_362;
        let cfg = NsConfig {
            n_live: 300,
            seed: 7,
            ..NsConfig::default()
        };
        let res = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        assert!((res.log_evidence - truth).abs() < 3.0 * res.log_evidence_error());
    }

    #[test]
    fn remaining_evidence_criterion_runs_longer() {
        let base = NsConfig {
            n_live: 100,
            seed: 5,
            ..NsConfig::default()
        };
        let strict = NsConfig {
            termination: Termination::RemainingEvidence,
            tol: 0.01,
            ..base.clone()
        };
        let a = nested_sampling(gaussian_loglike, &unit_box(2), &base).unwrap();
        let b = nested_sampling(gaussian_loglike, &unit_box(2), &strict).unwrap();
        assert!(b.iterations > a.iterations);
    }

    #[test]
    fn max_iter_stops_early() {
        let cfg = NsConfig {
            n_live: 20,
            max_iter: 5,
            ..NsConfig::default()
        };
        let res = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        assert_eq!(res.iterations, 5);
        assert!(!res.converged);
        let total: f64 = res.importance_weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_likelihood_is_rejected() {
        let cfg = NsConfig {
            n_live: 10,
            ..NsConfig::default()
        };
        let err = nested_sampling(|_| Ok(f64::NAN), &unit_box(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidLikelihood { .. }));
    }

    #[test]
    fn progress_records_are_emitted() {
        let cfg = NsConfig {
            n_live: 20,
            seed: 2,
            ..NsConfig::default()
        };
        let mut records = Vec::new();
        let res = nested_sampling_with_progress(gaussian_loglike, &unit_box(2), &cfg, |r| {
            records.push(*r)
        })
        .unwrap();
        assert_eq!(records.len(), res.iterations);
        assert_eq!(records[0].iteration, 1);
        assert_abs_diff_eq!(records[0].log_volume, -1.0 / 20.0, epsilon = 1e-15);
    }

    fn synthetic_result(thetas: &[f64], log_importance: &[f64]) -> NestedRunResult {
        NestedRunResult {
            samples: thetas
                .iter()
                .zip(log_importance)
                .enumerate()
                .map(|(i, (t, li))| WeightedSample {
                    theta: ParamVector::new(vec![*t, *t]).unwrap(),
                    log_like: i as f64,
                    log_weight: 0.0,
                    log_importance: *li,
                })
                .collect(),
            log_evidence: 0.0,
            information: 0.0,
            iterations: thetas.len(),
            n_live: 1,
            n_like_evals: thetas.len(),
            converged: true,
            wall_time: 0.0,
        }
    }

    #[test]
    fn resample_degenerate_weights() {
        let res = synthetic_result(
            &[1.0, 2.0, 3.0],
            &[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
        );
        let draws = posterior_resample(&res, 25, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(draws.iter().all(|d| d.as_slice() == [2.0, 2.0]));
        let empty = synthetic_result(&[], &[]);
        assert!(matches!(
            posterior_resample(&empty, 3, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn resample_uniform_weights_chi_square() {
        let k = 5;
        let thetas: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let res = synthetic_result(&thetas, &vec![-(k as f64).ln(); k]);
        let n = 50_000;
        let draws = posterior_resample(&res, n, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut counts = vec![0.0; k];
        for d in &draws {
            counts[d[0] as usize] += 1.0;
        }
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        // chi-square 0.99 quantile with 4 degrees of freedom
        assert!(chi2 < 13.2767, "chi2 = {chi2}");
    }

    #[test]
    fn resampled_points_come_from_the_run() {
        let cfg = NsConfig {
            n_live: 40,
            seed: 9,
            ..NsConfig::default()
        };
        let res = nested_sampling(gaussian_loglike, &unit_box(2), &cfg).unwrap();
        let draws = posterior_resample(&res, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for d in draws {
            assert!(res.samples.iter().any(|s| s.theta == d));
        }
    }

    #[test]
    fn summary_means() {
        let prior = PriorSpec::uniform(vec![(0.0, 10.0); 2]).unwrap();
        let one = synthetic_result(&[3.0], &[0.0]);
        let s = posterior_summary(&one, &prior).unwrap();
        assert_eq!(s.mean, vec![3.0, 3.0]);
        assert_eq!(s.marginals.len(), 2);
        assert_eq!(s.pairs.len(), 1);
        assert_eq!(s.pairs[0].weights.len(), HISTOGRAM_BINS);

        let two = synthetic_result(&[2.0, 6.0], &[0.5f64.ln(), 0.5f64.ln()]);
        let s = posterior_summary(&two, &prior).unwrap();
        assert_abs_diff_eq!(s.mean[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std[0], 2.0, epsilon = 1e-12);
        let mass: f64 = s.marginals[0].weights.iter().sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        assert_eq!(s.map, vec![6.0, 6.0]);
    }

    #[test]
    fn log_space_helpers() {
        assert_abs_diff_eq!(log_add_exp(0.0, 0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert_abs_diff_eq!(
            log_sum_exp(&[1000.0, 1000.0]),
            1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
    }
}
