//! Fast built-in oracle checks used as a release gate.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::model::{ParamVector, PriorSpec};
use crate::neuralnet::{
    build_component_net, finite_diff_grad, mse_grad, Activation, LayerSpec, Mode, Network,
};
use crate::sampler::{lhc_sample, nested_sampling, NsConfig};
use crate::simulators::{toy_prior, Simulator, ToyConstants};
use crate::surrogate::{
    drn_train, DrnSurrogate, SampleSource, Surrogate, TrainConfig, TrainingSet,
};

/// Variance of the isotropic Gaussian used by the evidence oracle.
pub const ORACLE_VARIANCE: f64 = 0.01;

/// `ln Z` of the oracle likelihood under the uniform prior on the unit square:
/// `ln(2 pi s2 * P)` with `P` the Gaussian mass inside the box.
pub const ORACLE_LOG_EVIDENCE: f64 = -2.767_294_266_185_362;

/// Unnormalized isotropic Gaussian centred in the unit box.
pub fn oracle_loglike(theta: &ParamVector) -> Result<f64> {
    let r2: f64 = theta.as_slice().iter().map(|x| (x - 0.5) * (x - 0.5)).sum();
    Ok(-r2 / (2.0 * ORACLE_VARIANCE))
}

pub fn unit_square() -> PriorSpec {
    PriorSpec::uniform(vec![(0.0, 1.0); 2]).expect("valid bounds")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

impl CheckRecord {
    fn new(name: &str, passed: bool, measured: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            passed,
            measured: measured.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl std::fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name
        )?;
        for (k, v) in &self.measured {
            write!(f, " {k}={v:.6e}")?;
        }
        Ok(())
    }
}

/// Test hooks for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidationOptions {
    /// Perturb the analytic gradient before comparing it with finite
    /// differences.
    pub corrupt_gradient: bool,
}

/// One nested-sampling run on the oracle problem, compared against the
/// closed-form evidence at three reported standard errors.
pub fn check_evidence(seed: u64, n_live: usize) -> Result<CheckRecord> {
    let cfg = NsConfig {
        n_live,
        seed,
        ..NsConfig::default()
    };
    let run = nested_sampling(oracle_loglike, &unit_square(), &cfg)?;
    let gap = (run.log_evidence - ORACLE_LOG_EVIDENCE).abs();
    let bound = 3.0 * run.log_evidence_error();
    Ok(CheckRecord::new(
        "evidence",
        gap < bound,
        &[
            ("abs_lnz_error", gap),
            ("bound", bound),
            ("lnz", run.log_evidence),
            ("seed", seed as f64),
        ],
    ))
}

/// Importance weights sum to one and dead-point likelihoods never decrease.
pub fn check_ns_weights(seed: u64) -> Result<CheckRecord> {
    let cfg = NsConfig {
        n_live: 100,
        seed,
        ..NsConfig::default()
    };
    let run = nested_sampling(oracle_loglike, &unit_square(), &cfg)?;
    let total: f64 = run.importance_weights().iter().sum();
    let monotone = run
        .dead()
        .windows(2)
        .all(|w| w[0].log_like <= w[1].log_like);
    Ok(CheckRecord::new(
        "ns_weights",
        (total - 1.0).abs() <= 1e-9 && monotone,
        &[
            ("weight_sum_error", (total - 1.0).abs()),
            ("monotone", f64::from(u8::from(monotone))),
        ],
    ))
}

/// Relative error with an absolute floor for gradients near zero.
fn gradient_error(fd: f64, analytic: f64) -> f64 {
    let scale = fd.abs().max(analytic.abs());
    if scale < 1e-3 {
        if (fd - analytic).abs() < 1e-7 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (fd - analytic).abs() / scale
    }
}

/// Backpropagation against central differences at 100 random parameters of a
/// full component stack, dropout masks held fixed.
pub fn check_gradient(seed: u64, opts: ValidationOptions) -> Result<CheckRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = build_component_net(2, 1, 5, &mut rng)?;
    let x = Array2::from_shape_fn((5, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let t = Array2::from_shape_fn((5, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng)?;
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&cache, mse_grad(y.view(), t.view()).view(), &mut grads)?;
    if opts.corrupt_gradient {
        for g in &mut grads {
            *g *= 1.01;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let idx = rng.random_range(0..net.num_params());
        let fd = finite_diff_grad(&net, x.view(), t.view(), cache.masks(), idx, 1e-5)?;
        worst = worst.max(gradient_error(fd, grads[idx]));
    }
    Ok(CheckRecord::new(
        "gradient",
        worst < 1e-4,
        &[("max_rel_error", worst)],
    ))
}

/// Every stratum of every dimension holds exactly one design point.
pub fn check_lhc(seed: u64) -> Result<CheckRecord> {
    let n = 50;
    let prior = PriorSpec::uniform(vec![(0.0, 1.0), (-3.0, 5.0), (10.0, 10.5)])?;
    let points = lhc_sample(n, &prior, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut worst_deviation = 0usize;
    for (d, (lo, hi)) in prior.support().into_iter().enumerate() {
        let mut counts = vec![0usize; n];
        for p in &points {
            let bin = (((p.as_slice()[d] - lo) / (hi - lo)) * n as f64).floor() as usize;
            counts[bin.min(n - 1)] += 1;
        }
        worst_deviation =
            worst_deviation.max(counts.iter().map(|&c| c.abs_diff(1)).max().unwrap_or(0));
    }
    Ok(CheckRecord::new(
        "lhc_occupancy",
        worst_deviation == 0,
        &[("max_occupancy_deviation", worst_deviation as f64)],
    ))
}

/// Training-mode outputs average to the inference output within three
/// standard errors on every unit.
pub fn check_dropout(seed: u64) -> Result<CheckRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LayerSpec {
        fan_in: 3,
        fan_out: 6,
        activation: Activation::Tanh,
        dropout_after: true,
    };
    let net = Network::new(&[spec], &mut rng)?;
    let x = Array2::from_shape_fn((1, 3), |_| rng.sample::<f64, _>(StandardNormal));
    let reference = net.predict(x.view())?;
    let n = 10_000;
    let mut sum = [0.0; 6];
    let mut sum_sq = [0.0; 6];
    for _ in 0..n {
        let (y, _) = net.forward(x.view(), Mode::Train, &mut rng)?;
        for (u, v) in y.iter().enumerate() {
            sum[u] += v;
            sum_sq[u] += v * v;
        }
    }
    let mut worst_z: f64 = 0.0;
    for u in 0..6 {
        let mean = sum[u] / n as f64;
        let se = ((sum_sq[u] / n as f64 - mean * mean) / n as f64).sqrt();
        worst_z = worst_z.max((mean - reference[[0, u]]).abs() / se);
    }
    Ok(CheckRecord::new(
        "dropout_expectation",
        worst_z < 3.0,
        &[("max_z", worst_z)],
    ))
}

/// A small trained cascade reloaded from JSON predicts the same values.
pub fn check_serialization(seed: u64) -> Result<CheckRecord> {
    let sim = Simulator::bivariate(ToyConstants::default(), 4)?;
    let prior = toy_prior();
    let inputs = lhc_sample(40, &prior, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let outputs = inputs
        .iter()
        .map(|p| sim.simulate(p))
        .collect::<Result<Vec<_>>>()?;
    let data = TrainingSet::new(inputs.clone(), outputs, vec![SampleSource::Lhc; 40])?;
    let cfg = TrainConfig {
        epochs: 2,
        complexity_eta: 1,
        seed,
        ..TrainConfig::default()
    };
    let model = drn_train(&data, &cfg)?;
    let reloaded = DrnSurrogate::from_json(&model.to_json()?)?;
    let x = data.input_matrix();
    let a = model.predict_batch(x.view())?;
    let b = reloaded.predict_batch(x.view())?;
    let worst = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    Ok(CheckRecord::new(
        "serialization_round_trip",
        worst <= 1e-12,
        &[("max_abs_diff", worst)],
    ))
}

type Check = Box<dyn Fn() -> Result<CheckRecord>>;

/// Runs every check; evaluation errors count as failures.
pub fn run_all(seed: u64, opts: ValidationOptions) -> Vec<CheckRecord> {
    let checks: [(&str, Check); 6] = [
        ("evidence", Box::new(move || check_evidence(seed, 300))),
        ("ns_weights", Box::new(move || check_ns_weights(seed))),
        ("gradient", Box::new(move || check_gradient(seed, opts))),
        ("lhc_occupancy", Box::new(move || check_lhc(seed))),
        ("dropout_expectation", Box::new(move || check_dropout(seed))),
        (
            "serialization_round_trip",
            Box::new(move || check_serialization(seed)),
        ),
    ];
    checks
        .iter()
        .map(|(name, check)| {
            check().unwrap_or_else(|e| {
                let mut rec = CheckRecord::new(name, false, &[]);
                rec.name = format!("{name} (error: {e})");
                rec
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_constant_matches_closed_form() {
        // P = erf(0.5 / sqrt(2 s2))^2 for the centred Gaussian
        let s2 = ORACLE_VARIANCE;
        let p = statrs::function::erf::erf(0.5 / (2.0 * s2).sqrt()).powi(2);
        let ln_z = (2.0 * std::f64::consts::PI * s2 * p).ln();
        assert!((ln_z - ORACLE_LOG_EVIDENCE).abs() < 1e-12);
    }

    #[test]
    fn all_checks_pass() {
        for rec in run_all(1, ValidationOptions::default()) {
            assert!(rec.passed, "{rec}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let rec = check_gradient(
            1,
            ValidationOptions {
                corrupt_gradient: true,
            },
        )
        .unwrap();
        assert!(!rec.passed, "{rec}");
        assert!(rec.measured["max_rel_error"] > 1e-3);
    }

    #[test]
    fn evidence_record_reports_the_gap() {
        let rec = check_evidence(2, 100).unwrap();
        assert!(rec.measured.contains_key("abs_lnz_error"));
    }
}
