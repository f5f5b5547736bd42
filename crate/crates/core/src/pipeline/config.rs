use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, ParamVector, PriorSpec};
use crate::sampler::NsConfig;
use crate::seeding::derive_seed;
use crate::simulators::{
    multifeature_prior, toy_prior, Simulator, ToyConstants, MULTIFEATURE_TRUTH, TOY_TRUTH,
};
use crate::surrogate::{ModelKind, TrainConfig};

/// Where surrogate training inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleScheme {
    Lhc,
    Posterior,
    Mixed,
}

impl SampleScheme {
    pub fn name(self) -> &'static str {
        match self {
            SampleScheme::Lhc => "lhc",
            SampleScheme::Posterior => "posterior",
            SampleScheme::Mixed => "mixed",
        }
    }

    /// Whether the scheme needs a simulator-based nested-sampling run.
    pub fn uses_posterior(self) -> bool {
        self != SampleScheme::Lhc
    }
}

impl fmt::Display for SampleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SampleScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lhc" => Ok(SampleScheme::Lhc),
            "posterior" => Ok(SampleScheme::Posterior),
            "mixed" => Ok(SampleScheme::Mixed),
            other => Err(Error::Config(format!("unknown sample scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulatorKind {
    Bivariate,
    Multifeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub kind: SimulatorKind,
    pub time_steps: usize,
    /// Seconds slept on every real simulator evaluation.
    pub delay_per_call: f64,
    /// Toy constants; ignored by the multifeature model.
    pub phi: f64,
    pub eta_c: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        let c = ToyConstants::default();
        Self {
            kind: SimulatorKind::Bivariate,
            time_steps: 10,
            delay_per_call: 0.0,
            phi: c.phi,
            eta_c: c.eta_c,
        }
    }
}

impl SimulatorConfig {
    pub fn build(&self) -> Result<Simulator> {
        let sim = match self.kind {
            SimulatorKind::Bivariate => Simulator::bivariate(
                ToyConstants {
                    phi: self.phi,
                    eta_c: self.eta_c,
                },
                self.time_steps,
            )?,
            SimulatorKind::Multifeature => Simulator::multifeature(self.time_steps)?,
        };
        sim.with_delay(self.delay_per_call)
    }

    fn default_prior(&self) -> PriorSpec {
        match self.kind {
            SimulatorKind::Bivariate => toy_prior(),
            SimulatorKind::Multifeature => multifeature_prior(),
        }
    }

    fn default_truth(&self) -> Vec<f64> {
        match self.kind {
            SimulatorKind::Bivariate => TOY_TRUTH.to_vec(),
            SimulatorKind::Multifeature => MULTIFEATURE_TRUTH.to_vec(),
        }
    }
}

/// Everything one experiment needs. `prior` and `truth` default to the
/// simulator's reference values; section seeds are overwritten from the
/// master `seed` by [`ExperimentConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scheme: SampleScheme,
    pub n_train: usize,
    pub k_folds: usize,
    pub noise_frac: f64,
    pub model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    pub simulator: SimulatorConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    pub train: TrainConfig,
    pub phase1: NsConfig,
    pub phase3: NsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scheme: SampleScheme::Mixed,
            n_train: 2000,
            k_folds: 10,
            noise_frac: 0.05,
            model: ModelKind::Drn,
            truth: None,
            simulator: SimulatorConfig::default(),
            prior: None,
            train: TrainConfig::default(),
            phase1: NsConfig::default(),
            phase3: NsConfig::default(),
        }
    }
}

/// Sub-seeds are kept to 63 bits so they survive TOML's signed integers.
pub(crate) fn sub_seed(master: u64, label: &str) -> u64 {
    derive_seed(master, label) >> 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn prior_spec(&self) -> PriorSpec {
        self.prior
            .clone()
            .unwrap_or_else(|| self.simulator.default_prior())
    }

    pub fn truth_vector(&self) -> Vec<f64> {
        self.truth
            .clone()
            .unwrap_or_else(|| self.simulator.default_truth())
    }

    /// Fills defaults, derives per-phase seeds from the master seed and
    /// validates the result.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.prior = Some(cfg.prior_spec());
        cfg.truth = Some(cfg.truth_vector());
        cfg.train.seed = sub_seed(cfg.seed, "train");
        cfg.phase1.seed = sub_seed(cfg.seed, "phase1");
        cfg.phase3.seed = sub_seed(cfg.seed, "phase3");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config(format!(
                "k_folds must be >= 2, got {}",
                self.k_folds
            )));
        }
        if self.n_train < self.k_folds {
            return Err(Error::Config(format!(
                "n_train ({}) must be at least k_folds ({})",
                self.n_train, self.k_folds
            )));
        }
        if self.scheme == SampleScheme::Mixed && !self.n_train.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "mixed scheme needs an even n_train, got {}",
                self.n_train
            )));
        }
        if !(self.noise_frac.is_finite() && self.noise_frac > 0.0) {
            return Err(Error::Config(format!(
                "noise_frac must be > 0, got {}",
                self.noise_frac
            )));
        }
        let sim = self.simulator.build()?;
        let prior = self.prior_spec();
        prior.validate()?;
        if prior.dim() != sim.spec().inputs {
            return Err(Error::Config(format!(
                "prior has {} dimensions, simulator takes {} inputs",
                prior.dim(),
                sim.spec().inputs
            )));
        }
        GroundTruth::new(ParamVector::new(self.truth_vector())?, &prior)?;
        self.train.validate()?;
        self.phase1.validate()?;
        self.phase3.validate()?;
        Ok(())
    }
}
