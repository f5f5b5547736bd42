//! Deterministic forward models `theta -> Z_theta` and the noise model used to
//! manufacture observed data from them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObservedData, OutputSeries, ParamVector, PriorSpec};

/// Constants of the bivariate toy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConstants {
    pub phi: f64,
    pub eta_c: f64,
}

impl Default for ToyConstants {
    fn default() -> Self {
        Self {
            phi: 0.1,
            eta_c: 5.0,
        }
    }
}

const MULTIFEATURE_INPUTS: usize = 8;
const MULTIFEATURE_FEATURES: usize = 6;
const MULTIFEATURE_GAMMA: f64 = 0.3;

/// Prior bounds of the 8-parameter stand-in.
pub const MULTIFEATURE_BOUNDS: [(f64, f64); 8] = [
    (0.2, 5.0),
    (0.2, 5.0),
    (0.2, 5.0),
    (0.1, 1.0),
    (0.1, 1.0),
    (0.75, 1.25),
    (0.75, 1.25),
    (0.75, 1.25),
];

/// Ground truth used with the 8-parameter stand-in.
pub const MULTIFEATURE_TRUTH: [f64; 8] = [1.21, 0.3, 3.0, 0.26, 0.64, 1.0, 0.8, 1.2];

pub const TOY_BOUNDS: [(f64, f64); 2] = [(0.0, 15.0), (0.0, 15.0)];
pub const TOY_TRUTH: [f64; 2] = [10.0, 10.0];

pub fn toy_prior() -> PriorSpec {
    PriorSpec::UniformBox {
        bounds: TOY_BOUNDS.to_vec(),
    }
}

pub fn multifeature_prior() -> PriorSpec {
    PriorSpec::UniformBox {
        bounds: MULTIFEATURE_BOUNDS.to_vec(),
    }
}

/// `z_t = cos(phi (theta_1 - t - eta_c)) * cos(phi (theta_2 - t - eta_c))` for `t = 1..=T`.
pub fn simulate_bivariate(
    theta: &ParamVector,
    constants: ToyConstants,
    time_steps: usize,
) -> Result<OutputSeries> {
    if theta.len() != 2 {
        return Err(Error::Dimension(format!(
            "bivariate simulator takes 2 inputs, got {}",
            theta.len()
        )));
    }
    if time_steps == 0 {
        return Err(Error::Dimension("time_steps must be at least 1".into()));
    }
    let ToyConstants { phi, eta_c } = constants;
    let flat = (1..=time_steps)
        .map(|t| {
            let t = t as f64;
            (phi * (theta[0] - t - eta_c)).cos() * (phi * (theta[1] - t - eta_c)).cos()
        })
        .collect();
    OutputSeries::from_flat(time_steps, 1, flat)
}

/// Smooth decay-plus-oscillation stand-in with 8 inputs and 6 features:
/// `z_{t,m} = theta_m exp(-lambda_m t) + gamma theta_8 cos(omega_m t + theta_7)`
/// with `lambda_m = 0.1 m`, `omega_m = 0.2 + 0.05 m`, `gamma = 0.3`.
pub fn simulate_multifeature(theta: &ParamVector, time_steps: usize) -> Result<OutputSeries> {
    if theta.len() != MULTIFEATURE_INPUTS {
        return Err(Error::Dimension(format!(
            "multifeature simulator takes {MULTIFEATURE_INPUTS} inputs, got {}",
            theta.len()
        )));
    }
    if time_steps == 0 {
        return Err(Error::Dimension("time_steps must be at least 1".into()));
    }
    let mut out = Array2::zeros((time_steps, MULTIFEATURE_FEATURES));
    for ((t, m), z) in out.indexed_iter_mut() {
        let (tf, mf) = ((t + 1) as f64, (m + 1) as f64);
        let decay = theta[m] * (-0.1 * mf * tf).exp();
        let omega = 0.2 + 0.05 * mf;
        *z = decay + MULTIFEATURE_GAMMA * theta[7] * (omega * tf + theta[6]).cos();
    }
    OutputSeries::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub name: String,
    pub inputs: usize,
    pub features: usize,
    pub time_steps: usize,
    /// Artificial per-call slowdown in seconds.
    pub delay_per_call: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Model {
    Bivariate(ToyConstants),
    Multifeature,
}

/// A configured forward model.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    spec: SimulatorSpec,
    model: Model,
}

impl Simulator {
    pub fn bivariate(constants: ToyConstants, time_steps: usize) -> Result<Self> {
        Self::build("bivariate", 2, 1, time_steps, Model::Bivariate(constants))
    }

    pub fn multifeature(time_steps: usize) -> Result<Self> {
        Self::build(
            "multifeature",
            MULTIFEATURE_INPUTS,
            MULTIFEATURE_FEATURES,
            time_steps,
            Model::Multifeature,
        )
    }

    fn build(
        name: &str,
        inputs: usize,
        features: usize,
        time_steps: usize,
        model: Model,
    ) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::Config(
                "simulator time_steps must be at least 1".into(),
            ));
        }
        Ok(Self {
            spec: SimulatorSpec {
                name: name.to_string(),
                inputs,
                features,
                time_steps,
                delay_per_call: 0.0,
            },
            model,
        })
    }

    pub fn with_delay(mut self, seconds: f64) -> Result<Self> {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(Error::Config(format!(
                "delay_per_call must be >= 0, got {seconds}"
            )));
        }
        self.spec.delay_per_call = seconds;
        Ok(self)
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    /// Pure evaluation, without the configured delay.
    pub fn simulate(&self, theta: &ParamVector) -> Result<OutputSeries> {
        match self.model {
            Model::Bivariate(c) => simulate_bivariate(theta, c, self.spec.time_steps),
            Model::Multifeature => simulate_multifeature(theta, self.spec.time_steps),
        }
    }
}

/// Runs the simulator after sleeping its configured delay; returns the output
/// and the elapsed wall time in seconds.
pub fn timed_call(sim: &Simulator, theta: &ParamVector) -> Result<(OutputSeries, f64)> {
    let start = Instant::now();
    if sim.spec.delay_per_call > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(sim.spec.delay_per_call));
    }
    let z = sim.simulate(theta)?;
    Ok((z, start.elapsed().as_secs_f64()))
}

/// Builds noisy observed data from a noise-free output. Each feature gets
/// `sigma_m = noise_frac * mean_t |z_{t,m}|`, replicated across time.
pub fn make_observation<R: Rng + ?Sized>(
    z: &OutputSeries,
    noise_frac: f64,
    rng: &mut R,
) -> Result<ObservedData> {
    if !(noise_frac.is_finite() && noise_frac > 0.0) {
        return Err(Error::Config(format!(
            "noise_frac must be > 0, got {noise_frac}"
        )));
    }
    let values = z.values();
    let (t, m) = values.dim();
    let mut sigma_row = Vec::with_capacity(m);
    for feature in 0..m {
        let mean_abs = values.column(feature).iter().map(|v| v.abs()).sum::<f64>() / t as f64;
        if mean_abs == 0.0 {
            return Err(Error::DegenerateNoise { feature });
        }
        sigma_row.push(noise_frac * mean_abs);
    }
    let noise_sigma = Array2::from_shape_fn((t, m), |(_, j)| sigma_row[j]);
    let mut data = values.clone();
    for ((_, j), d) in data.indexed_iter_mut() {
        let xi: f64 = StandardNormal.sample(rng);
        *d += sigma_row[j] * xi;
    }
    ObservedData::new(data, noise_sigma)
}

/// Memoizing front end to a simulator, keyed by the exact bit pattern of
/// `theta`. Counts every request and every actual evaluation separately.
#[derive(Debug)]
pub struct CachedSimulator {
    sim: Simulator,
    cache: Mutex<HashMap<Vec<u64>, OutputSeries>>,
    calls: AtomicU64,
    evaluations: AtomicU64,
}

impl CachedSimulator {
    pub fn new(sim: Simulator) -> Self {
        Self {
            sim,
            cache: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn call(&self, theta: &ParamVector) -> Result<OutputSeries> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key: Vec<u64> = theta.as_slice().iter().map(|v| v.to_bits()).collect();
        if let Some(z) = self
            .cache
            .lock()
            .expect("simulator cache poisoned")
            .get(&key)
        {
            return Ok(z.clone());
        }
        let (z, _) = timed_call(&self.sim, theta)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.cache
            .lock()
            .expect("simulator cache poisoned")
            .insert(key, z.clone());
        Ok(z)
    }

    /// Number of requests served, cached or not.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Number of requests that actually ran the simulator.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}
