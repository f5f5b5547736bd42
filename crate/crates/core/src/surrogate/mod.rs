//! Learned stand-ins for the simulator: the cascaded per-timestep network
//! (DRN) plus two comparison baselines, a flat non-cascading network and a
//! weight-shared single-layer recurrent cell.

mod baselines;

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood_values, ObservedData, OutputSeries, ParamVector};
use crate::neuralnet::{
    build_component_net, fit_network, hstack, AdamConfig, FitConfig, Network, Scaler,
};
use crate::seeding::derive_rng;

pub use baselines::{NcDnn, StdRnn, NCDNN_ETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Lhc,
    Posterior,
}

/// Paired simulator inputs and outputs used to fit a surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    inputs: Vec<ParamVector>,
    outputs: Vec<OutputSeries>,
    sources: Vec<SampleSource>,
}

impl TrainingSet {
    pub fn new(
        inputs: Vec<ParamVector>,
        outputs: Vec<OutputSeries>,
        sources: Vec<SampleSource>,
    ) -> Result<Self> {
        if inputs.len() != outputs.len() || inputs.len() != sources.len() {
            return Err(Error::Dimension(format!(
                "{} inputs, {} outputs, {} source tags",
                inputs.len(),
                outputs.len(),
                sources.len()
            )));
        }
        if let (Some(x0), Some(z0)) = (inputs.first(), outputs.first()) {
            let shape = (z0.time_steps(), z0.features());
            if inputs.iter().any(|x| x.len() != x0.len()) {
                return Err(Error::Dimension(
                    "parameter vectors differ in length".into(),
                ));
            }
            if outputs
                .iter()
                .any(|z| (z.time_steps(), z.features()) != shape)
            {
                return Err(Error::Dimension("output series differ in shape".into()));
            }
        }
        Ok(Self {
            inputs,
            outputs,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[ParamVector] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[OutputSeries] {
        &self.outputs
    }

    pub fn sources(&self) -> &[SampleSource] {
        &self.sources
    }

    pub fn count_source(&self, source: SampleSource) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    /// `(J, T, M)`; errors on an empty set.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        match (self.inputs.first(), self.outputs.first()) {
            (Some(x), Some(z)) => Ok((x.len(), z.time_steps(), z.features())),
            _ => Err(Error::InsufficientData("training set is empty".into())),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            outputs: indices.iter().map(|&i| self.outputs[i].clone()).collect(),
            sources: indices.iter().map(|&i| self.sources[i]).collect(),
        }
    }

    /// First `n` records.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    pub fn append(&mut self, other: TrainingSet) -> Result<()> {
        let mut inputs = std::mem::take(&mut self.inputs);
        let mut outputs = std::mem::take(&mut self.outputs);
        let mut sources = std::mem::take(&mut self.sources);
        inputs.extend(other.inputs);
        outputs.extend(other.outputs);
        sources.extend(other.sources);
        *self = Self::new(inputs, outputs, sources)?;
        Ok(())
    }

    /// `n x J` matrix of inputs.
    pub fn input_matrix(&self) -> Array2<f64> {
        let j = self.inputs.first().map_or(0, ParamVector::len);
        Array2::from_shape_fn((self.len(), j), |(i, k)| self.inputs[i][k])
    }

    /// `n x (T*M)` matrix of outputs, each row in `(t, m)` row-major order.
    pub fn output_matrix(&self) -> Array2<f64> {
        let width = self.outputs.first().map_or(0, |z| z.values().len());
        let mut out = Array2::zeros((self.len(), width));
        for (mut row, z) in out.rows_mut().into_iter().zip(&self.outputs) {
            row.assign(&ndarray::ArrayView1::from(
                z.values().as_slice().expect("standard layout"),
            ));
        }
        out
    }

    /// `n x M` targets of time step `t` (0-based).
    pub fn step_targets(&self, t: usize) -> Array2<f64> {
        let m = self.outputs.first().map_or(0, OutputSeries::features);
        Array2::from_shape_fn((self.len(), m), |(i, k)| self.outputs[i].get(t, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub complexity_eta: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            minibatch: 20,
            complexity_eta: 15,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch == 0 || self.complexity_eta == 0 {
            return Err(Error::Config(
                "epochs, minibatch and complexity_eta must be >= 1".into(),
            ));
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0)
        {
            return Err(Error::Config("invalid Adam settings".into()));
        }
        Ok(())
    }

    pub(crate) fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            minibatch: self.minibatch,
            adam: self.adam,
        }
    }
}

/// Anything that maps a parameter vector to a `T x M` output series.
pub trait Surrogate: Send + Sync {
    fn input_dim(&self) -> usize;
    fn time_steps(&self) -> usize;
    fn features(&self) -> usize;

    /// Predictions for each row of `thetas`, flattened to `T*M` columns in
    /// `(t, m)` row-major order.
    fn predict_batch(&self, thetas: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// The fitted model as a JSON document.
    fn model_json(&self) -> Result<String>;

    fn predict(&self, theta: &ParamVector) -> Result<OutputSeries> {
        let row = ArrayView2::from_shape((1, theta.len()), theta.as_slice())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let flat = self.predict_batch(row)?;
        OutputSeries::from_flat(
            self.time_steps(),
            self.features(),
            flat.into_raw_vec_and_offset().0,
        )
    }
}

pub(crate) fn check_theta_width(thetas: &ArrayView2<f64>, j: usize) -> Result<()> {
    if thetas.ncols() != j {
        return Err(Error::Dimension(format!(
            "surrogate expects {j} parameters, got {}",
            thetas.ncols()
        )));
    }
    Ok(())
}

/// Gaussian log-likelihood of the surrogate's prediction at `theta`.
pub fn surrogate_loglike(
    model: &dyn Surrogate,
    theta: &ParamVector,
    obs: &ObservedData,
) -> Result<f64> {
    let z = model.predict(theta)?;
    log_likelihood_values(z.values(), obs)
}

/// Cascade of `T` component networks. Component `t` sees the standardized
/// parameters next to the previous component's standardized prediction (zeros
/// for the first step) and emits the standardized outputs of step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrnSurrogate {
    components: Vec<Network>,
    input_scaler: Scaler,
    output_scalers: Vec<Scaler>,
    j: usize,
    m: usize,
    t: usize,
    config: TrainConfig,
    #[serde(default)]
    loss_history: Vec<Vec<f64>>,
}

impl DrnSurrogate {
    pub fn components(&self) -> &[Network] {
        &self.components
    }

    pub fn input_scaler(&self) -> &Scaler {
        &self.input_scaler
    }

    pub fn output_scalers(&self) -> &[Scaler] {
        &self.output_scalers
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Per-component training loss of every epoch.
    pub fn loss_history(&self) -> &[Vec<f64>] {
        &self.loss_history
    }

    pub fn num_params(&self) -> usize {
        self.components.iter().map(Network::num_params).sum()
    }

    fn check(&self) -> Result<()> {
        if self.components.len() != self.t || self.output_scalers.len() != self.t || self.t == 0 {
            return Err(Error::Inconsistent(
                "component or scaler count differs from T".into(),
            ));
        }
        if self.input_scaler.width() != self.j {
            return Err(Error::Inconsistent(
                "input scaler width differs from J".into(),
            ));
        }
        for (net, sc) in self.components.iter().zip(&self.output_scalers) {
            if net.input_width() != self.j + self.m
                || net.output_width() != self.m
                || sc.width() != self.m
            {
                return Err(Error::Inconsistent(
                    "component widths differ from (J+M, M)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl Surrogate for DrnSurrogate {
    fn model_json(&self) -> Result<String> {
        self.to_json()
    }

    fn input_dim(&self) -> usize {
        self.j
    }

    fn time_steps(&self) -> usize {
        self.t
    }

    fn features(&self) -> usize {
        self.m
    }

    fn predict_batch(&self, thetas: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_theta_width(&thetas, self.j)?;
        let x = self.input_scaler.apply(thetas)?;
        let mut prev = Array2::zeros((x.nrows(), self.m));
        let mut out = Array2::zeros((x.nrows(), self.t * self.m));
        for (step, (net, sc)) in self.components.iter().zip(&self.output_scalers).enumerate() {
            let pred = net.predict(hstack(x.view(), prev.view())?.view())?;
            out.slice_mut(s![.., step * self.m..(step + 1) * self.m])
                .assign(&sc.invert(pred.view())?);
            prev = pred;
        }
        Ok(out)
    }
}

pub(crate) fn check_training_data(
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    let dims = data.dims()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 records, got {}",
            data.len()
        )));
    }
    Ok(dims)
}

/// Trains the cascade one step at a time; step `t + 1` is fed the frozen
/// inference predictions of step `t` on the training inputs.
pub fn drn_train(data: &TrainingSet, cfg: &TrainConfig) -> Result<DrnSurrogate> {
    let (j, t, m) = check_training_data(data, cfg)?;
    let thetas = data.input_matrix();
    let input_scaler = Scaler::fit(thetas.view())?;
    let x = input_scaler.apply(thetas.view())?;
    let mut prev = Array2::zeros((x.nrows(), m));
    let mut components = Vec::with_capacity(t);
    let mut output_scalers = Vec::with_capacity(t);
    let mut loss_history = Vec::with_capacity(t);
    for step in 0..t {
        let targets = data.step_targets(step);
        let scaler = Scaler::fit(targets.view())?;
        let y = scaler.apply(targets.view())?;
        let inputs = hstack(x.view(), prev.view())?;
        let mut rng = derive_rng(cfg.seed, &format!("drn-component-{step}"));
        let mut net = build_component_net(j, m, cfg.complexity_eta, &mut rng)?;
        let history = fit_network(
            &mut net,
            inputs.view(),
            y.view(),
            &cfg.fit_config(),
            &mut rng,
        )?;
        prev = net.predict(inputs.view())?;
        components.push(net);
        output_scalers.push(scaler);
        loss_history.push(history);
    }
    Ok(DrnSurrogate {
        components,
        input_scaler,
        output_scalers,
        j,
        m,
        t,
        config: *cfg,
        loss_history,
    })
}

pub fn drn_predict(model: &DrnSurrogate, theta: &ParamVector) -> Result<OutputSeries> {
    model.predict(theta)
}

/// Which surrogate family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Drn,
    Ncdnn,
    Stdrnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Drn => "drn",
            ModelKind::Ncdnn => "ncdnn",
            ModelKind::Stdrnn => "stdrnn",
        }
    }

    pub fn train(self, data: &TrainingSet, cfg: &TrainConfig) -> Result<Box<dyn Surrogate>> {
        Ok(match self {
            ModelKind::Drn => Box::new(drn_train(data, cfg)?),
            ModelKind::Ncdnn => Box::new(baselines::ncdnn_train(data, cfg)?),
            ModelKind::Stdrnn => Box::new(baselines::stdrnn_train(data, cfg)?),
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drn" => Ok(ModelKind::Drn),
            "ncdnn" => Ok(ModelKind::Ncdnn),
            "stdrnn" => Ok(ModelKind::Stdrnn),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

pub use baselines::{ncdnn_predict, ncdnn_train, stdrnn_predict, stdrnn_train};
