use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_theta_width, check_training_data, Surrogate, TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::model::{OutputSeries, ParamVector};
use crate::neuralnet::{
    adam_step, component_layers, component_widths, fit_network, hstack, mse_grad, mse_loss,
    Activation, AdamState, LayerSpec, Network, Scaler,
};
use crate::seeding::derive_rng;

/// Complexity factor used for the flat baseline.
pub const NCDNN_ETA: usize = 50;

/// One deep network from the parameters straight to all `T*M` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcDnn {
    net: Network,
    input_scaler: Scaler,
    output_scaler: Scaler,
    j: usize,
    m: usize,
    t: usize,
    config: TrainConfig,
    #[serde(default)]
    loss_history: Vec<f64>,
}

impl NcDnn {
    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }
}

impl Surrogate for NcDnn {
    fn model_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
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
        self.output_scaler
            .invert(self.net.predict(x.view())?.view())
    }
}

/// Uses `cfg.complexity_eta` as given; callers pick [`NCDNN_ETA`] for the
/// reference configuration.
pub fn ncdnn_train(data: &TrainingSet, cfg: &TrainConfig) -> Result<NcDnn> {
    let (j, t, m) = check_training_data(data, cfg)?;
    let thetas = data.input_matrix();
    let outputs = data.output_matrix();
    let input_scaler = Scaler::fit(thetas.view())?;
    let output_scaler = Scaler::fit(outputs.view())?;
    let x = input_scaler.apply(thetas.view())?;
    let y = output_scaler.apply(outputs.view())?;
    let mut rng = derive_rng(cfg.seed, "ncdnn");
    let specs = component_layers(component_widths(j, t * m, cfg.complexity_eta));
    let mut net = Network::new(&specs, &mut rng)?;
    let loss_history = fit_network(&mut net, x.view(), y.view(), &cfg.fit_config(), &mut rng)?;
    Ok(NcDnn {
        net,
        input_scaler,
        output_scaler,
        j,
        m,
        t,
        config: *cfg,
        loss_history,
    })
}

pub fn ncdnn_predict(model: &NcDnn, theta: &ParamVector) -> Result<OutputSeries> {
    model.predict(theta)
}

/// Single tanh hidden layer shared across all time steps, fed its own
/// previous (standardized) prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdRnn {
    cell: Network,
    input_scaler: Scaler,
    output_scalers: Vec<Scaler>,
    j: usize,
    m: usize,
    t: usize,
    config: TrainConfig,
    #[serde(default)]
    loss_history: Vec<f64>,
}

impl StdRnn {
    pub fn cell(&self) -> &Network {
        &self.cell
    }

    pub fn input_scaler(&self) -> &Scaler {
        &self.input_scaler
    }

    pub fn output_scalers(&self) -> &[Scaler] {
        &self.output_scalers
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }
}

fn cell_layers(j: usize, m: usize, complexity_eta: usize) -> [LayerSpec; 2] {
    let hidden = complexity_eta * (j + m);
    [
        LayerSpec {
            fan_in: j + m,
            fan_out: hidden,
            activation: Activation::Tanh,
            dropout_after: false,
        },
        LayerSpec {
            fan_in: hidden,
            fan_out: m,
            activation: Activation::Linear,
            dropout_after: false,
        },
    ]
}

impl Surrogate for StdRnn {
    fn model_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
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
        for (step, sc) in self.output_scalers.iter().enumerate() {
            let pred = self.cell.predict(hstack(x.view(), prev.view())?.view())?;
            out.slice_mut(s![.., step * self.m..(step + 1) * self.m])
                .assign(&sc.invert(pred.view())?);
            prev = pred;
        }
        Ok(out)
    }
}

/// Backpropagation through the unrolled sequence; the loss is the sum over
/// steps of each step's MSE in standardized units.
pub fn stdrnn_train(data: &TrainingSet, cfg: &TrainConfig) -> Result<StdRnn> {
    let (j, t, m) = check_training_data(data, cfg)?;
    let thetas = data.input_matrix();
    let input_scaler = Scaler::fit(thetas.view())?;
    let x = input_scaler.apply(thetas.view())?;
    let mut output_scalers = Vec::with_capacity(t);
    let mut targets = Vec::with_capacity(t);
    for step in 0..t {
        let raw = data.step_targets(step);
        let sc = Scaler::fit(raw.view())?;
        targets.push(sc.apply(raw.view())?);
        output_scalers.push(sc);
    }

    let mut rng = derive_rng(cfg.seed, "stdrnn");
    let mut cell = Network::new(&cell_layers(j, m, cfg.complexity_eta), &mut rng)?;
    let mut adam = AdamState::new(cell.num_params(), cfg.adam);
    let mut grads = vec![0.0; cell.num_params()];
    let mut step_grads = vec![0.0; cell.num_params()];
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<Array2<f64>> = targets.iter().map(|y| y.select(Axis(0), batch)).collect();
            total += bptt(&cell, xb.view(), &yb, &mut grads, &mut step_grads)? * batch.len() as f64;
            adam_step(cell.params_mut(), &grads, &mut adam)?;
        }
        let epoch_loss = total / x.nrows() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Inconsistent(format!(
                "recurrent training loss diverged to {epoch_loss}"
            )));
        }
        loss_history.push(epoch_loss);
    }
    Ok(StdRnn {
        cell,
        input_scaler,
        output_scalers,
        j,
        m,
        t,
        config: *cfg,
        loss_history,
    })
}

/// Unrolls the cell over all steps, writes the gradient of the summed per-step
/// MSE into `grads` and returns that loss.
fn bptt(
    cell: &Network,
    x: ArrayView2<f64>,
    targets: &[Array2<f64>],
    grads: &mut [f64],
    scratch: &mut [f64],
) -> Result<f64> {
    let (n, j) = x.dim();
    let m = cell.output_width();
    let mut prev = Array2::zeros((n, m));
    let mut caches = Vec::with_capacity(targets.len());
    let mut preds = Vec::with_capacity(targets.len());
    let mut loss = 0.0;
    for y in targets {
        let (pred, cache) =
            cell.forward_with_masks(hstack(x, prev.view())?.view(), vec![None, None])?;
        loss += mse_loss(pred.view(), y.view())?;
        caches.push(cache);
        prev = pred.clone();
        preds.push(pred);
    }
    grads.fill(0.0);
    let mut carry = Array2::<f64>::zeros((n, m));
    for step in (0..targets.len()).rev() {
        let g = mse_grad(preds[step].view(), targets[step].view()) + &carry;
        let d_input = cell.backward(&caches[step], g.view(), scratch)?;
        for (a, b) in grads.iter_mut().zip(scratch.iter()) {
            *a += b;
        }
        carry = d_input.slice(s![.., j..]).to_owned();
    }
    Ok(loss)
}

#[cfg(test)]
pub(crate) fn bptt_gradient(
    cell: &Network,
    x: ArrayView2<f64>,
    targets: &[Array2<f64>],
) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; cell.num_params()];
    let mut scratch = vec![0.0; cell.num_params()];
    bptt(cell, x, targets, &mut grads, &mut scratch)?;
    Ok(grads)
}

pub fn stdrnn_predict(model: &StdRnn, theta: &ParamVector) -> Result<OutputSeries> {
    model.predict(theta)
}
