//! Small dense-network engine: affine layers with linear, PReLU or tanh
//! activations, inverted dropout, MSE loss, reverse-mode gradients and Adam.
//!
//! All parameters of a [`Network`] live in one flat buffer. Per layer the
//! layout is the row-major `fan_in x fan_out` weight matrix, then the bias,
//! then (PReLU layers only) one slope per output unit. Gradients use the same
//! layout, which is what the optimizer and the finite-difference oracle index.

mod adam;
mod scaler;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use scaler::Scaler;

pub const PRELU_INIT_SLOPE: f64 = 0.25;
pub const DROPOUT_KEEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Prelu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub dropout_after: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    spec: LayerSpec,
    w: usize,
    b: usize,
    slopes: Option<usize>,
}

impl Layout {
    fn end(&self) -> usize {
        match self.slopes {
            Some(a) => a + self.spec.fan_out,
            None => self.b + self.spec.fan_out,
        }
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Network {
    layers: Vec<Layout>,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            params: self.params.clone(),
            id: next_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Widths `[J+M, eta(J+M), 4 eta(J+M), 4 eta(J+M), eta M, M]` of one cascade
/// component.
pub fn component_widths(inputs: usize, outputs: usize, complexity_eta: usize) -> [usize; 6] {
    let base = complexity_eta * inputs;
    [
        inputs,
        base,
        4 * base,
        4 * base,
        complexity_eta * outputs,
        outputs,
    ]
}

/// Layer stack of one component: linear, PReLU, PReLU + dropout,
/// tanh + dropout, linear.
pub fn component_layers(widths: [usize; 6]) -> Vec<LayerSpec> {
    const SCHEDULE: [(Activation, bool); 5] = [
        (Activation::Linear, false),
        (Activation::Prelu, false),
        (Activation::Prelu, true),
        (Activation::Tanh, true),
        (Activation::Linear, false),
    ];
    SCHEDULE
        .iter()
        .enumerate()
        .map(|(i, &(activation, dropout_after))| LayerSpec {
            fan_in: widths[i],
            fan_out: widths[i + 1],
            activation,
            dropout_after,
        })
        .collect()
}

/// A cascade component taking `J` parameters plus `M` recurrent features and
/// emitting `M` outputs.
pub fn build_component_net<R: Rng + ?Sized>(
    j: usize,
    m: usize,
    complexity_eta: usize,
    rng: &mut R,
) -> Result<Network> {
    if j == 0 || m == 0 || complexity_eta == 0 {
        return Err(Error::Config(format!(
            "component sizes must be >= 1 (J={j}, M={m}, eta={complexity_eta})"
        )));
    }
    Network::new(
        &component_layers(component_widths(j + m, m, complexity_eta)),
        rng,
    )
}

/// Dropout scale masks (entries 0 or `1 / keep`) recorded by a training-mode
/// forward pass, one slot per layer.
pub type DropoutMasks = Vec<Option<Array2<f64>>>;

#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    generation: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: DropoutMasks,
}

impl ForwardCache {
    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let scale = 1.0 / DROPOUT_KEEP;
    let mut values = Vec::with_capacity(rows * cols);
    while values.len() < rows * cols {
        let bits = rng.next_u64();
        let take = (rows * cols - values.len()).min(64);
        values.extend((0..take).map(|k| scale * ((bits >> k) & 1) as f64));
    }
    Array2::from_shape_vec((rows, cols), values).expect("mask length")
}

impl Network {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(specs)?;
        for layout in net.layers.clone() {
            let LayerSpec {
                fan_in, fan_out, ..
            } = layout.spec;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[layout.w..layout.b] {
                *w = rng.random_range(-limit..limit);
            }
            if let Some(a) = layout.slopes {
                net.params[a..a + fan_out].fill(PRELU_INIT_SLOPE);
            }
        }
        Ok(net)
    }

    /// Network with every weight and bias zero (PReLU slopes still 0.25).
    pub fn zeroed(specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (i, spec) in specs.iter().enumerate() {
            if spec.fan_in == 0 || spec.fan_out == 0 {
                return Err(Error::Config(format!("layer {i} has a zero width")));
            }
            if i > 0 && specs[i - 1].fan_out != spec.fan_in {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs but the previous layer emits {}",
                    spec.fan_in,
                    specs[i - 1].fan_out
                )));
            }
            let w = offset;
            let b = w + spec.fan_in * spec.fan_out;
            let slopes = (spec.activation == Activation::Prelu).then_some(b + spec.fan_out);
            let layout = Layout {
                spec: *spec,
                w,
                b,
                slopes,
            };
            offset = layout.end();
            layers.push(layout);
        }
        let mut params = vec![0.0; offset];
        for layout in &layers {
            if let Some(a) = layout.slopes {
                params[a..a + layout.spec.fan_out].fill(PRELU_INIT_SLOPE);
            }
        }
        Ok(Self {
            layers,
            params,
            id: next_id(),
            generation: 0,
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].spec.fan_in];
        w.extend(self.layers.iter().map(|l| l.spec.fan_out));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").spec.fan_out
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access invalidates every cache taken before it.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    fn weights(&self, l: &Layout) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.spec.fan_in, l.spec.fan_out), &self.params[l.w..l.b])
            .expect("layout matches buffer")
    }

    fn bias(&self, l: &Layout) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.b..l.b + l.spec.fan_out])
    }

    fn slopes(&self, l: &Layout) -> Option<&[f64]> {
        l.slopes.map(|a| &self.params[a..a + l.spec.fan_out])
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: &Layout, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = self
            .bias(l)
            .broadcast((x.nrows(), l.spec.fan_out))
            .expect("bias broadcast")
            .to_owned();
        general_mat_mul(1.0, x, &self.weights(l), 1.0, &mut z);
        z
    }

    fn activate(&self, l: &Layout, z: &Array2<f64>) -> Array2<f64> {
        match l.spec.activation {
            Activation::Linear => z.clone(),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Prelu => {
                let slopes = self.slopes(l).expect("prelu layer has slopes");
                let mut a = z.clone();
                for row in a
                    .as_slice_mut()
                    .expect("contiguous")
                    .chunks_exact_mut(slopes.len())
                {
                    for (v, s) in row.iter_mut().zip(slopes) {
                        *v = v.max(0.0) + s * v.min(0.0);
                    }
                }
                a
            }
        }
    }

    /// Batched forward pass over the rows of `x`. Train mode samples fresh
    /// dropout masks from `rng`; infer mode applies no dropout and no scaling.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let masks = match mode {
            Mode::Infer => vec![None; self.layers.len()],
            Mode::Train => self
                .layers
                .iter()
                .map(|l| {
                    l.spec
                        .dropout_after
                        .then(|| dropout_mask(x.nrows(), l.spec.fan_out, rng))
                })
                .collect(),
        };
        self.forward_with_masks(x, masks)
    }

    /// Forward pass with caller-supplied dropout masks (`None` = no dropout).
    pub fn forward_with_masks(
        &self,
        x: ArrayView2<f64>,
        masks: DropoutMasks,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        if masks.len() != self.layers.len() {
            return Err(Error::Inconsistent(
                "one dropout slot per layer required".into(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (l, mask) in self.layers.iter().zip(&masks) {
            let z = self.affine(l, &current.view());
            let mut a = self.activate(l, &z);
            if let Some(mask) = mask {
                if mask.dim() != a.dim() {
                    return Err(Error::Inconsistent("dropout mask shape mismatch".into()));
                }
                a *= mask;
            }
            inputs.push(current);
            pre.push(z);
            current = a;
        }
        let cache = ForwardCache {
            net_id: self.id,
            generation: self.generation,
            inputs,
            pre,
            masks,
        };
        Ok((current, cache))
    }

    /// Inference over a batch without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current = x.to_owned();
        for l in &self.layers {
            let z = self.affine(l, &current.view());
            current = self.activate(l, &z);
        }
        Ok(current)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view =
            ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Writes `d loss / d params` into `grads` (same layout as
    /// [`Network::params`]) and returns `d loss / d input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        if cache.net_id != self.id || cache.generation != self.generation {
            return Err(Error::Inconsistent(
                "forward cache was produced by a different network state".into(),
            ));
        }
        if cache.inputs.len() != self.layers.len()
            || grad_out.dim() != (cache.batch_size(), self.output_width())
        {
            return Err(Error::Inconsistent(
                "gradient shape does not match the cached pass".into(),
            ));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer has {} slots, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let mut delta = grad_out.to_owned();
        for (k, l) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[k] {
                delta *= mask;
            }
            let z = &cache.pre[k];
            match l.spec.activation {
                Activation::Linear => {}
                Activation::Tanh => {
                    ndarray::Zip::from(&mut delta).and(z).for_each(|d, &z| {
                        let t = z.tanh();
                        *d *= 1.0 - t * t;
                    });
                }
                Activation::Prelu => {
                    let a = l.slopes.expect("prelu layer has slopes");
                    let slopes = &self.params[a..a + l.spec.fan_out];
                    let mut slope_grad = vec![0.0; l.spec.fan_out];
                    let width = l.spec.fan_out;
                    let zs = z.as_slice().expect("contiguous");
                    let ds = delta.as_slice_mut().expect("contiguous");
                    for (drow, zrow) in ds.chunks_exact_mut(width).zip(zs.chunks_exact(width)) {
                        for (((d, &zv), g), &s) in
                            drow.iter_mut().zip(zrow).zip(&mut slope_grad).zip(slopes)
                        {
                            *g += *d * zv.min(0.0);
                            *d *= if zv < 0.0 { s } else { 1.0 };
                        }
                    }
                    grads[a..a + l.spec.fan_out].copy_from_slice(&slope_grad);
                }
            }
            let x = &cache.inputs[k];
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (l.spec.fan_in, l.spec.fan_out),
                    &mut grads[l.w..l.b],
                )
                .expect("layout matches buffer");
                general_mat_mul(1.0, &x.t(), &delta, 0.0, &mut gw);
            }
            let gb = delta.sum_axis(Axis(0));
            grads[l.b..l.b + l.spec.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            // (W delta^T)^T: OpenBLAS is several times slower on the
            // equivalent delta W^T for short batches.
            let delta_t = delta.t().as_standard_layout().into_owned();
            let mut prev_t = Array2::zeros((l.spec.fan_in, delta.nrows()));
            general_mat_mul(1.0, &self.weights(l), &delta_t, 0.0, &mut prev_t);
            delta = prev_t.t().as_standard_layout().into_owned();
        }
        Ok(delta)
    }
}

/// Mean over all entries of the squared error.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "prediction is {:?}, target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("empty prediction".into()));
    }
    let sse: f64 = ndarray::Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, p, t| acc + (p - t) * (p - t));
    Ok(sse / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to the prediction.
pub fn mse_grad(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    let scale = 2.0 / pred.len() as f64;
    (&pred - &target) * scale
}

/// Central finite difference of the MSE loss with respect to parameter
/// `index`, holding the dropout masks fixed.
pub fn finite_diff_grad(
    net: &Network,
    x: ArrayView2<f64>,
    target: ArrayView2<f64>,
    masks: &DropoutMasks,
    index: usize,
    step: f64,
) -> Result<f64> {
    if index >= net.num_params() {
        return Err(Error::Dimension(format!(
            "parameter index {index} out of range"
        )));
    }
    let mut probe = net.clone();
    let original = probe.params[index];
    probe.params_mut()[index] = original + step;
    let plus = mse_loss(probe.forward_with_masks(x, masks.clone())?.0.view(), target)?;
    probe.params_mut()[index] = original - step;
    let minus = mse_loss(probe.forward_with_masks(x, masks.clone())?.0.view(), target)?;
    Ok((plus - minus) / (2.0 * step))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub adam: AdamConfig,
}

/// Mini-batch Adam on the MSE loss. Rows are reshuffled every epoch and the
/// final short batch is kept. Returns the mean training loss of each epoch.
pub fn fit_network<R: Rng + ?Sized>(
    net: &mut Network,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::InsufficientData(format!(
            "{} input rows vs {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if y.ncols() != net.output_width() {
        return Err(Error::Dimension(format!(
            "targets have {} columns, network emits {}",
            y.ncols(),
            net.output_width()
        )));
    }
    if cfg.epochs == 0 || cfg.minibatch == 0 {
        return Err(Error::Config("epochs and minibatch must be >= 1".into()));
    }
    let mut adam = AdamState::new(net.num_params(), cfg.adam);
    let mut grads = vec![0.0; net.num_params()];
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (pred, cache) = net.forward(xb.view(), Mode::Train, rng)?;
            total += mse_loss(pred.view(), yb.view())? * batch.len() as f64;
            net.backward(&cache, mse_grad(pred.view(), yb.view()).view(), &mut grads)?;
            adam_step(net.params_mut(), &grads, &mut adam)?;
        }
        let epoch_loss = total / x.nrows() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Inconsistent(format!(
                "training loss diverged to {epoch_loss}"
            )));
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

/// Serialized form: layer metadata plus row-major weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub dropout_after: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub widths: Vec<usize>,
    pub layers: Vec<LayerDoc>,
}

impl From<&Network> for NetworkDoc {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerDoc {
                fan_in: l.spec.fan_in,
                fan_out: l.spec.fan_out,
                activation: l.spec.activation,
                dropout_after: l.spec.dropout_after,
                weights: net.params[l.w..l.b].to_vec(),
                bias: net.params[l.b..l.b + l.spec.fan_out].to_vec(),
                slopes: net.slopes(l).map(<[f64]>::to_vec),
            })
            .collect();
        NetworkDoc {
            widths: net.widths(),
            layers,
        }
    }
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        let specs: Vec<LayerSpec> = doc
            .layers
            .iter()
            .map(|l| LayerSpec {
                fan_in: l.fan_in,
                fan_out: l.fan_out,
                activation: l.activation,
                dropout_after: l.dropout_after,
            })
            .collect();
        let mut net = Network::zeroed(&specs)?;
        if net.widths() != doc.widths {
            return Err(Error::Inconsistent(
                "widths disagree with layer list".into(),
            ));
        }
        for (layout, layer) in net.layers.clone().iter().zip(doc.layers) {
            let fo = layout.spec.fan_out;
            if layer.weights.len() != layout.spec.fan_in * fo || layer.bias.len() != fo {
                return Err(Error::Dimension(
                    "serialized layer has wrong parameter count".into(),
                ));
            }
            net.params[layout.w..layout.b].copy_from_slice(&layer.weights);
            net.params[layout.b..layout.b + fo].copy_from_slice(&layer.bias);
            match (layout.slopes, layer.slopes) {
                (Some(a), Some(s)) if s.len() == fo => net.params[a..a + fo].copy_from_slice(&s),
                (None, None) => {}
                _ => {
                    return Err(Error::Inconsistent(
                        "PReLU slopes missing or misplaced".into(),
                    ))
                }
            }
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain(
                "serialized network has non-finite parameters".into(),
            ));
        }
        Ok(net)
    }
}

impl Serialize for Network {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = NetworkDoc::deserialize(d)?;
        Network::try_from(doc).map_err(serde::de::Error::custom)
    }
}

/// Column-wise concatenation `[a | b]`.
pub fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()])
        .map_err(|e| Error::Dimension(e.to_string()))
}

#[cfg(test)]
mod tests;
