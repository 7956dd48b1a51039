//! Small softmax classifiers and the local mini-batch SGD loop run by each
//! simulated client.
//!
//! Two model kinds are supported: multinomial logistic regression and a
//! one-hidden-layer MLP with `tanh` activation. Both are trained with mean
//! softmax cross-entropy, and both expose exact analytic gradients so the
//! training path can be checked against finite differences.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, TAG_EPOCH, TAG_INIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp1,
}

/// Architecture of a classifier. `hidden_dim` is ignored for logistic
/// regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            num_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1,
            input_dim,
            num_classes,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Contract("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Contract("num_classes must be at least 2".into()));
        }
        if self.kind == ModelKind::Mlp1 && self.hidden_dim == 0 {
            return Err(Error::Contract("hidden_dim must be positive for an MLP".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::LogisticRegression => (d + 1) * c,
            ModelKind::Mlp1 => (d + 1) * h + (h + 1) * c,
        }
    }

    pub fn layout(&self) -> Vec<TensorShape> {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::LogisticRegression => vec![
                TensorShape::new("weight", vec![c, d]),
                TensorShape::new("bias", vec![c]),
            ],
            ModelKind::Mlp1 => vec![
                TensorShape::new("hidden.weight", vec![h, d]),
                TensorShape::new("hidden.bias", vec![h]),
                TensorShape::new("output.weight", vec![c, h]),
                TensorShape::new("output.bias", vec![c]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl TensorShape {
    pub fn new(name: &str, dims: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            dims,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flat parameter vector together with the tensor layout it encodes.
///
/// All values are finite and the layout's element count always equals the
/// number of values; both are checked on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    values: Vec<f64>,
    layout: Vec<TensorShape>,
}

impl ModelParameters {
    pub fn new(values: Vec<f64>, layout: Vec<TensorShape>) -> Result<Self> {
        let expected: usize = layout.iter().map(TensorShape::len).sum();
        if expected != values.len() {
            return Err(Error::Contract(format!(
                "layout describes {expected} values but {} were given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    /// Single unnamed tensor; handy for aggregation of plain vectors.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let layout = vec![TensorShape::new("values", vec![values.len()])];
        Self::new(values, layout)
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[TensorShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    /// Replaces the values, keeping the layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(Error::Contract(
                "parameter layout does not match model spec".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParameters> {
    spec.validate()?;
    let mut rng = rng_for(seed, &[TAG_INIT]);
    let mut values = Vec::with_capacity(spec.param_count());
    for tensor in spec.layout() {
        if tensor.dims.len() == 2 {
            let (fan_out, fan_in) = (tensor.dims[0], tensor.dims[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-s, s).expect("glorot bound is positive");
            values.extend((0..tensor.len()).map(|_| dist.sample(&mut rng)));
        } else {
            values.extend(std::iter::repeat_n(0.0, tensor.len()));
        }
    }
    ModelParameters::new(values, spec.layout())
}

fn check_example(spec: &ModelSpec, ex: &LabeledExample) -> Result<()> {
    if ex.features.len() != spec.input_dim {
        return Err(Error::Contract(format!(
            "example has {} features, model expects {}",
            ex.features.len(),
            spec.input_dim
        )));
    }
    if ex.label >= spec.num_classes {
        return Err(Error::Contract(format!(
            "label {} out of range for {} classes",
            ex.label, spec.num_classes
        )));
    }
    Ok(())
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            hidden: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.num_classes],
            dhidden: vec![0.0; spec.hidden_dim],
        }
    }
}

/// Computes logits for `x` into `ws.logits` (and hidden activations for the
/// MLP).
fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], ws: &mut Workspace) {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    match spec.kind {
        ModelKind::LogisticRegression => {
            let (weight, bias) = w.split_at(c * d);
            for j in 0..c {
                let row = &weight[j * d..(j + 1) * d];
                ws.logits[j] = bias[j] + dot(row, x);
            }
        }
        ModelKind::Mlp1 => {
            let (w1, rest) = w.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for i in 0..h {
                ws.hidden[i] = (b1[i] + dot(&w1[i * d..(i + 1) * d], x)).tanh();
            }
            for j in 0..c {
                ws.logits[j] = b2[j] + dot(&w2[j * h..(j + 1) * h], &ws.hidden);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Turns `logits` into softmax probabilities in place and returns the
/// cross-entropy against `label`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = logits[label] - max;
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    let loss = total.ln() - shifted_label;
    for z in logits.iter_mut() {
        *z /= total;
    }
    loss
}

/// Accumulates the mean loss gradient of `batch` into `grad` (which is
/// overwritten) and returns the mean loss. Inputs must already be checked.
fn loss_grad_into<'a>(
    spec: &ModelSpec,
    w: &[f64],
    batch: impl ExactSizeIterator<Item = &'a LabeledExample>,
    grad: &mut [f64],
    ws: &mut Workspace,
) -> f64 {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for ex in batch {
        let x = &ex.features;
        forward(spec, w, x, ws);
        // logits now hold softmax(z); subtracting the one-hot gives dL/dz.
        loss += softmax_xent(&mut ws.logits, ex.label);
        ws.logits[ex.label] -= 1.0;
        let dz = &ws.logits;
        match spec.kind {
            ModelKind::LogisticRegression => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for j in 0..c {
                    for (g, xk) in gw[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += dz[j] * xk;
                    }
                    gb[j] += dz[j];
                }
            }
            ModelKind::Mlp1 => {
                let w2 = &w[h * d + h..h * d + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                ws.dhidden.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..c {
                    for i in 0..h {
                        gw2[j * h + i] += dz[j] * ws.hidden[i];
                        ws.dhidden[i] += dz[j] * w2[j * h + i];
                    }
                    gb2[j] += dz[j];
                }
                for i in 0..h {
                    let da = ws.dhidden[i] * (1.0 - ws.hidden[i] * ws.hidden[i]);
                    for (g, xk) in gw1[i * d..(i + 1) * d].iter_mut().zip(x) {
                        *g += da * xk;
                    }
                    gb1[i] += da;
                }
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    loss / n
}

/// Mean softmax cross-entropy over `batch` and its exact gradient.
pub fn forward_loss_grad(
    spec: &ModelSpec,
    params: &ModelParameters,
    batch: &[LabeledExample],
) -> Result<(f64, ModelParameters)> {
    spec.validate()?;
    params.check_spec(spec)?;
    if batch.is_empty() {
        return Err(Error::Contract("batch must not be empty".into()));
    }
    for ex in batch {
        check_example(spec, ex)?;
    }
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::new(spec);
    let loss = loss_grad_into(spec, params.values(), batch.iter(), &mut grad, &mut ws);
    Ok((loss, params.with_values(grad)?))
}

/// Mean loss only.
pub fn mean_loss(spec: &ModelSpec, params: &ModelParameters, data: &[LabeledExample]) -> Result<f64> {
    forward_loss_grad(spec, params, data).map(|(loss, _)| loss)
}

/// Knobs for one client's local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Proximal coefficient; zero gives plain SGD.
    pub prox_mu: f64,
    pub seed: u64,
}

/// Visiting order of `n` examples in the given epoch: a Fisher-Yates
/// shuffle of `0..n` keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[TAG_EPOCH, epoch as u64]));
    order
}

/// Mini-batch SGD from `start`, optionally with the proximal pull
/// `prox_mu * (w - anchor)` added to every gradient.
///
/// Returns the trained parameters and the example-weighted mean loss of
/// the final epoch (each batch's loss is measured before its step).
pub fn local_train(
    spec: &ModelSpec,
    start: &ModelParameters,
    data: &[LabeledExample],
    anchor: &ModelParameters,
    opts: &TrainOptions,
) -> Result<(ModelParameters, f64)> {
    spec.validate()?;
    start.check_spec(spec)?;
    if !anchor.same_layout(start) {
        return Err(Error::Contract("anchor layout differs from start".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("local training needs at least one example".into()));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::Contract("epochs and batch_size must be at least 1".into()));
    }
    if !(opts.prox_mu >= 0.0 && opts.prox_mu.is_finite()) {
        return Err(Error::Contract("prox_mu must be a non-negative finite number".into()));
    }
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(Error::Contract("lr must be a non-negative finite number".into()));
    }
    for ex in data {
        check_example(spec, ex)?;
    }

    let mut w = start.values().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut ws = Workspace::new(spec);
    let mut epoch_loss = 0.0;
    for epoch in 0..opts.epochs {
        let order = epoch_order(data.len(), opts.seed, epoch);
        epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch = chunk.iter().map(|&i| &data[i]);
            let loss = loss_grad_into(spec, &w, batch, &mut grad, &mut ws);
            epoch_loss += loss * chunk.len() as f64;
            if opts.prox_mu == 0.0 {
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= opts.lr * gi;
                }
            } else {
                for ((wi, gi), ai) in w.iter_mut().zip(&grad).zip(anchor.values()) {
                    *wi -= opts.lr * (gi + opts.prox_mu * (*wi - ai));
                }
            }
        }
        epoch_loss /= data.len() as f64;
    }
    let trained = start
        .with_values(w)
        .map_err(|_| Error::InvalidInput("local training diverged to non-finite weights".into()))?;
    Ok((trained, epoch_loss))
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ModelParameters, features: &[f64]) -> Result<usize> {
    params.check_spec(spec)?;
    if features.len() != spec.input_dim {
        return Err(Error::Contract("feature length does not match model".into()));
    }
    let mut ws = Workspace::new(spec);
    forward(spec, params.values(), features, &mut ws);
    Ok(argmax(&ws.logits))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `data` classified correctly.
pub fn evaluate_classifier(
    spec: &ModelSpec,
    params: &ModelParameters,
    data: &[LabeledExample],
) -> Result<f64> {
    spec.validate()?;
    params.check_spec(spec)?;
    if data.is_empty() {
        return Err(Error::Contract("evaluation set must not be empty".into()));
    }
    let mut ws = Workspace::new(spec);
    let mut correct = 0usize;
    for ex in data {
        check_example(spec, ex)?;
        forward(spec, params.values(), &ex.features, &mut ws);
        if argmax(&ws.logits) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
