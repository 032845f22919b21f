//! Joint wide-and-deep network.
//!
//! The wide part is a linear model over the active one-hot and cross-product
//! indices. The deep part concatenates the standardized dense values with
//! looked-up embedding rows and feeds them through ReLU layers. Both meet in
//! a single pre-activation `s = sum(w_wide[active]) + w_deep . a_last + b`,
//! which is passed through the logistic function for classification and
//! returned as-is for regression. Training is plain mini-batch SGD with
//! inverted dropout on hidden activations.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EncodedLoan, FeatureSchema};
use crate::seeded_rng;

/// Clamp applied to probabilities inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

impl LossKind {
    pub fn task(self) -> Task {
        match self {
            LossKind::CrossEntropy => Task::Classification,
            LossKind::MeanSquaredError => Task::Regression,
        }
    }
}

/// Which halves of the network are active. `Wide` is plain logistic /
/// linear regression over the wide indices; `Deep` is an MLP alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Components {
    Wide,
    Deep,
    WideAndDeep,
}

impl Components {
    pub fn has_wide(self) -> bool {
        matches!(self, Components::Wide | Components::WideAndDeep)
    }

    pub fn has_deep(self) -> bool {
        matches!(self, Components::Deep | Components::WideAndDeep)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Components::Wide => "wide",
            Components::Deep => "deep",
            Components::WideAndDeep => "wide_deep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wide" => Some(Components::Wide),
            "deep" => Some(Components::Deep),
            "wide_deep" | "wide&deep" | "widedeep" => Some(Components::WideAndDeep),
            _ => None,
        }
    }
}

/// How per-sample losses in a batch are combined before differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    pub loss: LossKind,
    pub components: Components,
    pub reduction: LossReduction,
    /// Fraction of the dataset held out for a validation curve; 0 disables it.
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn classification() -> Self {
        Self {
            steps: 1000,
            batch_size: 100,
            learning_rate: 0.002,
            dropout_rate: 0.2,
            hidden_layers: vec![100, 50, 10],
            seed: 0,
            loss: LossKind::CrossEntropy,
            components: Components::WideAndDeep,
            reduction: LossReduction::Sum,
            validation_fraction: 0.0,
        }
    }

    pub fn regression() -> Self {
        Self { loss: LossKind::MeanSquaredError, ..Self::classification() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig("dropout_rate must be in [0, 1)"));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidConfig("hidden layer widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(ModelError::InvalidConfig("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ModelError::InvalidConfig("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("encoding does not match the model shape: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite gradient or parameter at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("model was trained for {model:?}, called as {requested:?}")]
    TaskMismatch { model: Task, requested: Task },
    #[error("dataset has {rows} rows, fewer than batch size {batch}")]
    DatasetTooSmall { rows: usize, batch: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

/// A fully connected layer, weights row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Every learnable value of a wide-and-deep model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub task: Task,
    pub components: Components,
    pub dense_len: usize,
    /// One weight per wide index. Empty when the wide half is disabled.
    pub wide: Vec<f64>,
    pub embeddings: Vec<EmbeddingTable>,
    pub layers: Vec<DenseLayer>,
    /// Weights applied to the last deep activation.
    pub output: Vec<f64>,
    pub bias: f64,
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: EncodedLoan,
    /// 1/0 default label for classification, IRR for regression.
    pub target: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("std is positive and finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Random initial parameters: layer and output weights ~ N(0, 1/fan_in),
/// embedding entries ~ N(0, 1/dim), wide weights and biases zero.
pub fn init_params(schema: &FeatureSchema, config: &TrainConfig) -> ModelParams {
    let mut rng = seeded_rng(config.seed);
    let components = config.components;
    let wide = if components.has_wide() { vec![0.0; schema.wide_dim] } else { Vec::new() };
    let mut embeddings = Vec::new();
    let mut layers = Vec::new();
    let mut output = Vec::new();
    if components.has_deep() {
        for (spec, rows) in schema.embeddings.iter().zip(schema.embedding_vocab_sizes()) {
            let std = 1.0 / libm::sqrt(spec.dim as f64);
            embeddings.push(EmbeddingTable {
                rows,
                dim: spec.dim,
                values: gaussian(&mut rng, std, rows * spec.dim),
            });
        }
        let mut fan_in = schema.deep_input_dim();
        for &width in &config.hidden_layers {
            let std = 1.0 / libm::sqrt(fan_in as f64);
            layers.push(DenseLayer {
                inputs: fan_in,
                outputs: width,
                weights: gaussian(&mut rng, std, width * fan_in),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        output = gaussian(&mut rng, 1.0 / libm::sqrt(fan_in as f64), fan_in);
    }
    ModelParams {
        task: config.loss.task(),
        components,
        dense_len: schema.dense_len(),
        wide,
        embeddings,
        layers,
        output,
        bias: 0.0,
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + libm::exp(-s))
    } else {
        let e = libm::exp(s);
        e / (1.0 + e)
    }
}

/// Per-sample loss of a model output against its label.
pub fn loss(kind: LossKind, output: f64, label: f64) -> f64 {
    match kind {
        LossKind::CrossEntropy => {
            let p = output.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(label * libm::log(p) + (1.0 - label) * libm::log(1.0 - p))
        }
        LossKind::MeanSquaredError => (output - label) * (output - label),
    }
}

/// Derivative of `loss` with respect to the pre-activation `s`.
fn loss_grad_pre_activation(kind: LossKind, output: f64, label: f64) -> f64 {
    match kind {
        LossKind::CrossEntropy => {
            if output < PROB_CLAMP || output > 1.0 - PROB_CLAMP {
                0.0
            } else {
                output - label
            }
        }
        LossKind::MeanSquaredError => 2.0 * (output - label),
    }
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub deep_input: Vec<f64>,
    /// Pre-activations of each hidden layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// Post-ReLU, post-dropout activations of each hidden layer.
    pub activations: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit: 0 or 1/(1-p); all 1 without dropout.
    pub masks: Vec<Vec<f64>>,
    pub pre_activation: f64,
    pub output: f64,
}

pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng, dropout_rate: f64 },
}

impl ModelParams {
    pub fn deep_input_dim(&self) -> usize {
        self.dense_len + self.embeddings.iter().map(|e| e.dim).sum::<usize>()
    }

    fn check_shape(&self, input: &EncodedLoan) -> Result<(), ModelError> {
        if self.components.has_wide() && input.wide.active.iter().any(|&i| i >= self.wide.len()) {
            return Err(ModelError::ShapeMismatch("wide index out of range"));
        }
        if self.components.has_deep() {
            if input.deep.dense.len() != self.dense_len {
                return Err(ModelError::ShapeMismatch("dense length"));
            }
            if input.deep.embedding_ids.len() != self.embeddings.len() {
                return Err(ModelError::ShapeMismatch("embedding id count"));
            }
            if input
                .deep
                .embedding_ids
                .iter()
                .zip(&self.embeddings)
                .any(|(&id, t)| id >= t.rows)
            {
                return Err(ModelError::ShapeMismatch("embedding id out of range"));
            }
        }
        Ok(())
    }

    fn finish(&self, s: f64) -> f64 {
        match self.task {
            Task::Classification => sigmoid(s),
            Task::Regression => s,
        }
    }

    /// Inference path: no trace, no dropout.
    pub fn predict(&self, input: &EncodedLoan) -> Result<f64, ModelError> {
        self.check_shape(input)?;
        let mut s = self.bias;
        if self.components.has_wide() {
            s += input.wide.active.iter().map(|&i| self.wide[i]).sum::<f64>();
        }
        if self.components.has_deep() {
            let mut a = self.deep_input(input);
            for layer in &self.layers {
                a = layer_forward(layer, &a);
                for v in a.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            s += dot(&self.output, &a);
        }
        Ok(self.finish(s))
    }

    fn deep_input(&self, input: &EncodedLoan) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.deep_input_dim());
        x.extend_from_slice(&input.deep.dense);
        for (table, &id) in self.embeddings.iter().zip(&input.deep.embedding_ids) {
            x.extend_from_slice(table.row(id));
        }
        x
    }

    /// Forward pass recording everything backpropagation needs.
    pub fn forward_trace(
        &self,
        input: &EncodedLoan,
        mode: Mode<'_>,
    ) -> Result<ForwardTrace, ModelError> {
        self.check_shape(input)?;
        let mut trace = ForwardTrace::default();
        let mut s = self.bias;
        if self.components.has_wide() {
            s += input.wide.active.iter().map(|&i| self.wide[i]).sum::<f64>();
        }
        if self.components.has_deep() {
            trace.deep_input = self.deep_input(input);
            let (mut rng, rate) = match mode {
                Mode::Eval => (None, 0.0),
                Mode::Train { rng, dropout_rate } => (Some(rng), dropout_rate),
            };
            let keep_scale = 1.0 / (1.0 - rate);
            for (l, layer) in self.layers.iter().enumerate() {
                let prev = if l == 0 { &trace.deep_input } else { &trace.activations[l - 1] };
                let z = layer_forward(layer, prev);
                let mask: Vec<f64> = match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => (0..z.len())
                        .map(|_| if r.random::<f64>() < rate { 0.0 } else { keep_scale })
                        .collect(),
                    _ => vec![1.0; z.len()],
                };
                let a = z.iter().zip(&mask).map(|(&zi, &m)| zi.max(0.0) * m).collect();
                trace.pre_activations.push(z);
                trace.masks.push(mask);
                trace.activations.push(a);
            }
            let last = trace.activations.last().unwrap_or(&trace.deep_input);
            s += dot(&self.output, last);
        }
        trace.pre_activation = s;
        trace.output = self.finish(s);
        Ok(trace)
    }

    pub fn all_finite(&self) -> bool {
        self.bias.is_finite()
            && self.wide.iter().all(|v| v.is_finite())
            && self.output.iter().all(|v| v.is_finite())
            && self.embeddings.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn expect_task(&self, requested: Task) -> Result<(), ModelError> {
        if self.task != requested {
            return Err(ModelError::TaskMismatch { model: self.task, requested });
        }
        Ok(())
    }

    /// Probability that the loan defaults.
    pub fn predict_pd(&self, input: &EncodedLoan) -> Result<f64, ModelError> {
        self.expect_task(Task::Classification)?;
        self.predict(input)
    }

    pub fn predict_irr(&self, input: &EncodedLoan) -> Result<f64, ModelError> {
        self.expect_task(Task::Regression)?;
        self.predict(input)
    }

    pub fn predict_batch(&self, inputs: &[EncodedLoan]) -> Result<Vec<f64>, ModelError> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        1 + self.wide.len()
            + self.output.len()
            + self.embeddings.iter().map(|t| t.values.len()).sum::<usize>()
            + self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        match p {
            ParamRef::Wide(i) => self.wide[i],
            ParamRef::Embedding { table, index } => self.embeddings[table].values[index],
            ParamRef::LayerWeight { layer, index } => self.layers[layer].weights[index],
            ParamRef::LayerBias { layer, index } => self.layers[layer].bias[index],
            ParamRef::Output(i) => self.output[i],
            ParamRef::Bias => self.bias,
        }
    }

    pub fn get_mut(&mut self, p: ParamRef) -> &mut f64 {
        match p {
            ParamRef::Wide(i) => &mut self.wide[i],
            ParamRef::Embedding { table, index } => &mut self.embeddings[table].values[index],
            ParamRef::LayerWeight { layer, index } => &mut self.layers[layer].weights[index],
            ParamRef::LayerBias { layer, index } => &mut self.layers[layer].bias[index],
            ParamRef::Output(i) => &mut self.output[i],
            ParamRef::Bias => &mut self.bias,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_forward(layer: &DenseLayer, input: &[f64]) -> Vec<f64> {
    layer
        .weights
        .chunks_exact(layer.inputs)
        .zip(&layer.bias)
        .map(|(row, b)| dot(row, input) + b)
        .collect()
}

/// Address of a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRef {
    Wide(usize),
    Embedding { table: usize, index: usize },
    LayerWeight { layer: usize, index: usize },
    LayerBias { layer: usize, index: usize },
    Output(usize),
    Bias,
}

/// Parameter family a coordinate belongs to, for per-family reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamFamily {
    Wide,
    Embedding(usize),
    LayerWeight(usize),
    LayerBias(usize),
    Output,
    Bias,
}

impl ParamRef {
    pub fn family(self) -> ParamFamily {
        match self {
            ParamRef::Wide(_) => ParamFamily::Wide,
            ParamRef::Embedding { table, .. } => ParamFamily::Embedding(table),
            ParamRef::LayerWeight { layer, .. } => ParamFamily::LayerWeight(layer),
            ParamRef::LayerBias { layer, .. } => ParamFamily::LayerBias(layer),
            ParamRef::Output(_) => ParamFamily::Output,
            ParamRef::Bias => ParamFamily::Bias,
        }
    }
}

/// Gradient buffers shaped like `ModelParams`. Wide weights and embedding
/// rows remember which entries were touched so updates stay sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub wide: Vec<f64>,
    wide_touched: Vec<usize>,
    pub embeddings: Vec<Vec<f64>>,
    emb_touched: Vec<Vec<usize>>,
    pub layer_weights: Vec<Vec<f64>>,
    pub layer_bias: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    pub bias: f64,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            wide: vec![0.0; p.wide.len()],
            wide_touched: Vec::new(),
            embeddings: p.embeddings.iter().map(|t| vec![0.0; t.values.len()]).collect(),
            emb_touched: vec![Vec::new(); p.embeddings.len()],
            layer_weights: p.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            layer_bias: p.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            output: vec![0.0; p.output.len()],
            bias: 0.0,
        }
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        match p {
            ParamRef::Wide(i) => self.wide[i],
            ParamRef::Embedding { table, index } => self.embeddings[table][index],
            ParamRef::LayerWeight { layer, index } => self.layer_weights[layer][index],
            ParamRef::LayerBias { layer, index } => self.layer_bias[layer][index],
            ParamRef::Output(i) => self.output[i],
            ParamRef::Bias => self.bias,
        }
    }

    fn all_finite(&self) -> bool {
        self.bias.is_finite()
            && self.wide_touched.iter().all(|&i| self.wide[i].is_finite())
            && self.output.iter().all(|v| v.is_finite())
            && self.embeddings.iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self
                .layer_weights
                .iter()
                .chain(&self.layer_bias)
                .all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// Accumulate `scale * d(loss)/d(theta)` for one traced sample.
pub fn backward(
    params: &ModelParams,
    input: &EncodedLoan,
    trace: &ForwardTrace,
    d_pre: f64,
    grads: &mut Gradients,
) {
    grads.bias += d_pre;
    if params.components.has_wide() {
        for &i in &input.wide.active {
            grads.wide[i] += d_pre;
            grads.wide_touched.push(i);
        }
    }
    if !params.components.has_deep() {
        return;
    }
    let last = trace.activations.last().unwrap_or(&trace.deep_input);
    for (g, a) in grads.output.iter_mut().zip(last) {
        *g += d_pre * a;
    }
    let mut upstream: Vec<f64> = params.output.iter().map(|w| d_pre * w).collect();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let prev = if l == 0 { &trace.deep_input } else { &trace.activations[l - 1] };
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&trace.pre_activations[l])
            .zip(&trace.masks[l])
            .map(|((&da, &z), &m)| if z > 0.0 { da * m } else { 0.0 })
            .collect();
        let gw = &mut grads.layer_weights[l];
        let gb = &mut grads.layer_bias[l];
        let mut down = vec![0.0; layer.inputs];
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
            for k in 0..layer.inputs {
                grow[k] += d * prev[k];
                down[k] += d * row[k];
            }
        }
        upstream = down;
    }
    // upstream now holds d/d(deep_input); route the embedding slices back
    let mut offset = params.dense_len;
    for (t, (table, &id)) in params.embeddings.iter().zip(&input.deep.embedding_ids).enumerate() {
        let g = &mut grads.embeddings[t][id * table.dim..(id + 1) * table.dim];
        for (gi, ui) in g.iter_mut().zip(&upstream[offset..offset + table.dim]) {
            *gi += ui;
        }
        grads.emb_touched[t].push(id);
        offset += table.dim;
    }
}

/// `theta -= lr * grad`, touching only the wide weights and embedding rows
/// that received gradient.
fn apply_update(params: &mut ModelParams, grads: &mut Gradients, lr: f64) {
    params.bias -= lr * grads.bias;
    grads.wide_touched.sort_unstable();
    grads.wide_touched.dedup();
    for &i in &grads.wide_touched {
        params.wide[i] -= lr * grads.wide[i];
    }
    for (t, table) in params.embeddings.iter_mut().enumerate() {
        let touched = &mut grads.emb_touched[t];
        touched.sort_unstable();
        touched.dedup();
        for &row in touched.iter() {
            let range = row * table.dim..(row + 1) * table.dim;
            for (v, g) in table.values[range.clone()].iter_mut().zip(&grads.embeddings[t][range]) {
                *v -= lr * g;
            }
        }
    }
    for (l, layer) in params.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.layer_weights[l]) {
            *w -= lr * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.layer_bias[l]) {
            *b -= lr * g;
        }
    }
    for (w, g) in params.output.iter_mut().zip(&grads.output) {
        *w -= lr * g;
    }
}

/// Loss gradient of a batch (mean or sum of per-sample losses per
/// `reduction`), plus the batch mean loss.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&Sample],
    config: &TrainConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Gradients, f64), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = Gradients::zeros_like(params);
    let scale = match config.reduction {
        LossReduction::Mean => 1.0 / batch.len() as f64,
        LossReduction::Sum => 1.0,
    };
    let mut total = 0.0;
    for sample in batch {
        let mode = match rng.as_deref_mut() {
            Some(r) => Mode::Train { rng: r, dropout_rate: config.dropout_rate },
            None => Mode::Eval,
        };
        let trace = params.forward_trace(&sample.input, mode)?;
        total += loss(config.loss, trace.output, sample.target);
        let d_pre = scale * loss_grad_pre_activation(config.loss, trace.output, sample.target);
        backward(params, &sample.input, &trace, d_pre, &mut grads);
    }
    Ok((grads, total / batch.len() as f64))
}

/// One SGD step on `batch`. Returns the batch mean loss before the update.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[&Sample],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: usize,
) -> Result<f64, ModelError> {
    let (mut grads, mean_loss) = batch_gradients(params, batch, config, Some(rng))?;
    if !grads.all_finite() || !mean_loss.is_finite() {
        return Err(ModelError::NonFiniteGradient { step });
    }
    apply_update(params, &mut grads, config.learning_rate);
    if !params.all_finite() {
        return Err(ModelError::NonFiniteGradient { step });
    }
    Ok(mean_loss)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss at every step.
    pub loss_curve: Vec<f64>,
    /// `(step, mean loss)` on the held-out rows, every 100 steps and at the end.
    pub validation_curve: Vec<(usize, f64)>,
}

/// Mean loss of `params` over `samples` in eval mode.
pub fn mean_loss(params: &ModelParams, samples: &[&Sample], kind: LossKind) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for s in samples {
        total += loss(kind, params.predict(&s.input)?, s.target);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Run `config.steps` SGD steps. Each step draws `batch_size` distinct rows
/// uniformly; rows may repeat across steps.
pub fn train(
    params: &mut ModelParams,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed ^ 0x5eed_0f_7a11);
    let mut rows: Vec<&Sample> = dataset.iter().collect();
    let mut held_out: Vec<&Sample> = Vec::new();
    if config.validation_fraction > 0.0 {
        let n_val = libm::round(config.validation_fraction * rows.len() as f64) as usize;
        let mut mark = vec![false; rows.len()];
        for i in index::sample(&mut rng, rows.len(), n_val) {
            mark[i] = true;
        }
        let (val, fit): (Vec<_>, Vec<_>) = rows.into_iter().zip(mark).partition(|(_, m)| *m);
        held_out = val.into_iter().map(|(s, _)| s).collect();
        rows = fit.into_iter().map(|(s, _)| s).collect();
    }
    if rows.len() < config.batch_size {
        return Err(ModelError::DatasetTooSmall { rows: rows.len(), batch: config.batch_size });
    }
    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        batch.extend(index::sample(&mut rng, rows.len(), config.batch_size).into_iter().map(|i| rows[i]));
        let l = train_step(params, &batch, config, &mut rng, step)?;
        report.loss_curve.push(l);
        let last = step + 1 == config.steps;
        if !held_out.is_empty() && ((step + 1) % 100 == 0 || last) {
            report.validation_curve.push((step + 1, mean_loss(params, &held_out, config.loss)?));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyError {
    pub family: ParamFamily,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±h perturbation flipped a ReLU, where the
    /// central difference does not approximate the derivative.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    pub per_family: Vec<FamilyError>,
}

/// Relative error used by the gradient checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn relu_pattern(trace: &ForwardTrace) -> Vec<bool> {
    trace.pre_activations.iter().flat_map(|z| z.iter().map(|&v| v > 0.0)).collect()
}

fn all_coordinates(params: &ModelParams) -> Vec<ParamRef> {
    let mut out = Vec::with_capacity(params.len());
    out.extend((0..params.wide.len()).map(ParamRef::Wide));
    for (t, table) in params.embeddings.iter().enumerate() {
        out.extend((0..table.values.len()).map(|index| ParamRef::Embedding { table: t, index }));
    }
    for (l, layer) in params.layers.iter().enumerate() {
        out.extend((0..layer.weights.len()).map(|index| ParamRef::LayerWeight { layer: l, index }));
        out.extend((0..layer.bias.len()).map(|index| ParamRef::LayerBias { layer: l, index }));
    }
    out.extend((0..params.output.len()).map(ParamRef::Output));
    out.push(ParamRef::Bias);
    out
}

/// Compare backpropagated gradients of one sample's loss with central
/// finite differences (step `h`) on a seeded subset of coordinates.
///
/// The subset always includes the active wide weights, the looked-up
/// embedding rows, the output weights and the bias, plus up to
/// `per_family` random coordinates from every other family. Dropout is off.
pub fn gradient_check(
    params: &ModelParams,
    sample: &Sample,
    loss_kind: LossKind,
    h: f64,
    per_family: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let base = params.forward_trace(&sample.input, Mode::Eval)?;
    let mut grads = Gradients::zeros_like(params);
    let d_pre = loss_grad_pre_activation(loss_kind, base.output, sample.target);
    backward(params, &sample.input, &base, d_pre, &mut grads);
    let base_pattern = relu_pattern(&base);

    let mut rng = seeded_rng(seed);
    let mut coords: Vec<ParamRef> = Vec::new();
    if params.components.has_wide() {
        coords.extend(sample.input.wide.active.iter().map(|&i| ParamRef::Wide(i)));
    }
    if params.components.has_deep() {
        for (t, (table, &id)) in params.embeddings.iter().zip(&sample.input.deep.embedding_ids).enumerate() {
            coords.extend((id * table.dim..(id + 1) * table.dim).map(|index| ParamRef::Embedding { table: t, index }));
        }
    }
    let everything = all_coordinates(params);
    let mut families: Vec<ParamFamily> = everything.iter().map(|c| c.family()).collect();
    families.dedup();
    for family in families {
        let members: Vec<ParamRef> = everything.iter().copied().filter(|c| c.family() == family).collect();
        if matches!(family, ParamFamily::Output | ParamFamily::Bias) || members.len() <= per_family {
            coords.extend(members);
        } else {
            coords.extend(index::sample(&mut rng, members.len(), per_family).into_iter().map(|i| members[i]));
        }
    }
    coords.sort();
    coords.dedup();

    let mut probe = params.clone();
    let mut per: Vec<FamilyError> = Vec::new();
    let mut skipped = 0;
    let mut checked = 0;
    let mut max_err: f64 = 0.0;
    for c in coords {
        let original = probe.get(c);
        *probe.get_mut(c) = original + h;
        let plus = probe.forward_trace(&sample.input, Mode::Eval)?;
        *probe.get_mut(c) = original - h;
        let minus = probe.forward_trace(&sample.input, Mode::Eval)?;
        *probe.get_mut(c) = original;
        if relu_pattern(&plus) != base_pattern || relu_pattern(&minus) != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (loss(loss_kind, plus.output, sample.target)
            - loss(loss_kind, minus.output, sample.target))
            / (2.0 * h);
        let err = relative_error(grads.get(c), numeric);
        checked += 1;
        max_err = max_err.max(err);
        let fam = c.family();
        match per.iter_mut().find(|f| f.family == fam) {
            Some(f) => {
                f.checked += 1;
                f.max_relative_error = f.max_relative_error.max(err);
            }
            None => per.push(FamilyError { family: fam, checked: 1, max_relative_error: err }),
        }
    }
    Ok(GradCheckReport { checked, skipped_kinks: skipped, max_relative_error: max_err, per_family: per })
}
