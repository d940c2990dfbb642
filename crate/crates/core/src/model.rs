//! The feed-forward ReLU classifier: parameters, initialization, forward
//! pass, cross-entropy loss and accuracy.
//!
//! Parameters are flattened in canonical order: layers in forward order, and
//! within a layer the weights (row-major, `out × in`) followed by the biases.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_len, GraphObjective, Objective, Tape, Var};
use crate::data::Dataset;
use crate::rng::RngStream;
use crate::{Error, FlatVector, Result};

/// Pixels per MNIST image (28×28).
pub const MNIST_INPUTS: usize = 784;

/// Default hidden width of each of the three hidden layers.
pub const DEFAULT_HIDDEN_WIDTH: usize = 100;

/// `[784, w, w, w, n_classes]`
pub fn mnist_layer_sizes(hidden_width: usize, n_classes: usize) -> Vec<usize> {
    vec![MNIST_INPUTS, hidden_width, hidden_width, hidden_width, n_classes]
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

pub fn validate_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output layer sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes must be positive, got {sizes:?}")));
    }
    Ok(())
}

pub fn layer_layout(sizes: &[usize]) -> Vec<LayerLayout> {
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let l = LayerLayout {
                n_in,
                n_out,
                weight_offset: offset,
                bias_offset: offset + n_in * n_out,
            };
            offset += n_in * n_out + n_out;
            l
        })
        .collect()
}

/// `Σ (n_out·n_in + n_out)` over layers.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Model parameters together with the layer sizes that give them shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layer_sizes: Vec<usize>,
    values: FlatVector,
}

impl ParamSet {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            values: vec![0.0; param_count(layer_sizes)],
        })
    }

    pub fn from_values(layer_sizes: &[usize], values: FlatVector) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        check_len("parameter vector", values.len(), param_count(layer_sizes))?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            values,
        })
    }

    /// Re-checks the length invariant, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        validate_layer_sizes(&self.layer_sizes)?;
        check_len("parameter vector", self.values.len(), param_count(&self.layer_sizes))
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> FlatVector {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        layer_layout(&self.layer_sizes)
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: FlatVector) -> Result<Self> {
        Self::from_values(&self.layer_sizes, values)
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let l = self.layers()[layer];
        ArrayView2::from_shape((l.n_out, l.n_in), &self.values[l.weight_offset..l.bias_offset])
            .expect("layout matches length")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = self.layers()[layer];
        &self.values[l.bias_offset..l.bias_offset + l.n_out]
    }
}

/// He-style uniform initialization: weights uniform in
/// `[-√(6/fan_in), +√(6/fan_in)]`, biases zero. Weights are drawn in
/// canonical order.
pub fn init_mlp(rng: &mut RngStream, layer_sizes: &[usize]) -> Result<ParamSet> {
    let mut params = ParamSet::zeros(layer_sizes)?;
    for l in params.layers() {
        let bound = (6.0 / l.n_in as f64).sqrt();
        for w in &mut params.values[l.weight_offset..l.bias_offset] {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    Ok(params)
}

/// Examples as rows of `inputs` plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    /// Checks a non-empty batch with one label per row and pixels in `[0, 1]`.
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Config(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(p) = inputs.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Data(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { inputs, labels })
    }

    pub(crate) fn from_parts_unchecked(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        debug_assert_eq!(inputs.nrows(), labels.len());
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_input_width(layer_sizes: &[usize], cols: usize) -> Result<()> {
    if cols != layer_sizes[0] {
        return Err(Error::Config(format!(
            "input has {cols} columns but the model expects {}",
            layer_sizes[0]
        )));
    }
    Ok(())
}

/// Logits for each row of `inputs`: ReLU on hidden layers, linear output.
pub fn forward_logits(params: &ParamSet, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input_width(&params.layer_sizes, inputs.ncols())?;
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut h = inputs.to_owned();
    for (i, l) in layers.iter().enumerate() {
        let w = ArrayView2::from_shape((l.n_out, l.n_in), &params.values[l.weight_offset..l.bias_offset])
            .expect("layout matches length");
        let b = ndarray::aview1(&params.values[l.bias_offset..l.bias_offset + l.n_out]);
        let mut z = h.dot(&w.t());
        z += &b;
        if !z.iter().all(|x| x.is_finite()) {
            return Err(Error::overflow(format!("layer {} pre-activation", i + 1)));
        }
        if i < last {
            z.mapv_inplace(|x| if x > 0.0 { x } else { 0.0 });
        }
        h = z;
    }
    Ok(h)
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn ce_loss(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::Usage("cross-entropy over an empty batch".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Config(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let k = logits.ncols();
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        if y >= k {
            return Err(Error::Data(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    let loss = total / labels.len() as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::overflow("cross-entropy"))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_val || i == 0 {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Number of rows whose argmax logit equals the label.
pub fn correct_count(params: &ParamSet, batch: &LabeledBatch) -> Result<usize> {
    let logits = forward_logits(params, batch.inputs())?;
    Ok(logits
        .axis_iter(Axis(0))
        .zip(batch.labels())
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count())
}

pub fn accuracy_on_batch(params: &ParamSet, batch: &LabeledBatch) -> Result<f64> {
    Ok(correct_count(params, batch)? as f64 / batch.len() as f64)
}

const EVAL_CHUNK: usize = 1000;

/// Fraction of `dataset` classified correctly.
pub fn accuracy(params: &ParamSet, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("accuracy over an empty dataset".into()));
    }
    let mut correct = 0;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let batch = dataset.batch_range(start..end)?;
        correct += correct_count(params, &batch)?;
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean cross-entropy of an MLP on one batch, as a differentiable objective.
pub struct MlpObjective<'a> {
    layer_sizes: Vec<usize>,
    batch: &'a LabeledBatch,
}

impl<'a> MlpObjective<'a> {
    pub fn new(layer_sizes: &[usize], batch: &'a LabeledBatch) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        check_input_width(layer_sizes, batch.inputs.ncols())?;
        let k = *layer_sizes.last().expect("validated");
        if let Some(&y) = batch.labels.iter().find(|&&y| y >= k) {
            return Err(Error::Data(format!("label {y} out of range for {k} classes")));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            batch,
        })
    }

    pub fn for_params(params: &ParamSet, batch: &'a LabeledBatch) -> Result<Self> {
        Self::new(params.layer_sizes(), batch)
    }

    fn build(&self, tape: &mut Tape<'_>) -> Result<Var> {
        let layers = layer_layout(&self.layer_sizes);
        let last = layers.len() - 1;
        let mut h = tape.constant(self.batch.inputs.clone());
        for (i, l) in layers.iter().enumerate() {
            let w = tape.param(l.weight_offset, l.n_out, l.n_in)?;
            let b = tape.param(l.bias_offset, 1, l.n_out)?;
            let z = tape.matmul_nt(h, w)?;
            let z = tape.add_bias(z, b)?;
            tape.check_finite(z, &format!("layer {} pre-activation", i + 1))?;
            h = if i < last { tape.relu(z) } else { z };
        }
        tape.softmax_cross_entropy(h, &self.batch.labels)
    }

    fn graph(&self) -> GraphObjective<impl Fn(&mut Tape<'_>) -> Result<Var> + '_> {
        GraphObjective::new(param_count(&self.layer_sizes), move |t: &mut Tape<'_>| self.build(t))
    }
}

impl Objective for MlpObjective<'_> {
    fn dim(&self) -> usize {
        param_count(&self.layer_sizes)
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.graph().loss(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<FlatVector> {
        self.graph().gradient(params)
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector> {
        self.graph().hvp(params, v)
    }
}

/// Mean softmax cross-entropy of the model on `batch`.
pub fn evaluate(params: &ParamSet, batch: &LabeledBatch) -> Result<f64> {
    MlpObjective::for_params(params, batch)?.loss(params.values())
}

/// Exact gradient of [`evaluate`] in canonical parameter order.
pub fn gradient(params: &ParamSet, batch: &LabeledBatch) -> Result<FlatVector> {
    MlpObjective::for_params(params, batch)?.gradient(params.values())
}

/// Exact Hessian-vector product of [`evaluate`].
pub fn hvp(params: &ParamSet, batch: &LabeledBatch, v: &[f64]) -> Result<FlatVector> {
    MlpObjective::for_params(params, batch)?.hvp(params.values(), v)
}
