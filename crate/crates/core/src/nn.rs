//! Fully connected sigmoid network with a softmax output and cross-entropy error.
//!
//! All parameters live in one flat `f64` vector. The layout is layer-major: for
//! each layer `i` (connecting `layer_sizes[i]` inputs to `layer_sizes[i + 1]`
//! outputs) the weight matrix comes first, stored row-major with shape
//! `fan_in × fan_out` (entry `[j][k]` connects input `j` to output `k`), followed
//! by the `fan_out` biases. Hidden layers apply the logistic sigmoid; the last
//! layer produces logits that go through softmax.
//!
//! Large batches are processed in fixed-size row chunks and summed in chunk order,
//! so every function here is a deterministic function of its inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows evaluated per dense pass. Bounds activation memory for full-dataset passes.
pub(crate) const CHUNK_ROWS: usize = 256;

/// Floor applied to a true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
}

/// Offsets and shape of one dense layer inside a [`ParameterVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.bias_offset
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least an input and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(Self { layer_sizes })
    }

    /// The 784-128-128-10 classifier used for the MNIST experiments.
    pub fn mnist() -> Self {
        Self {
            layer_sizes: vec![784, 128, 128, 10],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }
}

impl std::fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

/// A point θ in parameter space. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Weights uniform in `[-1/√fan_in, 1/√fan_in]`, biases zero.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; spec.parameter_count()];
        for layer in spec.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut values[layer.weight_range()] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        if self.len() != spec.parameter_count() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, network {spec} needs {}",
                self.len(),
                spec.parameter_count()
            )));
        }
        Ok(())
    }

    pub fn midpoint(a: &Self, b: &Self) -> Result<Self> {
        check_same_len(a.len(), b.len())?;
        Ok(Self(
            a.0.iter().zip(&b.0).map(|(x, y)| 0.5 * (x + y)).collect(),
        ))
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Config(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between two parameter vectors.
pub fn radial_distance(params: &ParameterVector, reference: &ParameterVector) -> Result<f64> {
    check_same_len(params.len(), reference.len())?;
    Ok(distance(&params.0, &reference.0))
}

/// A borrowed view of `len` input rows and their class labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    labels: &'a [usize],
    input_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize], input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("batch is empty".into()));
        }
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::Config(format!(
                "batch has {} input values for {} labels of dimension {input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(v) = inputs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("input value {v} outside [0, 1]")));
        }
        Ok(Self {
            inputs,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inputs(&self) -> &'a [f64] {
        self.inputs
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    /// Rows `start..end` as a sub-batch.
    pub(crate) fn rows(&self, start: usize, end: usize) -> Batch<'a> {
        Batch {
            inputs: &self.inputs[start * self.input_dim..end * self.input_dim],
            labels: &self.labels[start..end],
            input_dim: self.input_dim,
        }
    }

    pub(crate) fn chunks(&self) -> impl Iterator<Item = Batch<'a>> + '_ {
        (0..self.len())
            .step_by(CHUNK_ROWS)
            .map(|s| self.rows(s, (s + CHUNK_ROWS).min(self.len())))
    }
}

pub(crate) fn check_shapes(spec: &NetworkSpec, params: &[f64], batch: &Batch<'_>) -> Result<()> {
    if params.len() != spec.parameter_count() {
        return Err(Error::Config(format!(
            "parameter vector has {} entries, network {spec} needs {}",
            params.len(),
            spec.parameter_count()
        )));
    }
    if batch.input_dim() != spec.input_dim() {
        return Err(Error::Config(format!(
            "batch input dimension {} does not match network input {}",
            batch.input_dim(),
            spec.input_dim()
        )));
    }
    let classes = spec.num_classes();
    if let Some(l) = batch.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {l} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `c = alpha·op(a)·op(b) + beta·c` on row/column-strided dense matrices.
///
/// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`, each described by its strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) < c.len());
    // SAFETY: the asserts above keep every addressed element inside its slice, and
    // `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations of one chunk: `outputs[l]` holds layer `l + 1`'s output
/// (sigmoid for hidden layers, logits for the last one).
pub(crate) struct Activations {
    pub outputs: Vec<Vec<f64>>,
}

impl Activations {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            outputs: spec.layer_sizes()[1..]
                .iter()
                .map(|&w| vec![0.0; CHUNK_ROWS * w])
                .collect(),
        }
    }

    /// Input to layer `l` (0-based), given the chunk inputs.
    pub fn layer_input<'s>(&'s self, l: usize, x: &'s [f64]) -> &'s [f64] {
        if l == 0 {
            x
        } else {
            &self.outputs[l - 1]
        }
    }

    pub fn logits(&self) -> &[f64] {
        self.outputs.last().unwrap()
    }
}

/// Forward pass over one chunk (at most [`CHUNK_ROWS`] rows).
pub(crate) fn forward_chunk(
    layers: &[LayerShape],
    params: &[f64],
    x: &[f64],
    n: usize,
    acts: &mut Activations,
) {
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let (before, rest) = acts.outputs.split_at_mut(l);
        let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
        let out = &mut rest[0][..n * layer.fan_out];
        let bias = &params[layer.bias_range()];
        for row in out.chunks_exact_mut(layer.fan_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            n,
            layer.fan_in,
            layer.fan_out,
            1.0,
            input,
            (layer.fan_in, 1),
            &params[layer.weight_range()],
            (layer.fan_out, 1),
            1.0,
            out,
            layer.fan_out,
        );
        if l != last {
            for v in out.iter_mut() {
                *v = sigmoid(*v);
            }
        }
    }
}

/// Replaces each logit row with its softmax and returns `Σ −log p(true)` for the rows,
/// computed from the log-softmax directly.
pub(crate) fn softmax_rows_in_place(logits: &mut [f64], classes: usize, labels: &[usize]) -> f64 {
    let mut nll = 0.0;
    for (row, &y) in logits.chunks_exact_mut(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted_true = row[y] - max;
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        nll -= shifted_true - sum.ln();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    nll
}

/// Class probabilities, `batch.len() × num_classes`, row-major.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Batch<'_>,
) -> Result<Vec<f64>> {
    check_shapes(spec, params.as_slice(), batch)?;
    let classes = spec.num_classes();
    let layers = spec.layers();
    let mut acts = Activations::new(spec);
    let mut probs = Vec::with_capacity(batch.len() * classes);
    for chunk in batch.chunks() {
        let n = chunk.len();
        forward_chunk(&layers, params.as_slice(), chunk.inputs(), n, &mut acts);
        let logits = &mut acts.outputs[layers.len() - 1][..n * classes];
        softmax_rows_in_place(logits, classes, chunk.labels());
        probs.extend_from_slice(logits);
    }
    Ok(probs)
}

/// Mean cross-entropy plus the number of samples whose true-class probability hit
/// [`PROB_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    pub clamped: usize,
}

/// `E = −(1/N) Σ log p(true class)` from a materialized probability matrix.
pub fn cross_entropy(probs: &[f64], num_classes: usize, labels: &[usize]) -> Result<CrossEntropy> {
    if labels.is_empty() || probs.len() != labels.len() * num_classes {
        return Err(Error::Config(format!(
            "{} probabilities for {} labels of {num_classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (row, &y) in probs.chunks_exact(num_classes).zip(labels) {
        if y >= num_classes {
            return Err(Error::Config(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        let p = if row[y] < PROB_FLOOR {
            clamped += 1;
            PROB_FLOOR
        } else {
            row[y]
        };
        total -= p.ln();
    }
    Ok(CrossEntropy {
        value: total / labels.len() as f64,
        clamped,
    })
}

/// Per-chunk scratch for backpropagation.
pub(crate) struct Backprop {
    pub acts: Activations,
    pub deltas: Vec<Vec<f64>>,
}

impl Backprop {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            acts: Activations::new(spec),
            deltas: spec.layer_sizes()[1..]
                .iter()
                .map(|&w| vec![0.0; CHUNK_ROWS * w])
                .collect(),
        }
    }
}

/// Mean error over `batch`; when `grad` is given, `∇E` is added into it.
///
/// Shapes must already be validated.
pub(crate) fn error_grad_accumulate(
    spec: &NetworkSpec,
    params: &[f64],
    batch: &Batch<'_>,
    mut grad: Option<&mut [f64]>,
    scratch: &mut Backprop,
) -> f64 {
    let classes = spec.num_classes();
    let layers = spec.layers();
    let last = layers.len() - 1;
    let scale = 1.0 / batch.len() as f64;
    let mut nll = 0.0;
    for chunk in batch.chunks() {
        let n = chunk.len();
        forward_chunk(&layers, params, chunk.inputs(), n, &mut scratch.acts);
        let probs = &mut scratch.acts.outputs[last][..n * classes];
        nll += softmax_rows_in_place(probs, classes, chunk.labels());
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let delta = &mut scratch.deltas[last][..n * classes];
        delta.copy_from_slice(probs);
        for (row, &y) in delta.chunks_exact_mut(classes).zip(chunk.labels()) {
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        backward_chunk(&layers, params, chunk.inputs(), n, scratch, g);
    }
    nll * scale
}

/// Given `deltas[last]` filled in, propagates deltas down and adds weight and bias
/// gradients into `grad`.
pub(crate) fn backward_chunk(
    layers: &[LayerShape],
    params: &[f64],
    x: &[f64],
    n: usize,
    scratch: &mut Backprop,
    grad: &mut [f64],
) {
    for l in (0..layers.len()).rev() {
        let layer = layers[l];
        let input = scratch.acts.layer_input(l, x);
        let delta = &scratch.deltas[l][..n * layer.fan_out];
        // dW += inputᵀ · delta
        gemm(
            layer.fan_in,
            n,
            layer.fan_out,
            1.0,
            input,
            (1, layer.fan_in),
            delta,
            (layer.fan_out, 1),
            1.0,
            &mut grad[layer.weight_range()],
            layer.fan_out,
        );
        let gb = &mut grad[layer.bias_range()];
        for row in delta.chunks_exact(layer.fan_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        // delta_{l-1} = (delta_l · Wᵀ) ⊙ a(1 − a)
        let (lower, upper) = scratch.deltas.split_at_mut(l);
        let below = &mut lower[l - 1][..n * layer.fan_in];
        gemm(
            n,
            layer.fan_out,
            layer.fan_in,
            1.0,
            &upper[0][..n * layer.fan_out],
            (layer.fan_out, 1),
            &params[layer.weight_range()],
            (1, layer.fan_out),
            0.0,
            below,
            layer.fan_in,
        );
        let a = &scratch.acts.outputs[l - 1][..n * layer.fan_in];
        for (d, &s) in below.iter_mut().zip(a) {
            *d *= s * (1.0 - s);
        }
    }
}

/// Mean cross-entropy error over the batch, computed from log-softmax.
pub fn error(spec: &NetworkSpec, params: &ParameterVector, batch: &Batch<'_>) -> Result<f64> {
    check_shapes(spec, params.as_slice(), batch)?;
    let mut scratch = Backprop::new(spec);
    Ok(error_grad_accumulate(
        spec,
        params.as_slice(),
        batch,
        None,
        &mut scratch,
    ))
}

/// `∇E(θ)` over the batch, in the same layout as `params`.
pub fn gradient(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Batch<'_>,
) -> Result<ParameterVector> {
    error_and_gradient(spec, params, batch).map(|(_, g)| g)
}

pub fn error_and_gradient(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Batch<'_>,
) -> Result<(f64, ParameterVector)> {
    check_shapes(spec, params.as_slice(), batch)?;
    let mut scratch = Backprop::new(spec);
    let mut grad = vec![0.0; params.len()];
    let e = error_grad_accumulate(
        spec,
        params.as_slice(),
        batch,
        Some(&mut grad),
        &mut scratch,
    );
    Ok((e, ParameterVector::new(grad)?))
}

/// Arg-max class per row; ties go to the lowest class index.
pub fn predict(
    spec: &NetworkSpec,
    params: &ParameterVector,
    batch: &Batch<'_>,
) -> Result<Vec<usize>> {
    check_shapes(spec, params.as_slice(), batch)?;
    let classes = spec.num_classes();
    let layers = spec.layers();
    let mut acts = Activations::new(spec);
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks() {
        let n = chunk.len();
        forward_chunk(&layers, params.as_slice(), chunk.inputs(), n, &mut acts);
        for row in acts.logits()[..n * classes].chunks_exact(classes) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}
