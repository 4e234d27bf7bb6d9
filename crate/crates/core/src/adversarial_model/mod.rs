// Copyright 2026 The CAPE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Feature extractor, target head and adversary head with hand-derived
//! backpropagation.
//!
//! ```text
//!   x ─▶ dense+relu ─▶ dense+relu ─▶ h ─┬─▶ target head ─▶ softmax (y)
//!                                       └─▶ reversal ─▶ adversary head ─▶ softmax (z)
//! ```
//!
//! The reversal layer is the identity going forward and multiplies the
//! gradient by `-lambda` going backward. The adversary head itself gets the
//! plain gradient of its own cross-entropy, so it keeps learning to predict
//! `z` while the extractor is pushed away from encoding it.

pub mod gradcheck;
mod io;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

pub use self::io::{read_params, write_params, PARAMS_MAGIC};
pub use self::train::{
    evaluate_predictions, extractor_outputs, fit, FitObserver, FitOutcome, LossRecord, NoObserver, TrainConfig,
    TrainingData,
};
use crate::error::{CapeError, Result};
use crate::privacy::NoiseRng;

/// Fully connected layer computing `x · weights + bias`, with `weights`
/// shaped `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// drawn row-major; zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut NoiseRng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let rng = rng.inner_mut();
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-a..=a));
        Dense {
            weights,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn axpy(&mut self, alpha: f64, other: &Dense) {
        self.weights.scaled_add(alpha, &other.weights);
        self.bias.scaled_add(alpha, &other.bias);
    }
}

/// All trainable weights. Also used as the container for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub target_head: Dense,
    pub adversary_head: Dense,
}

/// Layer sizes of a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub target_classes: usize,
    pub private_classes: usize,
}

impl ModelParams {
    /// Initializes every tensor, including the adversary head, whether or not
    /// the variant trains it. Variants therefore start from identical weights.
    pub fn init(shape: Shape, rng: &mut NoiseRng) -> Self {
        ModelParams {
            hidden1: Dense::glorot(shape.input, shape.hidden1, rng),
            hidden2: Dense::glorot(shape.hidden1, shape.hidden2, rng),
            target_head: Dense::glorot(shape.hidden2, shape.target_classes, rng),
            adversary_head: Dense::glorot(shape.hidden2, shape.private_classes, rng),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        ModelParams {
            hidden1: Dense::zeros(shape.input, shape.hidden1),
            hidden2: Dense::zeros(shape.hidden1, shape.hidden2),
            target_head: Dense::zeros(shape.hidden2, shape.target_classes),
            adversary_head: Dense::zeros(shape.hidden2, shape.private_classes),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            input: self.hidden1.inputs(),
            hidden1: self.hidden1.outputs(),
            hidden2: self.hidden2.outputs(),
            target_classes: self.target_head.outputs(),
            private_classes: self.adversary_head.outputs(),
        }
    }

    pub fn layers(&self) -> [&Dense; 4] {
        [&self.hidden1, &self.hidden2, &self.target_head, &self.adversary_head]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [
            &mut self.hidden1,
            &mut self.hidden2,
            &mut self.target_head,
            &mut self.adversary_head,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    /// Euclidean norm over every weight and bias.
    pub fn l2_norm(&self) -> f64 {
        self.layers()
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (mine, theirs) in self.layers_mut().into_iter().zip(other.layers()) {
            mine.axpy(alpha, theirs);
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.hidden1.inputs() {
            return Err(CapeError::DimensionMismatch {
                what: "input width".into(),
                expected: self.hidden1.inputs(),
                found: x.ncols(),
            });
        }
        Ok(())
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub pre1: Array2<f64>,
    pub act1: Array2<f64>,
    pub pre2: Array2<f64>,
    /// Extractor output, read by both heads.
    pub act2: Array2<f64>,
    pub target_logits: Array2<f64>,
    pub adversary_logits: Array2<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Extractor only: the representation the heads (and any attacker probe)
/// see.
pub fn extract(x: &ArrayView2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    params.check_input(x)?;
    let a1 = relu(&params.hidden1.apply(x));
    Ok(relu(&params.hidden2.apply(&a1.view())))
}

pub fn forward(x: &ArrayView2<f64>, params: &ModelParams) -> Result<ForwardTrace> {
    params.check_input(x)?;
    let pre1 = params.hidden1.apply(x);
    let act1 = relu(&pre1);
    let pre2 = params.hidden2.apply(&act1.view());
    let act2 = relu(&pre2);
    let target_logits = params.target_head.apply(&act2.view());
    // reversal layer: identity on the way forward
    let adversary_logits = params.adversary_head.apply(&act2.view());
    Ok(ForwardTrace {
        input: x.to_owned(),
        pre1,
        act1,
        pre2,
        act2,
        target_logits,
        adversary_logits,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `-log softmax(logits)[label]`, computed as `logsumexp - logits[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean cross-entropy over the rows of a batch.
pub fn mean_cross_entropy(logits: &ArrayView2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| cross_entropy(row.as_slice().expect("standard layout"), y))
        .sum();
    total / labels.len() as f64
}

/// The scalar that gets reported: target loss plus `lambda` times the
/// adversary loss. The sign flip happens in the backward pass, not here.
pub fn combined_loss(target_loss: f64, adversary_loss: f64, lambda: f64) -> f64 {
    target_loss + lambda * adversary_loss
}

/// Backward rule of the reversal layer.
pub fn grad_reverse_backward(upstream: &Array2<f64>, lambda: f64) -> Array2<f64> {
    upstream.mapv(|g| -lambda * g)
}

/// Labels for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLabels<'a> {
    pub targets: &'a [usize],
    pub private: &'a [usize],
}

/// How the adversary participates in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryMode {
    pub enabled: bool,
    pub lambda: f64,
}

fn softmax_minus_onehot(logits: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut d = softmax_rows(&logits.view());
    for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    d / labels.len() as f64
}

fn head_backward(head: &Dense, input: &Array2<f64>, d_logits: &Array2<f64>) -> (Dense, Array2<f64>) {
    let grad = Dense {
        weights: input.t().dot(d_logits),
        bias: d_logits.sum_axis(Axis(0)),
    };
    let d_input = d_logits.dot(&head.weights.t());
    (grad, d_input)
}

/// Gradient of the target head's loss w.r.t. the extractor output.
pub fn target_path(trace: &ForwardTrace, params: &ModelParams, targets: &[usize]) -> (Dense, Array2<f64>) {
    let d = softmax_minus_onehot(&trace.target_logits, targets);
    head_backward(&params.target_head, &trace.act2, &d)
}

/// Unreversed gradient of the adversary's loss: w.r.t. its own weights and
/// w.r.t. the extractor output.
pub fn adversary_path(trace: &ForwardTrace, params: &ModelParams, private: &[usize]) -> (Dense, Array2<f64>) {
    let d = softmax_minus_onehot(&trace.adversary_logits, private);
    head_backward(&params.adversary_head, &trace.act2, &d)
}

/// Backpropagates a gradient at the extractor output through both ReLU
/// layers. Returns `(hidden1, hidden2)` gradients.
pub fn extractor_backward(trace: &ForwardTrace, params: &ModelParams, d_out: &Array2<f64>) -> (Dense, Dense) {
    let d_pre2 = d_out * &trace.pre2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let g2 = Dense {
        weights: trace.act1.t().dot(&d_pre2),
        bias: d_pre2.sum_axis(Axis(0)),
    };
    let d_act1 = d_pre2.dot(&params.hidden2.weights.t());
    let d_pre1 = d_act1 * &trace.pre1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let g1 = Dense {
        weights: trace.input.t().dot(&d_pre1),
        bias: d_pre1.sum_axis(Axis(0)),
    };
    (g1, g2)
}

/// Batch-mean gradients for every tensor.
///
/// * target head: gradient of the target cross-entropy;
/// * adversary head: gradient of the adversary cross-entropy (zero when the
///   adversary is disabled);
/// * extractor: target gradient plus the reversed adversary gradient, i.e.
///   the gradient of `target - lambda * adversary`.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    labels: BatchLabels<'_>,
    adversary: AdversaryMode,
) -> ModelParams {
    let (target_grad, mut d_out) = target_path(trace, params, labels.targets);
    let adversary_grad = if adversary.enabled {
        let (grad, d_adv) = adversary_path(trace, params, labels.private);
        if adversary.lambda != 0.0 {
            d_out += &grad_reverse_backward(&d_adv, adversary.lambda);
        }
        grad
    } else {
        Dense::zeros(params.adversary_head.inputs(), params.adversary_head.outputs())
    };
    let (hidden1, hidden2) = extractor_backward(trace, params, &d_out);
    ModelParams {
        hidden1,
        hidden2,
        target_head: target_grad,
        adversary_head: adversary_grad,
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_logits(logits: &ArrayView2<f64>) -> Vec<usize> {
    logits.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
}

/// Target-class predictions for a batch of (already released) inputs.
pub fn predict(x: &ArrayView2<f64>, params: &ModelParams) -> Result<Vec<usize>> {
    let h = extract(x, params)?;
    Ok(predict_logits(&params.target_head.apply(&h.view()).view()))
}
