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

//! Central finite-difference check of [`backward`](super::backward).
//!
//! For each tensor the numeric derivative is taken of the objective that
//! tensor actually descends: the target loss for the target head, the
//! adversary loss for the adversary head, and `target - lambda * adversary`
//! for the extractor (the reversal layer's effect).

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use super::{backward, forward, mean_cross_entropy, AdversaryMode, BatchLabels, ModelParams, Shape};
use crate::privacy::{release_rows, streams, NoiseRng, PrivacyParams};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true
/// derivative is zero are compared absolutely.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

pub const TENSOR_NAMES: [&str; 8] = [
    "hidden1.weights",
    "hidden1.bias",
    "hidden2.weights",
    "hidden2.bias",
    "target.weights",
    "target.bias",
    "adversary.weights",
    "adversary.bias",
];

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub tensor: &'static str,
    pub max_relative_error: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub lambda: f64,
    pub noise: bool,
    pub adversary: bool,
    pub tensors: Vec<TensorCheck>,
}

impl CaseReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < TOLERANCE
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// A small model and batch on which to check gradients.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: ModelParams,
    pub inputs: Array2<f64>,
    pub targets: Vec<usize>,
    pub private: Vec<usize>,
}

impl Problem {
    /// D=6, hidden widths 5 and 4, 3 target classes, 2 private classes,
    /// batch of 8, Glorot weights and uniform(-0.5, 0.5) biases. With `noise`, the inputs are normalized and perturbed once
    /// (epsilon = 1) and then held fixed.
    pub fn random(seed: u64, noise: bool) -> Problem {
        let shape = Shape {
            input: 6,
            hidden1: 5,
            hidden2: 4,
            target_classes: 3,
            private_classes: 2,
        };
        let mut rng = NoiseRng::new(seed, streams::GRADCHECK);
        let mut params = ModelParams::init(shape, &mut rng);
        let r = rng.inner_mut();
        // random biases keep pre-activations off the ReLU kink at exactly 0,
        // which zero biases hit whenever a whole layer input row is zero
        for layer in params.layers_mut() {
            layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let raw = Array2::from_shape_simple_fn((8, 6), || r.random_range(-1.0..1.0));
        let targets = (0..8).map(|_| r.random_range(0..3)).collect();
        let private = (0..8).map(|_| r.random_range(0..2)).collect();
        let inputs = if noise {
            let p = PrivacyParams::with_epsilon(1.0).expect("valid");
            release_rows(&raw.view(), Some(&p), &mut rng.split(1))
                .expect("finite inputs")
                .0
        } else {
            raw
        };
        Problem {
            params,
            inputs,
            targets,
            private,
        }
    }

    fn losses(&self, params: &ModelParams) -> (f64, f64) {
        let t = forward(&self.inputs.view(), params).expect("shapes match");
        (
            mean_cross_entropy(&t.target_logits.view(), &self.targets),
            mean_cross_entropy(&t.adversary_logits.view(), &self.private),
        )
    }
}

fn tensor_mut(params: &mut ModelParams, idx: usize) -> &mut [f64] {
    let [h1, h2, t, a] = params.layers_mut();
    let layer = [h1, h2, t, a].into_iter().nth(idx / 2).expect("tensor index");
    let slice = if idx.is_multiple_of(2) {
        layer.weights.as_slice_mut()
    } else {
        layer.bias.as_slice_mut()
    };
    slice.expect("standard layout")
}

fn tensor(params: &ModelParams, idx: usize) -> Vec<f64> {
    let layer = params.layers()[idx / 2];
    if idx.is_multiple_of(2) {
        layer.weights.iter().copied().collect()
    } else {
        layer.bias.to_vec()
    }
}

pub fn check_case(problem: &Problem, adversary: AdversaryMode, noise: bool) -> CaseReport {
    let trace = forward(&problem.inputs.view(), &problem.params).expect("shapes match");
    let grads = backward(
        &trace,
        &problem.params,
        BatchLabels {
            targets: &problem.targets,
            private: &problem.private,
        },
        adversary,
    );
    compare(problem, adversary, noise, &grads)
}

/// Compares `grads` against finite differences of the objectives implied by
/// `adversary`.
pub fn compare(problem: &Problem, adversary: AdversaryMode, noise: bool, grads: &ModelParams) -> CaseReport {
    let objective = |idx: usize, (lt, la): (f64, f64)| -> f64 {
        match idx {
            0..=3 if adversary.enabled => lt - adversary.lambda * la,
            0..=5 => lt,
            _ if adversary.enabled => la,
            // a disabled adversary head must receive no gradient
            _ => 0.0,
        }
    };

    let tensors = (0..TENSOR_NAMES.len())
        .map(|idx| {
            let analytic = tensor(grads, idx);
            let mut worst = 0.0_f64;
            let mut params = problem.params.clone();
            for (k, &a) in analytic.iter().enumerate() {
                let orig = tensor_mut(&mut params, idx)[k];
                tensor_mut(&mut params, idx)[k] = orig + STEP;
                let plus = objective(idx, problem.losses(&params));
                tensor_mut(&mut params, idx)[k] = orig - STEP;
                let minus = objective(idx, problem.losses(&params));
                tensor_mut(&mut params, idx)[k] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                worst = worst.max(relative_error(a, numeric));
            }
            TensorCheck {
                tensor: TENSOR_NAMES[idx],
                max_relative_error: worst,
                entries: analytic.len(),
            }
        })
        .collect();

    CaseReport {
        lambda: adversary.lambda,
        noise,
        adversary: adversary.enabled,
        tensors,
    }
}

/// Every lambda in {0, 0.5, 1} with noise off and on, plus the
/// adversary-disabled model with and without noise.
pub fn run_suite(seed: u64) -> GradcheckReport {
    let mut cases = Vec::new();
    for noise in [false, true] {
        let problem = Problem::random(seed, noise);
        for lambda in [0.0, 0.5, 1.0] {
            cases.push(check_case(&problem, AdversaryMode { enabled: true, lambda }, noise));
        }
        cases.push(check_case(
            &problem,
            AdversaryMode {
                enabled: false,
                lambda: 1.0,
            },
            noise,
        ));
    }
    GradcheckReport { cases }
}
