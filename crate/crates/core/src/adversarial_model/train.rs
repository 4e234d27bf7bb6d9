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

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward, combined_loss, extract, forward, mean_cross_entropy, predict_logits};
use super::{AdversaryMode, BatchLabels, ModelParams, Shape};
use crate::error::{CapeError, Result};
use crate::privacy::{release_rows, streams, NoiseRng, PrivacyParams};

/// Well above the gradient norms seen on clean inputs, so it only binds
/// when Laplace noise makes a batch extreme.
pub const DEFAULT_MAX_GRAD_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub noise_enabled: bool,
    pub adversary_enabled: bool,
    /// Global gradient-norm cap applied before each step; `None` is plain
    /// gradient descent.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            hidden1: 64,
            hidden2: 32,
            noise_enabled: false,
            adversary_enabled: false,
            max_grad_norm: Some(DEFAULT_MAX_GRAD_NORM),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CapeError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CapeError::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(CapeError::Config("hidden widths must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CapeError::Config("learning_rate must be > 0".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(CapeError::Config("max_grad_norm must be > 0".into()));
            }
        }
        Ok(())
    }

    fn adversary_mode(&self) -> AdversaryMode {
        AdversaryMode {
            enabled: self.adversary_enabled,
            lambda: self.lambda,
        }
    }
}

/// Featurized training examples. Row `i` of `features` pairs with
/// `targets[i]` and `private[i]`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub features: ArrayView2<'a, f64>,
    pub targets: &'a [usize],
    pub private: &'a [usize],
    pub target_classes: usize,
    pub private_classes: usize,
}

impl TrainingData<'_> {
    fn check(&self) -> Result<()> {
        let n = self.features.nrows();
        for (what, len) in [
            ("target labels", self.targets.len()),
            ("private labels", self.private.len()),
        ] {
            if len != n {
                return Err(CapeError::DimensionMismatch {
                    what: format!("{what} vs feature rows"),
                    expected: n,
                    found: len,
                });
            }
        }
        if n == 0 {
            return Err(CapeError::validation("train", "no training examples"));
        }
        for (&label, classes) in self
            .targets
            .iter()
            .map(|y| (y, self.target_classes))
            .chain(self.private.iter().map(|z| (z, self.private_classes)))
        {
            if label >= classes {
                return Err(CapeError::ClassOutOfRange { index: label, classes });
            }
        }
        Ok(())
    }
}

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub target: f64,
    pub adversary: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
}

/// Hook into the training loop, mostly for tests and diagnostics.
pub trait FitObserver {
    /// Called after every batch is released, before the forward pass.
    /// `rows` are row indices into the training features; `noise` is the
    /// noise added to each released row, if any.
    fn on_batch(&mut self, _epoch: usize, _rows: &[usize], _noise: Option<&Array2<f64>>) {}
}

pub struct NoObserver;
impl FitObserver for NoObserver {}

fn gather(x: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Step multiplier that caps the gradient norm at `max`.
fn clip_factor(grads: &ModelParams, max: Option<f64>) -> f64 {
    match max {
        Some(max) => {
            let norm = grads.l2_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

/// Mini-batch gradient descent with a constant learning rate.
///
/// Randomness comes from three streams of `seed`: weight init, per-epoch
/// shuffling and training noise. When noise is enabled each batch is
/// normalized and perturbed afresh, so the same example gets different
/// noise every epoch.
pub fn fit(
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    privacy: Option<&PrivacyParams>,
    seed: u64,
    observer: &mut dyn FitObserver,
) -> Result<FitOutcome> {
    cfg.validate()?;
    data.check()?;
    if cfg.noise_enabled != privacy.is_some() {
        return Err(CapeError::Config(
            "noise_enabled requires privacy parameters and vice versa".into(),
        ));
    }

    let shape = Shape {
        input: data.features.ncols(),
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        target_classes: data.target_classes,
        private_classes: data.private_classes,
    };
    let mut params = ModelParams::init(shape, &mut NoiseRng::new(seed, streams::INIT));
    let mut shuffle_rng = NoiseRng::new(seed, streams::SHUFFLE);
    let mut noise_rng = NoiseRng::new(seed, streams::TRAIN_NOISE);

    let n = data.features.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mode = cfg.adversary_mode();

    for epoch in 0..cfg.epochs {
        order.shuffle(shuffle_rng.inner_mut());
        let (mut sum_t, mut sum_a, mut sum_c, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let raw = gather(&data.features, rows);
            let (x, noise) = release_rows(&raw.view(), privacy, &mut noise_rng)?;
            observer.on_batch(epoch, rows, noise.as_ref());

            let targets: Vec<usize> = rows.iter().map(|&r| data.targets[r]).collect();
            let private: Vec<usize> = rows.iter().map(|&r| data.private[r]).collect();
            let trace = forward(&x.view(), &params)?;
            let target_loss = mean_cross_entropy(&trace.target_logits.view(), &targets);
            let adversary_loss = if mode.enabled {
                mean_cross_entropy(&trace.adversary_logits.view(), &private)
            } else {
                0.0
            };
            let lambda = if mode.enabled { mode.lambda } else { 0.0 };
            let loss = combined_loss(target_loss, adversary_loss, lambda);
            if !loss.is_finite() {
                return Err(CapeError::Diverged {
                    epoch,
                    batch: batch_idx,
                    learning_rate: cfg.learning_rate,
                });
            }

            let grads = backward(
                &trace,
                &params,
                BatchLabels {
                    targets: &targets,
                    private: &private,
                },
                mode,
            );
            params.axpy(-cfg.learning_rate * clip_factor(&grads, cfg.max_grad_norm), &grads);
            if !params.is_finite() {
                return Err(CapeError::Diverged {
                    epoch,
                    batch: batch_idx,
                    learning_rate: cfg.learning_rate,
                });
            }

            sum_t += target_loss;
            sum_a += adversary_loss;
            sum_c += loss;
            batches += 1;
        }
        let b = batches as f64;
        history.push(LossRecord {
            target: sum_t / b,
            adversary: sum_a / b,
            combined: sum_c / b,
        });
    }

    Ok(FitOutcome { params, history })
}

/// Releases `features` (fresh noise from `rng` when `privacy` is set) and
/// returns target-class predictions.
pub fn evaluate_predictions(
    features: &ArrayView2<f64>,
    params: &ModelParams,
    privacy: Option<&PrivacyParams>,
    rng: &mut NoiseRng,
) -> Result<Vec<usize>> {
    let (x, _) = release_rows(features, privacy, rng)?;
    let h = extract(&x.view(), params)?;
    Ok(predict_logits(&params.target_head.apply(&h.view()).view()))
}

/// Releases `features` and runs them through the extractor: the
/// representation an attacker gets to see.
pub fn extractor_outputs(
    features: &ArrayView2<f64>,
    params: &ModelParams,
    privacy: Option<&PrivacyParams>,
    rng: &mut NoiseRng,
) -> Result<Array2<f64>> {
    let (x, _) = release_rows(features, privacy, rng)?;
    extract(&x.view(), params)
}
