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

//! Attribute-inference probes on released representations.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, f1_report, ConfusionMatrix, F1Report};
use crate::adversarial_model::{
    argmax, extractor_outputs, mean_cross_entropy, predict_logits, softmax_rows, Dense, ModelParams,
};
use crate::error::{CapeError, Result};
use crate::privacy::{streams, NoiseRng, PrivacyParams};

/// Whatever an attacker observes for a batch of featurized examples.
pub trait Representation: Sync {
    fn release(&self, features: &ArrayView2<f64>, rng: &mut NoiseRng) -> Result<Array2<f64>>;

    /// False when two releases of the same rows can differ.
    fn is_deterministic(&self) -> bool;
}

/// The frozen defense pipeline: optional normalize+perturb, then the
/// trained extractor.
#[derive(Debug, Clone, Copy)]
pub struct ReleasedPipeline<'a> {
    pub params: &'a ModelParams,
    pub privacy: Option<&'a PrivacyParams>,
}

impl Representation for ReleasedPipeline<'_> {
    fn release(&self, features: &ArrayView2<f64>, rng: &mut NoiseRng) -> Result<Array2<f64>> {
        extractor_outputs(features, self.params, self.privacy, rng)
    }

    fn is_deterministic(&self) -> bool {
        self.privacy.is_none()
    }
}

/// The featurizer output itself, as a direct-on-features oracle.
#[derive(Debug, Clone, Copy)]
pub struct RawFeatures;

impl Representation for RawFeatures {
    fn release(&self, features: &ArrayView2<f64>, _rng: &mut NoiseRng) -> Result<Array2<f64>> {
        Ok(features.as_standard_layout().into_owned())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Candidate ridge strengths, weakest first.
pub const DEFAULT_PROBE_L2_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    /// `None` trains on the whole released training set every step.
    pub batch_size: Option<usize>,
    /// Step size in units of `1 / L`, where `L` bounds the curvature of the
    /// probe objective on the first training release. Values below 2 are
    /// stable for full-batch descent.
    pub learning_rate: f64,
    /// Ridge strengths `l2` (penalty `l2 / 2 * ||W||^2`, bias unpenalized)
    /// to choose from, weakest first. With more than one candidate the one
    /// with the lowest validation cross-entropy wins, ties going to the
    /// later entry.
    pub l2_grid: Vec<f64>,
    /// Share of the probe's training rows held out to pick `l2`.
    pub validation_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            batch_size: None,
            learning_rate: 1.0,
            l2_grid: DEFAULT_PROBE_L2_GRID.to_vec(),
            validation_fraction: 0.2,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == Some(0) {
            return Err(CapeError::Config("probe epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CapeError::Config("probe learning_rate must be > 0".into()));
        }
        if self.l2_grid.is_empty() || !self.l2_grid.iter().all(|l| l.is_finite() && *l >= 0.0) {
            return Err(CapeError::Config("probe l2_grid must be non-empty and >= 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CapeError::Config("probe validation_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub f1: F1Report,
    pub confusion: ConfusionMatrix,
    /// The ridge strength the final probe was trained with.
    pub l2: f64,
}

/// Labelled rows for a probe.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSplit<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

/// Centres every column on its mean and divides all columns by one shared
/// scale, the root-mean-square of the centred values. Frozen after fitting.
/// A shared scale keeps near-constant columns small instead of blowing
/// them up to unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: f64,
}

impl Standardizer {
    pub fn fit(x: &ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let sq: f64 = x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
            .sum();
        let rms = (sq / (n * x.ncols().max(1) as f64)).sqrt();
        Standardizer {
            mean,
            scale: if rms > 0.0 { rms.recip() } else { 1.0 },
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v = (*v - m) * self.scale;
            }
        }
    }
}

const POWER_ITERATIONS: usize = 100;

/// Upper bound on the Hessian of mean softmax cross-entropy plus ridge:
/// `0.5 * lambda_max(E[x' x'^T]) + l2` with `x' = [x, 1]`. The largest
/// eigenvalue comes from power iteration started at the all-ones vector.
fn smoothness(x: &ArrayView2<f64>, l2: f64) -> f64 {
    let n = x.nrows().max(1) as f64;
    let d = x.ncols() + 1;
    let mut m = ndarray::Array2::<f64>::zeros((d, d));
    m.slice_mut(ndarray::s![..d - 1, ..d - 1]).assign(&(x.t().dot(x) / n));
    let means = x.sum_axis(Axis(0)) / n;
    m.slice_mut(ndarray::s![..d - 1, d - 1]).assign(&means);
    m.slice_mut(ndarray::s![d - 1, ..d - 1]).assign(&means);
    m[[d - 1, d - 1]] = 1.0;

    let mut v = ndarray::Array1::<f64>::from_elem(d, 1.0 / (d as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = w / norm;
    }
    // power iteration approaches lambda_max from below; a small margin
    // keeps the step inside the stable region
    0.5 * lambda.max(1.0) * 1.05 + l2
}

/// A trained probe together with the input map it was trained under.
struct FittedProbe {
    layer: Dense,
    scaler: Standardizer,
}

impl FittedProbe {
    fn logits<R: Representation + ?Sized>(
        &self,
        pipeline: &R,
        features: &ArrayView2<f64>,
        rng: &mut NoiseRng,
    ) -> Result<Array2<f64>> {
        let mut x = pipeline.release(features, rng)?;
        self.scaler.apply(&mut x);
        Ok(self.layer.apply(&x.view()))
    }
}

/// Trains one probe per ridge strength in `l2s`. Every candidate starts
/// from the same init and sees the same release sequence, so the result for
/// each entry equals a separate run with that single value. `noise_rng`
/// feeds every release.
#[allow(clippy::too_many_arguments)]
fn fit_probes<R: Representation + ?Sized>(
    pipeline: &R,
    features: &ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    l2s: &[f64],
    seed: u64,
    mut noise_rng: NoiseRng,
) -> Result<Vec<FittedProbe>> {
    let mut init_rng = NoiseRng::new(seed, streams::PROBE_INIT);
    let mut shuffle_rng = NoiseRng::new(seed, streams::PROBE_SHUFFLE);

    let mut released = pipeline.release(features, &mut noise_rng)?;
    let scaler = Standardizer::fit(&released.view());
    scaler.apply(&mut released);
    let curvature = smoothness(&released.view(), 0.0);
    let init = Dense::glorot(released.ncols(), classes, &mut init_rng);
    let mut layers: Vec<(Dense, f64, f64)> = l2s
        .iter()
        .map(|&l2| (init.clone(), l2, cfg.learning_rate / (curvature + l2)))
        .collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let batch_size = cfg.batch_size.unwrap_or(order.len());

    for epoch in 0..cfg.epochs {
        if epoch > 0 && !pipeline.is_deterministic() {
            released = pipeline.release(features, &mut noise_rng)?;
            scaler.apply(&mut released);
        }
        order.shuffle(shuffle_rng.inner_mut());
        for (batch, rows) in order.chunks(batch_size).enumerate() {
            let x = released.select(Axis(0), rows);
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            for (layer, l2, step) in layers.iter_mut() {
                let logits = layer.apply(&x.view());
                if !mean_cross_entropy(&logits.view(), &y).is_finite() {
                    return Err(CapeError::Diverged {
                        epoch,
                        batch,
                        learning_rate: cfg.learning_rate,
                    });
                }
                let mut d = softmax_rows(&logits.view());
                for (mut row, &label) in d.rows_mut().into_iter().zip(&y) {
                    row[label] -= 1.0;
                }
                d /= y.len() as f64;
                let mut grad_w = x.t().dot(&d);
                grad_w.scaled_add(*l2, &layer.weights);
                layer.weights.scaled_add(-*step, &grad_w);
                layer.bias.scaled_add(-*step, &d.sum_axis(Axis(0)));
            }
        }
    }
    Ok(layers
        .into_iter()
        .map(|(layer, _, _)| FittedProbe {
            layer,
            scaler: scaler.clone(),
        })
        .collect())
}

/// Picks the grid value whose probe, trained on the rest of the training
/// rows, has the lowest cross-entropy on a held-out share of them.
fn select_l2<R: Representation + ?Sized>(
    pipeline: &R,
    train: ProbeSplit<'_>,
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if cfg.l2_grid.len() == 1 {
        return Ok(cfg.l2_grid[0]);
    }
    let n = train.labels.len();
    if n < 2 {
        return Err(CapeError::validation(
            "probe",
            "too few training rows to hold out a validation set",
        ));
    }
    let held_out = ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(NoiseRng::new(seed, streams::PROBE_SHUFFLE).split(1).inner_mut());
    let (val_rows, fit_rows) = order.split_at(held_out);
    let fit_x = train.features.select(Axis(0), fit_rows);
    let fit_y: Vec<usize> = fit_rows.iter().map(|&r| train.labels[r]).collect();
    let val_x = train.features.select(Axis(0), val_rows);
    let val_y: Vec<usize> = val_rows.iter().map(|&r| train.labels[r]).collect();

    let noise = NoiseRng::new(seed, streams::PROBE_TRAIN_NOISE).split(1);
    let probes = fit_probes(pipeline, &fit_x.view(), &fit_y, classes, cfg, &cfg.l2_grid, seed, noise)?;
    let mut val_rng = NoiseRng::new(seed, streams::PROBE_TEST_NOISE).split(1);
    // every candidate shares the scaler of the common first release
    let mut val_release = pipeline.release(&val_x.view(), &mut val_rng)?;
    probes[0].scaler.apply(&mut val_release);
    let mut best = (f64::INFINITY, cfg.l2_grid[0]);
    for (probe, &l2) in probes.iter().zip(&cfg.l2_grid) {
        let logits = probe.layer.apply(&val_release.view());
        let loss = mean_cross_entropy(&logits.view(), &val_y);
        if loss <= best.0 {
            best = (loss, l2);
        }
    }
    Ok(best.1)
}

/// Trains a fresh softmax-regression probe (one dense layer) on the
/// released training representations and scores it by macro-F1 on the
/// released test representations.
///
/// Inputs are centred and scaled with statistics of the first training
/// release. Non-deterministic representations are re-released every
/// epoch. The ridge strength is picked on held-out training rows before
/// the final probe is trained on all of them.
pub fn probe_attack<R: Representation + ?Sized>(
    pipeline: &R,
    train: ProbeSplit<'_>,
    test: ProbeSplit<'_>,
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    cfg.validate()?;
    if train.labels.is_empty() || test.labels.is_empty() {
        return Err(CapeError::validation("probe", "empty train or test split"));
    }
    for (rows, labels, what) in [
        (train.features.nrows(), train.labels.len(), "train"),
        (test.features.nrows(), test.labels.len(), "test"),
    ] {
        if rows != labels {
            return Err(CapeError::DimensionMismatch {
                what: format!("probe {what} labels vs rows"),
                expected: rows,
                found: labels,
            });
        }
    }
    if let Some(&bad) = train.labels.iter().chain(test.labels).find(|&&y| y >= classes) {
        return Err(CapeError::ClassOutOfRange { index: bad, classes });
    }

    let l2 = select_l2(pipeline, train, classes, cfg, seed)?;
    let probe = fit_probes(
        pipeline,
        &train.features,
        train.labels,
        classes,
        cfg,
        &[l2],
        seed,
        NoiseRng::new(seed, streams::PROBE_TRAIN_NOISE),
    )?
    .remove(0);
    let mut test_rng = NoiseRng::new(seed, streams::PROBE_TEST_NOISE);
    let logits = probe.logits(pipeline, &test.features, &mut test_rng)?;
    let confusion = confusion(&predict_logits(&logits.view()), test.labels, classes)?;
    Ok(ProbeResult {
        f1: f1_report(&confusion)?,
        confusion,
        l2,
    })
}

/// The no-information attacker: always predicts the most frequent training
/// class (lowest index on ties).
pub fn majority_probe(train_labels: &[usize], test_labels: &[usize], classes: usize) -> Result<ProbeResult> {
    let mut counts = vec![0usize; classes];
    for &y in train_labels {
        if y >= classes {
            return Err(CapeError::ClassOutOfRange { index: y, classes });
        }
        counts[y] += 1;
    }
    let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let majority = argmax(&counts_f);
    let preds = vec![majority; test_labels.len()];
    let confusion = confusion(&preds, test_labels, classes)?;
    Ok(ProbeResult {
        f1: f1_report(&confusion)?,
        confusion,
        l2: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Constant;

    impl Representation for Constant {
        fn release(&self, features: &ArrayView2<f64>, _rng: &mut NoiseRng) -> Result<Array2<f64>> {
            Ok(Array2::from_elem((features.nrows(), 3), 0.7))
        }

        fn is_deterministic(&self) -> bool {
            true
        }
    }

    #[test]
    fn standardizer_centres_and_shares_one_scale() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let s = Standardizer::fit(&x.view());
        let mut y = x.clone();
        s.apply(&mut y);
        // centred column 0 is [-2, 0, 2]; mean square over all six cells is 8/6
        let expected = 2.0 / (8.0f64 / 6.0).sqrt();
        assert!((y[[0, 0]] + expected).abs() < 1e-12);
        assert!((y[[2, 0]] - expected).abs() < 1e-12);
        assert!(y.column(1).iter().all(|v| *v == 0.0));
        let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((mean_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardizer_on_constant_input_only_centres() {
        let x = Array2::from_elem((4, 3), 2.5);
        let mut y = x.clone();
        Standardizer::fit(&x.view()).apply(&mut y);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn majority_breaks_ties_low() {
        let r = majority_probe(&[1, 0, 1, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.confusion.get(0, 0), 1);
        assert_eq!(r.confusion.get(1, 0), 1);
        assert!(majority_probe(&[2], &[0], 2).is_err());
    }

    #[test]
    fn constant_representation_scores_as_majority() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| (i * 7 + j) as f64);
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 3 == 0)).collect();
        let cfg = ProbeConfig::default();
        let probe = probe_attack(
            &Constant,
            ProbeSplit {
                features: x.view(),
                labels: &labels,
            },
            ProbeSplit {
                features: x.view(),
                labels: &labels,
            },
            2,
            &cfg,
            0,
        )
        .unwrap();
        let majority = majority_probe(&labels, &labels, 2).unwrap();
        assert_eq!(probe.f1.macro_f1, majority.f1.macro_f1);
        assert_eq!(probe.confusion, majority.confusion);
    }

    #[test]
    fn separable_features_are_recovered_and_repeatable() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((60, 3), |(i, j)| if labels[i] == j { 1.0 } else { 0.0 });
        let run = |seed| {
            probe_attack(
                &RawFeatures,
                ProbeSplit {
                    features: x.view(),
                    labels: &labels,
                },
                ProbeSplit {
                    features: x.view(),
                    labels: &labels,
                },
                3,
                &ProbeConfig::default(),
                seed,
            )
            .unwrap()
        };
        let a = run(4);
        assert_eq!(a.f1.macro_f1, 1.0);
        assert_eq!(a, run(4));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Array2::zeros((3, 2));
        let cfg = ProbeConfig::default();
        let ok = ProbeSplit {
            features: x.view(),
            labels: &[0, 1, 0],
        };
        let short = ProbeSplit {
            features: x.view(),
            labels: &[0, 1],
        };
        let empty_x = Array2::zeros((0, 2));
        let empty = ProbeSplit {
            features: empty_x.view(),
            labels: &[],
        };
        assert!(probe_attack(&RawFeatures, short, ok, 2, &cfg, 0).is_err());
        assert!(probe_attack(&RawFeatures, ok, empty, 2, &cfg, 0).is_err());
        let bad = ProbeConfig {
            batch_size: Some(0),
            ..cfg
        };
        assert!(probe_attack(&RawFeatures, ok, ok, 2, &bad, 0).is_err());
    }
}
