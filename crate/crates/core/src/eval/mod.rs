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

//! Scoring: confusion matrices, macro-F1, attacker probes and multi-run
//! aggregation.

mod metrics;
mod probe;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use self::metrics::{confusion, f1_macro, f1_report, ConfusionMatrix, F1Report};
pub use self::probe::{
    majority_probe, probe_attack, ProbeConfig, ProbeResult, ProbeSplit, RawFeatures, ReleasedPipeline, Representation,
};
use crate::datakit::{Attribute, Dataset};
use crate::error::Result;

/// Scores of one run of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub variant: String,
    pub seed: u64,
    pub target_f1: f64,
    pub attacker_f1: f64,
    pub target_per_class: Vec<Option<f64>>,
    pub attacker_per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Arithmetic mean and population standard deviation.
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanSd { mean, sd: var.sqrt() }
    }

    /// `mean / sd`, four decimals each.
    pub fn render(&self) -> String {
        format!("{:.4} / {:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub variant: String,
    pub runs: usize,
    pub target_f1: MeanSd,
    pub attacker_f1: MeanSd,
    pub seeds: Vec<u64>,
}

/// Mean and population SD over the given runs. `runs` must be non-empty.
pub fn aggregate(runs: &[RunScores]) -> AggregateReport {
    assert!(!runs.is_empty(), "aggregate needs at least one run");
    let target: Vec<f64> = runs.iter().map(|r| r.target_f1).collect();
    let attacker: Vec<f64> = runs.iter().map(|r| r.attacker_f1).collect();
    AggregateReport {
        variant: runs[0].variant.clone(),
        runs: runs.len(),
        target_f1: MeanSd::of(&target),
        attacker_f1: MeanSd::of(&attacker),
        seeds: runs.iter().map(|r| r.seed).collect(),
    }
}

/// Rows of `embeddings` for the examples of `d`, in dataset order.
pub fn dataset_rows(d: &Dataset, embeddings: &Array2<f64>) -> Array2<f64> {
    let idx: Vec<usize> = d.examples.iter().map(|e| e.index).collect();
    embeddings.select(Axis(0), &idx)
}

/// [`probe_attack`] on a named attribute of preprocessed splits.
pub fn probe_attribute<R: Representation + ?Sized>(
    pipeline: &R,
    train: &Dataset,
    test: &Dataset,
    embeddings: &Array2<f64>,
    attribute: Attribute,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let classes = train.classes(attribute)?;
    let train_labels = train.private_labels(attribute)?;
    let test_labels = test.private_labels(attribute)?;
    let train_x = dataset_rows(train, embeddings);
    let test_x = dataset_rows(test, embeddings);
    probe_attack(
        pipeline,
        ProbeSplit {
            features: train_x.view(),
            labels: &train_labels,
        },
        ProbeSplit {
            features: test_x.view(),
            labels: &test_labels,
        },
        classes,
        cfg,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(target: f64, attacker: f64, seed: u64) -> RunScores {
        RunScores {
            variant: "cape".into(),
            seed,
            target_f1: target,
            attacker_f1: attacker,
            target_per_class: vec![],
            attacker_per_class: vec![],
        }
    }

    #[test]
    fn constant_runs_have_zero_sd() {
        let runs: Vec<_> = (0..4).map(|s| run(0.5, 0.5, s)).collect();
        let a = aggregate(&runs);
        assert_eq!(a.target_f1, MeanSd { mean: 0.5, sd: 0.0 });
        assert_eq!(a.runs, 4);
        assert_eq!(a.seeds, vec![0, 1, 2, 3]);
    }

    #[test]
    fn two_point_population_sd() {
        let a = aggregate(&[run(0.0, 1.0, 0), run(1.0, 0.0, 1)]);
        assert_eq!(a.target_f1, MeanSd { mean: 0.5, sd: 0.5 });
        assert_eq!(a.attacker_f1, MeanSd { mean: 0.5, sd: 0.5 });
    }

    #[test]
    fn four_run_sd_matches_oracle() {
        let xs = [0.7558, 0.7431, 0.7702, 0.7611];
        let runs: Vec<_> = xs.iter().enumerate().map(|(i, &x)| run(x, x, i as u64)).collect();
        let a = aggregate(&runs);
        // oracle: two-pass population variance written out longhand
        let mean = (xs[0] + xs[1] + xs[2] + xs[3]) / 4.0;
        let ss = (xs[0] - mean).powi(2) + (xs[1] - mean).powi(2) + (xs[2] - mean).powi(2) + (xs[3] - mean).powi(2);
        assert!((a.target_f1.mean - mean).abs() < 1e-12);
        assert!((a.target_f1.sd - (ss / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_rendering() {
        assert_eq!(
            MeanSd {
                mean: 0.7558,
                sd: 0.0093
            }
            .render(),
            "0.7558 / 0.0093"
        );
        assert_eq!(MeanSd { mean: 0.5, sd: 0.0 }.render(), "0.5000 / 0.0000");
    }
}
