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

use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let k = counts.len();
        assert!(counts.iter().all(|r| r.len() == k), "confusion matrix must be square");
        ConfusionMatrix { counts }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(CapeError::DimensionMismatch {
            what: "predictions vs gold labels".into(),
            expected: golds.len(),
            found: preds.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        for idx in [p, g] {
            if idx >= k {
                return Err(CapeError::ClassOutOfRange { index: idx, classes: k });
            }
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    /// `None` for classes that appear neither in gold nor in predictions.
    pub per_class: Vec<Option<f64>>,
}

/// Macro-averaged F1. Classes absent from both gold and predictions are left
/// out of the average; a class with zero precision and recall scores 0.
pub fn f1_report(m: &ConfusionMatrix) -> Result<F1Report> {
    if m.total() == 0 {
        return Err(CapeError::EmptyConfusion);
    }
    let k = m.classes();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = m.counts[c][c] as f64;
            let gold: u64 = m.counts[c].iter().sum();
            let predicted: u64 = m.counts.iter().map(|row| row[c]).sum();
            if gold == 0 && predicted == 0 {
                return None;
            }
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if gold > 0 { tp / gold as f64 } else { 0.0 };
            Some(if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            })
        })
        .collect();
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_f1 = included.iter().sum::<f64>() / included.len() as f64;
    Ok(F1Report { macro_f1, per_class })
}

pub fn f1_macro(m: &ConfusionMatrix) -> Result<f64> {
    f1_report(m).map(|r| r.macro_f1)
}
