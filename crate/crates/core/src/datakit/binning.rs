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

//! Equal-frequency binning of birth years.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};

/// Ascending, strictly increasing year thresholds. A year `y` lands in the
/// bin equal to the number of edges strictly below it, so a year sitting on
/// an edge belongs to the lower (older) bin and bin 0 holds the oldest cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<i32>);

impl BinEdges {
    pub fn bin_count(&self) -> usize {
        self.0.len() + 1
    }

    pub fn assign(&self, year: i32) -> usize {
        self.0.partition_point(|&edge| edge < year)
    }
}

/// Quantile binning into `k` bins.
///
/// Edges are picked greedily among the distinct observed years: the `j`-th
/// edge is the year whose cumulative count is closest to `j * n / k`, subject
/// to leaving enough distinct years for the remaining bins. Ties prefer the
/// older year.
pub fn bin_birth_years(years: &[i32], k: usize) -> Result<(BinEdges, Vec<usize>)> {
    if years.is_empty() {
        return Err(CapeError::validation("birth_year", "no years to bin"));
    }
    if k < 2 {
        return Err(CapeError::validation("age_bins", "need at least 2 bins"));
    }

    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &y in years {
        *counts.entry(y).or_default() += 1;
    }
    if k > counts.len() {
        return Err(CapeError::TooFewDistinctYears {
            bins: k,
            distinct: counts.len(),
        });
    }

    let distinct: Vec<i32> = counts.keys().copied().collect();
    let cumulative: Vec<usize> = counts
        .values()
        .scan(0usize, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();

    let n = years.len() as f64;
    let mut edges = Vec::with_capacity(k - 1);
    // first candidate position for the next edge
    let mut lo = 0usize;
    for j in 1..k {
        let target = j as f64 * n / k as f64;
        // the last k - 1 - j distinct values must stay available for later
        // edges, and the largest value can never be an edge
        let hi = distinct.len() - 1 - (k - 1 - j);
        let mut best = lo;
        let mut best_gap = f64::INFINITY;
        for (pos, &cum) in cumulative.iter().enumerate().take(hi).skip(lo) {
            let gap = (cum as f64 - target).abs();
            if gap < best_gap {
                best_gap = gap;
                best = pos;
            }
        }
        edges.push(distinct[best]);
        lo = best + 1;
    }

    let edges = BinEdges(edges);
    let classes = years.iter().map(|&y| edges.assign(y)).collect();
    Ok((edges, classes))
}
