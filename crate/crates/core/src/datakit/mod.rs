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

//! Dataset schema, ingestion, preprocessing and splitting.

mod binning;
mod geohash;
mod record;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use self::binning::{bin_birth_years, BinEdges};
pub use self::geohash::geohash_encode;
pub use self::record::{parse_record, read_jsonl, write_jsonl, RawRecord};
pub use self::synthetic::{generate_records, generate_synthetic, SyntheticSpec};
use crate::error::{CapeError, Result};
use crate::privacy::NoiseRng;

pub const RATING_CLASSES: usize = 5;
pub const DEFAULT_LOCATION_PRECISION: usize = 2;
pub const DEFAULT_AGE_BINS: usize = 6;

/// A private attribute an attacker may try to infer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Location,
    Age,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::Location, Attribute::Age];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Location => "location",
            Attribute::Age => "age",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = CapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gender" => Ok(Attribute::Gender),
            "location" => Ok(Attribute::Location),
            "age" => Ok(Attribute::Age),
            _ => Err(CapeError::MissingAttribute(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Row of the source file this example came from. Precomputed
    /// embeddings are looked up by this index.
    pub index: usize,
    pub text: String,
    pub target: usize,
    pub private: BTreeMap<Attribute, usize>,
}

/// How raw values were mapped to class indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub gender_values: Vec<String>,
    pub location_cells: Vec<String>,
    pub age_edges: Vec<i32>,
    pub warnings: Vec<String>,
}

/// Preprocessed examples. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub attribute_schema: BTreeMap<Attribute, usize>,
    pub label_count: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self, attribute: Attribute) -> Result<usize> {
        self.attribute_schema
            .get(&attribute)
            .copied()
            .ok_or_else(|| CapeError::MissingAttribute(attribute.name().to_string()))
    }

    pub fn targets(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.target).collect()
    }

    pub fn private_labels(&self, attribute: Attribute) -> Result<Vec<usize>> {
        self.classes(attribute)?;
        self.examples
            .iter()
            .map(|e| {
                e.private
                    .get(&attribute)
                    .copied()
                    .ok_or_else(|| CapeError::MissingAttribute(attribute.name().to_string()))
            })
            .collect()
    }

    /// Copies the examples at `positions` (positions into `self.examples`).
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            examples: positions.iter().map(|&i| self.examples[i].clone()).collect(),
            attribute_schema: self.attribute_schema.clone(),
            label_count: self.label_count,
            meta: self.meta.clone(),
        }
    }

    /// Checks every class index against the declared cardinalities.
    pub fn check_conformance(&self) -> Result<()> {
        for e in &self.examples {
            if e.target >= self.label_count {
                return Err(CapeError::ClassOutOfRange {
                    index: e.target,
                    classes: self.label_count,
                });
            }
            for (attr, &classes) in &self.attribute_schema {
                match e.private.get(attr) {
                    Some(&z) if z < classes => {}
                    Some(&z) => return Err(CapeError::ClassOutOfRange { index: z, classes }),
                    None => return Err(CapeError::MissingAttribute(attr.name().to_string())),
                }
            }
        }
        Ok(())
    }
}

/// Maps raw records to class indices.
///
/// Gender values are indexed in lexicographic order, geohash cells in order
/// of first appearance, and birth years by equal-frequency binning.
pub fn preprocess(records: &[RawRecord], location_precision: usize, age_bins: usize) -> Result<Dataset> {
    if records.is_empty() {
        return Err(CapeError::validation("records", "dataset is empty"));
    }

    let gender_values: Vec<String> = records
        .iter()
        .map(|r| r.gender.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gender_index: HashMap<&str, usize> = gender_values.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();

    let mut location_cells: Vec<String> = Vec::new();
    let mut location_index: HashMap<String, usize> = HashMap::new();
    let mut locations = Vec::with_capacity(records.len());
    for r in records {
        let cell = geohash_encode(r.latitude, r.longitude, location_precision)?;
        let next = location_cells.len();
        let idx = *location_index.entry(cell.clone()).or_insert_with(|| {
            location_cells.push(cell);
            next
        });
        locations.push(idx);
    }

    let years: Vec<i32> = records.iter().map(|r| r.birth_year).collect();
    let (edges, ages) = bin_birth_years(&years, age_bins)?;

    let mut warnings = Vec::new();
    if gender_values.len() < 2 {
        warnings.push(format!(
            "only {} distinct gender value(s) observed",
            gender_values.len()
        ));
    }
    if location_cells.len() < 2 {
        warnings.push(format!(
            "only {} distinct geohash cell(s) observed",
            location_cells.len()
        ));
    }

    let examples = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut private = BTreeMap::new();
            private.insert(Attribute::Gender, gender_index[r.gender.as_str()]);
            private.insert(Attribute::Location, locations[i]);
            private.insert(Attribute::Age, ages[i]);
            Example {
                index: i,
                text: r.text.clone(),
                target: usize::from(r.rating - 1),
                private,
            }
        })
        .collect();

    let mut attribute_schema = BTreeMap::new();
    // a single observed gender still needs a binary head
    attribute_schema.insert(Attribute::Gender, gender_values.len().max(2));
    attribute_schema.insert(Attribute::Location, location_cells.len());
    attribute_schema.insert(Attribute::Age, edges.bin_count());

    let dataset = Dataset {
        examples,
        attribute_schema,
        label_count: RATING_CLASSES,
        meta: DatasetMeta {
            gender_values,
            location_cells,
            age_edges: edges.0,
            warnings,
        },
    };
    dataset.check_conformance()?;
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// The default 70/30 split under `seed`.
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed,
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::new(0)
    }
}

/// Seeded shuffle, then the first `round(train_fraction * n)` examples
/// become the training set. Both halves keep the shuffled order.
pub fn split_dataset(d: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if d.len() < 2 {
        return Err(CapeError::validation("dataset", "need at least 2 examples to split"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CapeError::validation(
            "train_fraction",
            format!("{} is not in (0, 1)", spec.train_fraction),
        ));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut rng = NoiseRng::new(spec.seed, crate::privacy::streams::SPLIT);
    order.shuffle(rng.inner_mut());
    let n_train = (spec.train_fraction * d.len() as f64).round() as usize;
    Ok((d.subset(&order[..n_train]), d.subset(&order[n_train..])))
}
