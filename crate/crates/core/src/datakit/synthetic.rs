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

//! Synthetic review generator with controllable attribute leakage.
//!
//! Every text has the same number of tokens:
//!
//! * two sentiment tokens drawn from the vocabulary of its rating (always
//!   present, independent of the private attributes),
//! * for each of gender, region and age cohort, four marker tokens of the
//!   author's class with probability `leak_strength`, otherwise four neutral
//!   tokens.
//!
//! Tokens are shuffled so position carries no signal.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{preprocess, Dataset, RawRecord, DEFAULT_AGE_BINS, DEFAULT_LOCATION_PRECISION};
use crate::error::{CapeError, Result};
use crate::privacy::{streams, NoiseRng};

const NEUTRAL_VOCAB: usize = 300;
const MARKER_VARIANTS: usize = 3;
const SENTIMENT_TOKENS: usize = 2;
const MARKER_TOKENS: usize = 4;

const GENDERS: [(&str, f64); 2] = [("F", 0.55), ("M", 0.45)];

/// Region anchors, each well inside a distinct precision-2 geohash cell
/// over the UK: gb (south-west), gc (midlands and north), gf (northern
/// Scotland), u1 (East Anglia).
const REGIONS: [(f64, f64, f64); 4] = [
    (50.3, -4.5, 0.15),
    (53.0, -2.5, 0.40),
    (57.3, -3.5, 0.20),
    (52.6, 1.0, 0.25),
];
const REGION_JITTER: f64 = 0.3;

/// Six birth cohorts of eight years each, 1950-1997.
const FIRST_COHORT_YEAR: i32 = 1950;
const COHORT_YEARS: i32 = 8;
const COHORTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub leak_strength: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, leak_strength: f64, seed: u64) -> Self {
        SyntheticSpec { n, leak_strength, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CapeError::validation("n", "need at least one record"));
        }
        if !(0.0..=1.0).contains(&self.leak_strength) {
            return Err(CapeError::validation(
                "leak_strength",
                format!("{} is not in [0, 1]", self.leak_strength),
            ));
        }
        Ok(())
    }
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn neutral<R: Rng>(rng: &mut R) -> String {
    format!("word{:03}", rng.random_range(0..NEUTRAL_VOCAB))
}

fn markers<R: Rng>(rng: &mut R, prefix: &str, class: usize, leak: f64, tokens: &mut Vec<String>) {
    let leaks = rng.random::<f64>() < leak;
    for _ in 0..MARKER_TOKENS {
        let variant = rng.random_range(0..MARKER_VARIANTS);
        if leaks {
            tokens.push(format!("{prefix}{class}v{variant}"));
        } else {
            tokens.push(neutral(rng));
        }
    }
}

pub fn generate_records(spec: &SyntheticSpec) -> Result<Vec<RawRecord>> {
    spec.validate()?;
    let mut rng = NoiseRng::new(spec.seed, streams::SYNTHETIC);
    let rng = rng.inner_mut();
    let ratings: Vec<u8> = (1..=5).collect();

    let mut records = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let rating = *ratings.choose(rng).expect("non-empty");
        let gender = pick_weighted(rng, GENDERS.iter().map(|g| g.1));
        let region = pick_weighted(rng, REGIONS.iter().map(|r| r.2));
        let cohort = rng.random_range(0..COHORTS);

        let (lat0, lon0, _) = REGIONS[region];
        let latitude = lat0 + rng.random_range(-REGION_JITTER..REGION_JITTER);
        let longitude = lon0 + rng.random_range(-REGION_JITTER..REGION_JITTER);
        let birth_year = FIRST_COHORT_YEAR + cohort as i32 * COHORT_YEARS + rng.random_range(0..COHORT_YEARS);

        let mut tokens = Vec::new();
        for _ in 0..SENTIMENT_TOKENS {
            let variant = rng.random_range(0..MARKER_VARIANTS);
            tokens.push(format!("rating{rating}v{variant}"));
        }
        markers(rng, "gender", gender, spec.leak_strength, &mut tokens);
        markers(rng, "region", region, spec.leak_strength, &mut tokens);
        markers(rng, "cohort", cohort, spec.leak_strength, &mut tokens);
        tokens.shuffle(rng);

        records.push(RawRecord {
            text: tokens.join(" "),
            rating,
            gender: GENDERS[gender].0.to_string(),
            birth_year,
            latitude,
            longitude,
        });
    }
    Ok(records)
}

/// Generates records and preprocesses them with the default settings. For
/// very small `n` the number of age bins shrinks to the number of distinct
/// birth years observed, and a warning is recorded.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let records = generate_records(spec)?;
    let mut years: Vec<i32> = records.iter().map(|r| r.birth_year).collect();
    years.sort_unstable();
    years.dedup();
    let bins = DEFAULT_AGE_BINS.min(years.len().max(2));
    if years.len() < 2 {
        // a single distinct year cannot be binned at all; fall back to
        // a constant age class
        let mut d = preprocess_without_age(&records)?;
        d.meta
            .warnings
            .push("single distinct birth year; age attribute is constant".into());
        return Ok(d);
    }
    let mut d = preprocess(&records, DEFAULT_LOCATION_PRECISION, bins)?;
    if bins < DEFAULT_AGE_BINS {
        d.meta.warnings.push(format!(
            "only {} distinct birth years; using {bins} age bins",
            years.len()
        ));
    }
    Ok(d)
}

fn preprocess_without_age(records: &[RawRecord]) -> Result<Dataset> {
    let mut doubled = records.to_vec();
    let mut extra = records[0].clone();
    extra.birth_year += 1;
    doubled.push(extra);
    let mut d = preprocess(&doubled, DEFAULT_LOCATION_PRECISION, 2)?;
    d.examples.pop();
    for e in &mut d.examples {
        e.private.insert(super::Attribute::Age, 0);
    }
    Ok(d)
}
