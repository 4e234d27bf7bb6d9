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

//! Text → fixed-width embedding.
//!
//! Two sources are supported: a precomputed CSV (one row per example, e.g.
//! mean-pooled transformer states exported elsewhere) and a hashed
//! bag-of-words featurizer that mean-pools per-token pseudo-random unit
//! vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datakit::Dataset;
use crate::error::{CapeError, Result};
use crate::privacy::streams;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CapeError::validation("embedding", "dimension must be >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CapeError::validation("embedding", "non-finite component"));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturizerKind {
    HashedBow,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub kind: FeaturizerKind,
    pub dimension: usize,
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default)]
    pub source_path: Option<PathBuf>,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            kind: FeaturizerKind::HashedBow,
            dimension: 64,
            hash_seed: 0,
            source_path: None,
        }
    }
}

impl FeaturizerConfig {
    pub fn hashed_bow(dimension: usize, hash_seed: u64) -> Self {
        FeaturizerConfig {
            kind: FeaturizerKind::HashedBow,
            dimension,
            hash_seed,
            source_path: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(CapeError::validation("dimension", "must be >= 1"));
        }
        Ok(())
    }
}

/// First eight bytes (little-endian) of SHA-256 over the seed's
/// little-endian bytes followed by the token's UTF-8 bytes.
pub fn token_hash(hash_seed: u64, token: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(hash_seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

/// Unit-norm Gaussian direction for one token.
pub fn token_vector(hash_seed: u64, token: &str, dimension: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(token_hash(hash_seed, token));
    rng.set_stream(streams::FEATURIZER);
    loop {
        let v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Lowercased whitespace tokens in sorted order. Summing in a canonical
/// order makes the pooled vector exactly independent of token order.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut toks: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    toks.sort_unstable();
    toks
}

/// Mean of the token vectors of `text`; the zero vector for empty text.
pub fn embed_hashed_bow(text: &str, cfg: &FeaturizerConfig) -> Result<EmbeddingVector> {
    cfg.check()?;
    let mut sum = vec![0.0; cfg.dimension];
    let mut count = 0usize;
    for tok in tokenize(text) {
        for (s, v) in sum.iter_mut().zip(token_vector(cfg.hash_seed, &tok, cfg.dimension)) {
            *s += v;
        }
        count += 1;
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    EmbeddingVector::new(sum)
}

/// Hashed bag-of-words featurizer with a token-vector cache.
#[derive(Debug)]
pub struct HashedBow {
    dimension: usize,
    hash_seed: u64,
    cache: HashMap<String, Vec<f64>>,
}

impl HashedBow {
    pub fn new(cfg: &FeaturizerConfig) -> Result<Self> {
        cfg.check()?;
        Ok(HashedBow {
            dimension: cfg.dimension,
            hash_seed: cfg.hash_seed,
            cache: HashMap::new(),
        })
    }

    /// Same arithmetic as [`embed_hashed_bow`], so results agree bit for bit.
    pub fn embed(&mut self, text: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dimension];
        let mut count = 0usize;
        for tok in tokenize(text) {
            let (dimension, seed) = (self.dimension, self.hash_seed);
            let v = self
                .cache
                .entry(tok)
                .or_insert_with_key(|t| token_vector(seed, t, dimension));
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += x;
            }
            count += 1;
        }
        if count > 0 {
            sum.iter_mut().for_each(|s| *s /= count as f64);
        }
        sum
    }
}

/// Embeddings for a whole dataset, one row per example, indexed by
/// `Example::index`.
pub fn featurize(dataset: &Dataset, cfg: &FeaturizerConfig) -> Result<Array2<f64>> {
    cfg.check()?;
    let rows = dataset.examples.iter().map(|e| e.index + 1).max().unwrap_or(0);
    match cfg.kind {
        FeaturizerKind::HashedBow => {
            let mut bow = HashedBow::new(cfg)?;
            let mut out = Array2::zeros((rows, cfg.dimension));
            for e in &dataset.examples {
                let v = bow.embed(&e.text);
                out.row_mut(e.index).iter_mut().zip(v).for_each(|(o, x)| *o = x);
            }
            Ok(out)
        }
        FeaturizerKind::Precomputed => {
            let path = cfg
                .source_path
                .as_deref()
                .ok_or_else(|| CapeError::Config("precomputed featurizer needs a source_path".into()))?;
            load_precomputed(path, cfg, rows)
        }
    }
}

/// Reads a headerless CSV of floats. Row `i` belongs to example `i`.
pub fn load_precomputed(path: &Path, cfg: &FeaturizerConfig, expected_rows: usize) -> Result<Array2<f64>> {
    cfg.check()?;
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::with_capacity(expected_rows * cfg.dimension);
    let mut rows = 0usize;
    for (r, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut width = 0usize;
        for (c, cell) in line.split(',').enumerate() {
            let value: f64 = cell.trim().parse().map_err(|e| CapeError::EmbeddingParse {
                path: path.to_path_buf(),
                row: r + 1,
                column: c + 1,
                message: format!("{e} ({cell:?})"),
            })?;
            if !value.is_finite() {
                return Err(CapeError::EmbeddingParse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            data.push(value);
            width += 1;
        }
        if width != cfg.dimension {
            return Err(CapeError::DimensionMismatch {
                what: format!("embedding width at row {}", r + 1),
                expected: cfg.dimension,
                found: width,
            });
        }
        rows += 1;
    }
    if rows != expected_rows {
        return Err(CapeError::DimensionMismatch {
            what: "embedding row count vs dataset size".into(),
            expected: expected_rows,
            found: rows,
        });
    }
    Ok(Array2::from_shape_vec((rows, cfg.dimension), data).expect("shape checked"))
}

/// Writes embeddings in the format [`load_precomputed`] reads. Values use the
/// shortest round-trip decimal form, so a write/load cycle is lossless.
pub fn write_precomputed(path: &Path, embeddings: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in embeddings.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
