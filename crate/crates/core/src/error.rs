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

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CapeError>;

#[derive(Debug, Error)]
pub enum CapeError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: &'static str, message: String },

    #[error("cannot form {bins} age bins from {distinct} distinct birth years")]
    TooFewDistinctYears { bins: usize, distinct: usize },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    EmbeddingParse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("confusion matrix is empty")]
    EmptyConfusion,

    #[error("attribute `{0}` is not part of the dataset schema")]
    MissingAttribute(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch} (learning rate {learning_rate})")]
    Diverged {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("variant `{variant}`, run seed {seed}: {source}")]
    Variant {
        variant: String,
        seed: u64,
        #[source]
        source: Box<CapeError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad parameter file: {0}")]
    ParamFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CapeError {
    pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Self {
        CapeError::Validation {
            field,
            message: message.into(),
        }
    }
}
