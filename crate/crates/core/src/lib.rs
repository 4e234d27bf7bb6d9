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

//! Privatized text embeddings: per-vector min-max normalization plus
//! calibrated Laplace noise, combined with gradient-reversal adversarial
//! training against a private attribute, and a harness that measures how
//! much of that attribute a post-hoc attacker can still recover.
//!
//! Pipeline:
//!
//! 1. [`datakit`] loads or generates reviews and maps demographics to
//!    class indices.
//! 2. [`featurizer`] turns text into a fixed-width embedding.
//! 3. [`privacy`] normalizes each embedding to [0, 1] and adds
//!    Laplace(Δf/ε) noise.
//! 4. [`adversarial_model`] trains the extractor and both heads.
//! 5. [`eval`] probes the frozen pipeline and scores everything by macro-F1.
//! 6. [`experiment`] ties it together for the Base / Adv / DP / CAPE variants.

pub mod adversarial_model;
pub mod datakit;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod featurizer;
pub mod privacy;

pub use error::{CapeError, Result};
