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

//! Local-DP release of embeddings: per-vector min-max normalization to
//! [0, 1] followed by i.i.d. Laplace noise of scale `sensitivity / epsilon`.
//!
//! Uniform draws come from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and a 64-bit stream id set through `set_stream`.
//! Each consumer of randomness owns its own stream (see [`streams`]), so the
//! draws one component makes never shift another's.

use ndarray::{Array2, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};

/// Stream ids. A run seed plus a stream id fully determines a sequence.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const EVAL_NOISE: u64 = 5;
    pub const PROBE_INIT: u64 = 6;
    pub const PROBE_SHUFFLE: u64 = 7;
    pub const PROBE_TRAIN_NOISE: u64 = 8;
    pub const PROBE_TEST_NOISE: u64 = 9;
    pub const SYNTHETIC: u64 = 10;
    pub const FEATURIZER: u64 = 11;
    pub const GRADCHECK: u64 = 12;
}

/// A source of uniform draws on the open interval (-0.5, 0.5).
pub trait UniformSource {
    fn next_centered(&mut self) -> f64;
}

/// Seeded, single-owner random stream.
#[derive(Debug, Clone)]
pub struct NoiseRng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseRng { seed, stream, rng }
    }

    /// An independent stream for parallel work: the sub-stream id is mixed
    /// into the high 32 bits of the stream id.
    pub fn split(&self, substream: u32) -> Self {
        NoiseRng::new(self.seed, self.stream ^ (u64::from(substream) << 32))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl UniformSource for NoiseRng {
    /// `(2k + 1) / 2^53 - 0.5` for a 52-bit `k`: exact in f64 and never
    /// equal to either endpoint.
    fn next_centered(&mut self) -> f64 {
        let k = self.rng.next_u64() >> 12;
        ((2 * k + 1) as f64) / (1u64 << 53) as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(CapeError::validation("epsilon", format!("{epsilon} must be > 0")));
        }
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(CapeError::validation(
                "sensitivity",
                format!("{sensitivity} must be > 0"),
            ));
        }
        Ok(PrivacyParams { epsilon, sensitivity })
    }

    /// Unit sensitivity: vectors live in [0, 1] after normalization.
    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 1.0)
    }

    pub fn laplace_scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedEmbedding {
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
    pub params: PrivacyParams,
}

/// Maps `x` affinely onto [0, 1]. A constant vector maps to zeros.
pub fn minmax_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    minmax_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn minmax_normalize_in_place(x: &mut [f64]) -> Result<()> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(CapeError::validation(
            "embedding",
            format!("non-finite component {bad}"),
        ));
    }
    let (min, max) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = max - min;
    if x.is_empty() || range == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    for v in x.iter_mut() {
        // clamp guards the last-ulp overshoot of the division
        *v = ((*v - min) / range).clamp(0.0, 1.0);
    }
    Ok(())
}

/// Standard Laplace (b = 1) by inverse CDF of a centred uniform draw.
pub fn standard_laplace(u: f64) -> f64 {
    let sign = if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    };
    -sign * (1.0 - 2.0 * u.abs()).ln()
}

/// One Laplace(0, b) draw. `b` multiplies last, so draws at different
/// scales from the same uniform are exact multiples of each other.
pub fn sample_laplace<U: UniformSource + ?Sized>(b: f64, rng: &mut U) -> f64 {
    debug_assert!(b > 0.0);
    b * standard_laplace(rng.next_centered())
}

/// Adds fresh Laplace noise to an already-normalized vector.
///
/// The stored `noise` is the realized perturbation `values[i] - x[i]`, which
/// can differ from the raw Laplace draw by the rounding of the addition (at
/// most half an ulp of `values[i]`). With that choice `x + noise` reproduces
/// `values` exactly.
pub fn perturb<U: UniformSource + ?Sized>(x: &[f64], params: &PrivacyParams, rng: &mut U) -> PerturbedEmbedding {
    let b = params.laplace_scale();
    let values: Vec<f64> = x.iter().map(|v| v + sample_laplace(b, rng)).collect();
    let noise = values.iter().zip(x).map(|(y, v)| y - v).collect();
    PerturbedEmbedding {
        values,
        noise,
        params: *params,
    }
}

/// Releases a batch of embeddings row by row: normalize, then perturb with
/// fresh noise. Without privacy parameters the rows pass through untouched.
/// Returns the released rows and, when noise was added, the noise matrix.
pub fn release_rows(
    x: &ArrayView2<f64>,
    privacy: Option<&PrivacyParams>,
    rng: &mut NoiseRng,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let Some(params) = privacy else {
        return Ok((x.as_standard_layout().into_owned(), None));
    };
    let mut values = x.as_standard_layout().into_owned();
    let mut noise = Array2::zeros(x.raw_dim());
    for (mut row, mut noise_row) in values.rows_mut().into_iter().zip(noise.rows_mut()) {
        let normalized = minmax_normalize(row.as_slice().expect("standard layout"))?;
        let out = perturb(&normalized, params, rng);
        row.iter_mut().zip(out.values).for_each(|(r, v)| *r = v);
        noise_row.iter_mut().zip(out.noise).for_each(|(r, v)| *r = v);
    }
    Ok((values, Some(noise)))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zeros;
    impl UniformSource for Zeros {
        fn next_centered(&mut self) -> f64 {
            0.0
        }
    }

    struct Fixed(Vec<f64>, usize);
    impl UniformSource for Fixed {
        fn next_centered(&mut self) -> f64 {
            let v = self.0[self.1 % self.0.len()];
            self.1 += 1;
            v
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&[0.0, 2.0, 4.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(minmax_normalize(&[-1.0, 0.0, 3.0]).unwrap(), vec![0.0, 0.25, 1.0]);
        assert!(minmax_normalize(&[]).unwrap().is_empty());
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert!(minmax_normalize(&[0.0, f64::NAN]).is_err());
        assert!(minmax_normalize(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn inverse_cdf_worked_values() {
        let mut u = Fixed(vec![0.25], 0);
        let got = sample_laplace(10.0, &mut u);
        assert!((got - 6.931471805599453).abs() < 1e-12, "{got}");
        let mut u = Fixed(vec![-0.25], 0);
        assert!((sample_laplace(10.0, &mut u) + 6.931471805599453).abs() < 1e-12);
        let mut z = Zeros;
        assert_eq!(sample_laplace(10.0, &mut z), 0.0);
        let mut tiny = Fixed(vec![1e-12], 0);
        assert!(sample_laplace(10.0, &mut tiny).abs() < 1e-9);
    }

    #[test]
    fn zero_uniforms_leave_input_unchanged() {
        let p = PrivacyParams::with_epsilon(0.1).unwrap();
        let x = [0.0, 0.3, 1.0];
        let out = perturb(&x, &p, &mut Zeros);
        assert_eq!(out.values, x.to_vec());
    }

    #[test]
    fn seeded_perturbation_replays_uniform_stream() {
        let p = PrivacyParams::with_epsilon(0.1).unwrap();
        assert_eq!(p.laplace_scale(), 10.0);
        let out = perturb(&[0.0, 1.0], &p, &mut NoiseRng::new(42, streams::TRAIN_NOISE));

        // oracle: replay the same uniforms and evaluate the inverse CDF by hand
        let mut replay = NoiseRng::new(42, streams::TRAIN_NOISE);
        let expected: Vec<f64> = [0.0, 1.0]
            .iter()
            .map(|x| {
                let u = replay.next_centered();
                let n = if u >= 0.0 {
                    -10.0 * (1.0 - 2.0 * u).ln()
                } else {
                    10.0 * (1.0 + 2.0 * u).ln()
                };
                x + n
            })
            .collect();
        for (a, b) in out.values.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }

        let again = perturb(&[0.0, 1.0], &p, &mut NoiseRng::new(42, streams::TRAIN_NOISE));
        assert_eq!(out, again);
    }

    #[test]
    fn uniforms_stay_open() {
        let mut rng = NoiseRng::new(0, 0);
        for _ in 0..100_000 {
            let u = rng.next_centered();
            assert!(u > -0.5 && u < 0.5);
        }
    }

    #[test]
    fn split_streams_differ() {
        let base = NoiseRng::new(7, streams::TRAIN_NOISE);
        let mut a = base.split(1);
        let mut b = base.split(2);
        let mut c = base.clone();
        let xa: Vec<f64> = (0..4).map(|_| a.next_centered()).collect();
        let xb: Vec<f64> = (0..4).map(|_| b.next_centered()).collect();
        let xc: Vec<f64> = (0..4).map(|_| c.next_centered()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn params_validate() {
        assert!(PrivacyParams::new(0.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, -1.0).is_err());
        assert!(PrivacyParams::new(f64::NAN, 1.0).is_err());
        assert_eq!(PrivacyParams::new(2.0, 4.0).unwrap().laplace_scale(), 2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_range(x in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
                let y = minmax_normalize(&x).unwrap();
                prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
                let constant = x.iter().all(|v| *v == x[0]);
                if !constant {
                    prop_assert!(y.contains(&0.0));
                    prop_assert!(y.iter().any(|v| (*v - 1.0).abs() <= 1e-12));
                }
            }

            #[test]
            fn noise_is_recoverable(x in proptest::collection::vec(0.0f64..1.0, 1..32), seed: u64, eps in 0.01f64..10.0) {
                let p = PrivacyParams::with_epsilon(eps).unwrap();
                let out = perturb(&x, &p, &mut NoiseRng::new(seed, 0));
                prop_assert_eq!(out.noise.len(), out.values.len());
                for ((v, n), xi) in out.values.iter().zip(&out.noise).zip(&x) {
                    prop_assert_eq!((v - xi).to_bits(), n.to_bits());
                    prop_assert_eq!((xi + n).to_bits(), v.to_bits());
                }
            }
        }
    }
}
