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

//! Flat binary parameter files.
//!
//! Layout: the five magic bytes `CAPE1`; five little-endian `u32`s (input
//! width, hidden1, hidden2, target classes, private classes); then every
//! tensor as little-endian `f64`s, row-major, in the order hidden1 weights,
//! hidden1 bias, hidden2 weights, hidden2 bias, target weights, target bias,
//! adversary weights, adversary bias. Weight matrices are `(inputs, outputs)`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Dense, ModelParams, Shape};
use crate::error::{CapeError, Result};

pub const PARAMS_MAGIC: &[u8; 5] = b"CAPE1";

pub fn write_params<W: Write>(mut out: W, params: &ModelParams) -> Result<()> {
    let s = params.shape();
    out.write_all(PARAMS_MAGIC)?;
    for dim in [s.input, s.hidden1, s.hidden2, s.target_classes, s.private_classes] {
        let dim = u32::try_from(dim).map_err(|_| CapeError::ParamFormat("dimension exceeds u32".into()))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    for layer in params.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<usize> {
    let mut buf = [0u8; 4];
    input
        .read_exact(&mut buf)
        .map_err(|_| CapeError::ParamFormat("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn read_dense<R: Read>(input: &mut R, inputs: usize, outputs: usize) -> Result<Dense> {
    let mut read = |count: usize| -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            input
                .read_exact(&mut buf)
                .map_err(|_| CapeError::ParamFormat("truncated tensor data".into()))?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(values)
    };
    let weights = Array2::from_shape_vec((inputs, outputs), read(inputs * outputs)?).expect("length matches shape");
    let bias = Array1::from_vec(read(outputs)?);
    Ok(Dense { weights, bias })
}

pub fn read_params<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| CapeError::ParamFormat("missing magic bytes".into()))?;
    if &magic != PARAMS_MAGIC {
        return Err(CapeError::ParamFormat(format!("bad magic {magic:?}")));
    }
    let shape = Shape {
        input: read_u32(&mut input)?,
        hidden1: read_u32(&mut input)?,
        hidden2: read_u32(&mut input)?,
        target_classes: read_u32(&mut input)?,
        private_classes: read_u32(&mut input)?,
    };
    let params = ModelParams {
        hidden1: read_dense(&mut input, shape.input, shape.hidden1)?,
        hidden2: read_dense(&mut input, shape.hidden1, shape.hidden2)?,
        target_head: read_dense(&mut input, shape.hidden2, shape.target_classes)?,
        adversary_head: read_dense(&mut input, shape.hidden2, shape.private_classes)?,
    };
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CapeError::ParamFormat(format!("{} trailing bytes", rest.len())));
    }
    Ok(params)
}
