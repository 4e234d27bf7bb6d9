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

//! Base-32 geohash encoding.
//!
//! Interval bisection alternates longitude and latitude, longitude first. A
//! coordinate lying exactly on a bisection midpoint takes the upper half,
//! which is the convention used by the reference implementations.

use crate::error::{CapeError, Result};

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

pub fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(CapeError::validation("latitude", format!("{lat} is outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(CapeError::validation(
            "longitude",
            format!("{lon} is outside [-180, 180]"),
        ));
    }
    Ok(())
}

pub fn geohash_encode(lat: f64, lon: f64, precision: usize) -> Result<String> {
    check_coordinates(lat, lon)?;
    if precision == 0 {
        return Err(CapeError::validation("precision", "must be at least 1"));
    }

    let mut lat_range = (-90.0_f64, 90.0_f64);
    let mut lon_range = (-180.0_f64, 180.0_f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;

    while out.len() < precision {
        let mut idx = 0usize;
        for _ in 0..5 {
            let (value, range) = if even {
                (lon, &mut lon_range)
            } else {
                (lat, &mut lat_range)
            };
            let mid = (range.0 + range.1) / 2.0;
            idx <<= 1;
            if value >= mid {
                idx |= 1;
                range.0 = mid;
            } else {
                range.1 = mid;
            }
            even = !even;
        }
        out.push(BASE32[idx] as char);
    }
    Ok(out)
}
