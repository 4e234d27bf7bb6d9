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

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geohash::check_coordinates;
use crate::error::{CapeError, Result};

/// One review as stored in a JSONL dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub text: String,
    pub rating: u8,
    pub gender: String,
    pub birth_year: i32,
    pub latitude: f64,
    pub longitude: f64,
}

// Deserialization target with wide types so that range problems surface as
// validation errors naming the field rather than as serde type errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    text: String,
    rating: i64,
    gender: String,
    birth_year: i64,
    latitude: f64,
    longitude: f64,
}

impl RawRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.rating) {
            return Err(CapeError::validation(
                "rating",
                format!("{} is not in 1..=5", self.rating),
            ));
        }
        check_coordinates(self.latitude, self.longitude)
    }
}

/// Parses one JSONL line. `line_no` is 1-based and only used in diagnostics.
pub fn parse_record(line: &str, line_no: usize) -> Result<RawRecord> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| CapeError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if !(1..=5).contains(&wire.rating) {
        return Err(CapeError::validation(
            "rating",
            format!("line {line_no}: {} is not in 1..=5", wire.rating),
        ));
    }
    let birth_year = i32::try_from(wire.birth_year)
        .map_err(|_| CapeError::validation("birth_year", format!("line {line_no}: out of range")))?;
    let record = RawRecord {
        text: wire.text,
        rating: wire.rating as u8,
        gender: wire.gender,
        birth_year,
        latitude: wire.latitude,
        longitude: wire.longitude,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a JSONL file. Blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, i + 1)?);
    }
    Ok(records)
}

pub fn write_jsonl(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
