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

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversarial_model::TrainConfig;
use crate::datakit::{Attribute, DEFAULT_AGE_BINS, DEFAULT_LOCATION_PRECISION};
use crate::error::{CapeError, Result};
use crate::eval::ProbeConfig;
use crate::featurizer::FeaturizerConfig;

/// The four defenses, one per cell of the (noise, adversary) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    Adv,
    Dp,
    Cape,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Adv, Variant::Dp, Variant::Cape];

    pub fn noise(self) -> bool {
        matches!(self, Variant::Dp | Variant::Cape)
    }

    pub fn adversary(self) -> bool {
        matches!(self, Variant::Adv | Variant::Cape)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Adv => "adv",
            Variant::Dp => "dp",
            Variant::Cape => "cape",
        }
    }

    /// Label used in the rendered table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::Adv => "Adv.",
            Variant::Dp => "DP",
            Variant::Cape => "CAPE",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "adv" => Ok(Variant::Adv),
            "dp" => Ok(Variant::Dp),
            "cape" => Ok(Variant::Cape),
            other => Err(CapeError::Config(format!(
                "unknown variant `{other}` (expected base, adv, dp or cape)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { n: usize, leak_strength: f64, seed: u64 },
    Jsonl { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 4000,
            leak_strength: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub attributes: Vec<Attribute>,
    pub variants: Vec<Variant>,
    pub epsilon: f64,
    pub sensitivity: f64,
    pub lambda: f64,
    pub featurizer: FeaturizerConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub location_precision: usize,
    pub age_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::default(),
            attributes: vec![Attribute::Gender],
            variants: Variant::ALL.to_vec(),
            epsilon: 0.1,
            sensitivity: 1.0,
            lambda: 1.0,
            featurizer: FeaturizerConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            runs: 4,
            base_seed: 0,
            train_fraction: 0.7,
            location_precision: DEFAULT_LOCATION_PRECISION,
            age_bins: DEFAULT_AGE_BINS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CapeError::Config("runs must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(CapeError::Config("no variants selected".into()));
        }
        if self.attributes.is_empty() {
            return Err(CapeError::Config("no attributes selected".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CapeError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CapeError::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        crate::privacy::PrivacyParams::new(self.epsilon, self.sensitivity)?;
        self.train.validate()?;
        self.probe.validate()?;
        Ok(())
    }

    /// Loads a config file, or the config embedded in a previously written
    /// JSON report.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let cfg = match value.get("config") {
            Some(embedded) if value.get("rows").is_some() => serde_json::from_value(embedded.clone())?,
            _ => serde_json::from_value(value)?,
        };
        Ok(cfg)
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.base_seed + i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_covers_the_grid_once() {
        let mut cells: Vec<(bool, bool)> = Variant::ALL.iter().map(|v| (v.noise(), v.adversary())).collect();
        cells.sort();
        assert_eq!(cells, vec![(false, false), (false, true), (true, false), (true, true)]);
        assert!(!Variant::Base.noise() && !Variant::Base.adversary());
        assert!(Variant::Cape.noise() && Variant::Cape.adversary());
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.runs, 4);
        assert_eq!(cfg.train_fraction, 0.7);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.run_seeds(), vec![0, 1, 2, 3]);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"epsilon": 1.0, "variants": ["dp", "cape"], "attributes": ["age"]}"#).unwrap();
        assert_eq!(cfg.epsilon, 1.0);
        assert_eq!(cfg.variants, vec![Variant::Dp, Variant::Cape]);
        assert_eq!(cfg.attributes, vec![Attribute::Age]);
        assert_eq!(cfg.lambda, 1.0);
    }

    #[test]
    fn invalid_configs() {
        let cfg = ExperimentConfig {
            runs: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            epsilon: 0.0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!("nope".parse::<Variant>().is_err());
        assert_eq!("CAPE".parse::<Variant>().unwrap(), Variant::Cape);
    }
}
