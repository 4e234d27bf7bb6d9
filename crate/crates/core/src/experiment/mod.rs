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

//! Runs the four defenses on a dataset and compares target utility against
//! attacker leakage.

mod config;
mod report;

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

pub use self::config::{DataSource, ExperimentConfig, Variant};
pub use self::report::{render_csv, render_sweep_csv, render_table, ReportRow, RunReport, SweepPoint};
use crate::adversarial_model::{evaluate_predictions, fit, LossRecord, NoObserver, TrainingData};
use crate::datakit::{
    generate_records, preprocess, read_jsonl, split_dataset, Attribute, Dataset, SplitSpec, SyntheticSpec,
};
use crate::error::{CapeError, Result};
use crate::eval::{confusion, dataset_rows, f1_report, probe_attribute, ReleasedPipeline, RunScores};
use crate::featurizer::featurize;
use crate::privacy::{streams, NoiseRng, PrivacyParams};

/// A loaded, preprocessed and featurized dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub embeddings: Array2<f64>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let records = match &cfg.data {
            DataSource::Synthetic { n, leak_strength, seed } => {
                generate_records(&SyntheticSpec::new(*n, *leak_strength, *seed))?
            }
            DataSource::Jsonl { path } => read_jsonl(path)?,
        };
        let dataset = preprocess(&records, cfg.location_precision, cfg.age_bins)?;
        let embeddings = featurize(&dataset, &cfg.featurizer)?;
        Ok(Prepared { dataset, embeddings })
    }
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub scores: RunScores,
    pub history: Vec<LossRecord>,
}

/// One seeded run of one variant against one attribute.
///
/// The run seed fixes the 70/30 split, the weight init, batch order and
/// every noise stream, so two calls with the same arguments agree exactly.
pub fn run_variant(
    prepared: &Prepared,
    variant: Variant,
    attribute: Attribute,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<VariantRun> {
    run_variant_inner(prepared, variant, attribute, cfg, seed).map_err(|e| CapeError::Variant {
        variant: format!("{variant}/{attribute}"),
        seed,
        source: Box::new(e),
    })
}

fn run_variant_inner(
    prepared: &Prepared,
    variant: Variant,
    attribute: Attribute,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<VariantRun> {
    let (train, test) = split_dataset(
        &prepared.dataset,
        SplitSpec {
            train_fraction: cfg.train_fraction,
            seed,
        },
    )?;
    let privacy = if variant.noise() {
        Some(PrivacyParams::new(cfg.epsilon, cfg.sensitivity)?)
    } else {
        None
    };
    let train_cfg = crate::adversarial_model::TrainConfig {
        lambda: cfg.lambda,
        noise_enabled: variant.noise(),
        adversary_enabled: variant.adversary(),
        ..cfg.train.clone()
    };

    let train_x = dataset_rows(&train, &prepared.embeddings);
    let train_y = train.targets();
    let train_z = train.private_labels(attribute)?;
    let outcome = fit(
        TrainingData {
            features: train_x.view(),
            targets: &train_y,
            private: &train_z,
            target_classes: train.label_count,
            private_classes: train.classes(attribute)?,
        },
        &train_cfg,
        privacy.as_ref(),
        seed,
        &mut NoObserver,
    )?;

    let test_x = dataset_rows(&test, &prepared.embeddings);
    let preds = evaluate_predictions(
        &test_x.view(),
        &outcome.params,
        privacy.as_ref(),
        &mut NoiseRng::new(seed, streams::EVAL_NOISE),
    )?;
    let target = f1_report(&confusion(&preds, &test.targets(), test.label_count)?)?;

    let pipeline = ReleasedPipeline {
        params: &outcome.params,
        privacy: privacy.as_ref(),
    };
    let attack = probe_attribute(
        &pipeline,
        &train,
        &test,
        &prepared.embeddings,
        attribute,
        &cfg.probe,
        seed,
    )?;

    Ok(VariantRun {
        scores: RunScores {
            variant: variant.name().to_string(),
            seed,
            target_f1: target.macro_f1,
            attacker_f1: attack.f1.macro_f1,
            target_per_class: target.per_class,
            attacker_per_class: attack.f1.per_class,
        },
        history: outcome.history,
    })
}

/// Runs every (attribute, variant, run) combination, in parallel, and
/// aggregates per (attribute, variant). If any run fails the report keeps the
/// runs that succeeded and is marked invalid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let prepared = Prepared::load(cfg)?;
    Ok(run_prepared(&prepared, cfg))
}

pub fn run_prepared(prepared: &Prepared, cfg: &ExperimentConfig) -> RunReport {
    let started = Instant::now();
    let seeds = cfg.run_seeds();
    let jobs: Vec<(Attribute, Variant, u64)> = cfg
        .attributes
        .iter()
        .flat_map(|&a| {
            let seeds = &seeds;
            cfg.variants
                .iter()
                .flat_map(move |&v| seeds.iter().map(move |&s| (a, v, s)))
        })
        .collect();

    let results: Vec<Result<VariantRun>> = jobs
        .par_iter()
        .map(|&(a, v, s)| run_variant(prepared, v, a, cfg, s))
        .collect();

    let mut error = None;
    let mut rows = Vec::new();
    for (group, chunk) in jobs.chunks(seeds.len()).zip(results.chunks(seeds.len())) {
        let (attribute, variant, _) = group[0];
        let mut runs = Vec::new();
        let mut histories = Vec::new();
        for r in chunk {
            match r {
                Ok(run) => {
                    runs.push(run.scores.clone());
                    histories.push(run.history.clone());
                }
                Err(e) => {
                    if error.is_none() {
                        error = Some(e.to_string());
                    }
                }
            }
        }
        if !runs.is_empty() {
            rows.push(ReportRow::new(attribute, variant, runs, histories));
        }
    }

    RunReport {
        config: cfg.clone(),
        rows,
        dataset_size: prepared.dataset.len(),
        dataset_warnings: prepared.dataset.meta.warnings.clone(),
        duration_secs: started.elapsed().as_secs_f64(),
        error,
    }
}

/// One full experiment per (epsilon, lambda) pair, epsilons outermost.
pub fn sweep(cfg: &ExperimentConfig, epsilons: &[f64], lambdas: &[f64]) -> Result<Vec<SweepPoint>> {
    if epsilons.is_empty() || lambdas.is_empty() {
        return Err(CapeError::Config("sweep grids must be non-empty".into()));
    }
    cfg.validate()?;
    let prepared = Prepared::load(cfg)?;
    let mut points = Vec::with_capacity(epsilons.len() * lambdas.len());
    for &epsilon in epsilons {
        for &lambda in lambdas {
            let point_cfg = ExperimentConfig {
                epsilon,
                lambda,
                ..cfg.clone()
            };
            point_cfg.validate()?;
            points.push(SweepPoint {
                epsilon,
                lambda,
                report: run_prepared(&prepared, &point_cfg),
            });
        }
    }
    Ok(points)
}

pub const DEFAULT_SWEEP_EPSILONS: [f64; 5] = [0.05, 0.1, 0.5, 1.0, 5.0];
pub const DEFAULT_SWEEP_LAMBDAS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
