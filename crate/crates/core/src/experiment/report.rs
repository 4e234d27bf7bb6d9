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

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Variant};
use crate::adversarial_model::LossRecord;
use crate::datakit::Attribute;
use crate::eval::{aggregate, AggregateReport, RunScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attribute: Attribute,
    pub variant: Variant,
    pub aggregate: AggregateReport,
    pub runs: Vec<RunScores>,
    pub loss_histories: Vec<Vec<LossRecord>>,
}

impl ReportRow {
    pub fn new(
        attribute: Attribute,
        variant: Variant,
        runs: Vec<RunScores>,
        loss_histories: Vec<Vec<LossRecord>>,
    ) -> Self {
        ReportRow {
            attribute,
            variant,
            aggregate: aggregate(&runs),
            runs,
            loss_histories,
        }
    }
}

/// Everything needed to re-run an experiment plus its results. Only
/// `duration_secs` varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub dataset_size: usize,
    pub dataset_warnings: Vec<String>,
    pub duration_secs: f64,
    /// Set when a run failed; the rows then hold partial results.
    pub error: Option<String>,
}

impl RunReport {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }

    pub fn row(&self, attribute: Attribute, variant: Variant) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.attribute == attribute && r.variant == variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub lambda: f64,
    pub report: RunReport,
}

pub const CSV_HEADER: &str =
    "attribute,variant,target_f1_mean,target_f1_sd,attacker_f1_mean,attacker_f1_sd,epsilon,lambda,seed";

fn csv_rows(report: &RunReport, out: &mut String) {
    let cfg = &report.config;
    for row in &report.rows {
        let a = &row.aggregate;
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{},{},{}",
            row.attribute,
            row.variant,
            a.target_f1.mean,
            a.target_f1.sd,
            a.attacker_f1.mean,
            a.attacker_f1.sd,
            cfg.epsilon,
            cfg.lambda,
            cfg.base_seed
        )
        .expect("writing to a String");
    }
}

pub fn render_csv(report: &RunReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    csv_rows(report, &mut out);
    out
}

pub fn render_sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for p in points {
        csv_rows(&p.report, &mut out);
    }
    out
}

/// Aligned text table, one block per attribute.
pub fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    let cfg = &report.config;
    writeln!(
        out,
        "epsilon = {}, lambda = {}, runs = {}, base seed = {}",
        cfg.epsilon, cfg.lambda, cfg.runs, cfg.base_seed
    )
    .unwrap();
    writeln!(
        out,
        "{:<10} {:>10} {:>8} {:>12} {:>8}",
        "", "Target", "", "Attacker", ""
    )
    .unwrap();
    writeln!(
        out,
        "{:<10} {:>10} {:>8} {:>12} {:>8}",
        "Approach", "F1", "SD", "F1", "SD"
    )
    .unwrap();
    let mut attributes: Vec<Attribute> = report.rows.iter().map(|r| r.attribute).collect();
    attributes.dedup();
    for attribute in attributes {
        writeln!(out, "{}", "-".repeat(52)).unwrap();
        let mut name = attribute.name().to_string();
        name[..1].make_ascii_uppercase();
        writeln!(out, "{name}").unwrap();
        for row in report.rows.iter().filter(|r| r.attribute == attribute) {
            let a = &row.aggregate;
            writeln!(
                out,
                "{:<10} {:>10.4} {:>8.4} {:>12.4} {:>8.4}",
                row.variant.label(),
                a.target_f1.mean,
                a.target_f1.sd,
                a.attacker_f1.mean,
                a.attacker_f1.sd
            )
            .unwrap();
        }
    }
    if let Some(err) = &report.error {
        writeln!(out, "INVALID: {err}").unwrap();
    }
    out
}
