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

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cape::adversarial_model::gradcheck;
use cape::datakit::{generate_records, write_jsonl, Attribute, SyntheticSpec};
use cape::experiment::{
    render_csv, render_sweep_csv, render_table, run_experiment, sweep, DataSource, ExperimentConfig, Variant,
    DEFAULT_SWEEP_EPSILONS, DEFAULT_SWEEP_LAMBDAS,
};

#[derive(Parser)]
#[command(name = "cape", version, about = "Private text embeddings: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic review dataset as JSONL.
    Generate {
        #[arg(long, value_name = "N")]
        synthetic: usize,
        #[arg(long, default_value_t = 0.9)]
        leak_strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the variant comparison and print the results table.
    Run(ExperimentArgs),
    /// Run one experiment per (epsilon, lambda) pair and emit CSV.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Comma-separated privacy budgets.
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        /// Comma-separated adversary weights.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file (or a JSON report to re-run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL dataset to load instead of generating one.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a synthetic dataset of N records.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Probability that an attribute's marker tokens appear in the text.
    #[arg(long)]
    leak_strength: Option<f64>,
    /// Variants to run (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    variant: Vec<Variant>,
    /// Privacy budget of the Laplace mechanism.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight of the adversary loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Attributes to attack (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    attribute: Vec<Attribute>,
    /// Seeded runs per variant.
    #[arg(long)]
    runs: Option<usize>,
    /// First run seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs for the defended model (the probe keeps its own).
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for CSV and JSON results.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.data {
            cfg.data = DataSource::Jsonl { path: path.clone() };
        }
        if self.synthetic.is_some() || self.leak_strength.is_some() {
            let (n0, leak0, seed0) = match cfg.data {
                DataSource::Synthetic { n, leak_strength, seed } => (n, leak_strength, seed),
                DataSource::Jsonl { .. } if self.synthetic.is_none() => {
                    bail!("--leak-strength needs a synthetic dataset (--synthetic N)")
                }
                DataSource::Jsonl { .. } => (0, 0.9, 0),
            };
            cfg.data = DataSource::Synthetic {
                n: self.synthetic.unwrap_or(n0),
                leak_strength: self.leak_strength.unwrap_or(leak0),
                seed: seed0,
            };
        }
        if !self.variant.is_empty() {
            cfg.variants = self.variant.clone();
        }
        if !self.attribute.is_empty() {
            cfg.attributes = self.attribute.clone();
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_outputs(dir: &PathBuf, files: &[(&str, String)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Generate {
            synthetic,
            leak_strength,
            seed,
            out,
        } => {
            let records = generate_records(&SyntheticSpec::new(synthetic, leak_strength, seed))?;
            write_jsonl(&out, &records)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(true)
        }
        Command::Run(args) => {
            let cfg = args.config()?;
            let report = run_experiment(&cfg)?;
            print!("{}", render_table(&report));
            if let Some(dir) = &args.out {
                write_outputs(
                    dir,
                    &[
                        ("results.csv", render_csv(&report)),
                        ("report.json", serde_json::to_string_pretty(&report)?),
                    ],
                )?;
            }
            if let Some(err) = &report.error {
                eprintln!("error: {err}");
            }
            Ok(report.is_valid())
        }
        Command::Sweep {
            experiment,
            epsilons,
            lambdas,
        } => {
            let cfg = experiment.config()?;
            let epsilons = if epsilons.is_empty() {
                DEFAULT_SWEEP_EPSILONS.to_vec()
            } else {
                epsilons
            };
            let lambdas = if lambdas.is_empty() {
                DEFAULT_SWEEP_LAMBDAS.to_vec()
            } else {
                lambdas
            };
            let points = sweep(&cfg, &epsilons, &lambdas)?;
            let csv = render_sweep_csv(&points);
            match &experiment.out {
                Some(dir) => write_outputs(
                    dir,
                    &[
                        ("sweep.csv", csv),
                        ("sweep.json", serde_json::to_string_pretty(&points)?),
                    ],
                )?,
                None => print!("{csv}"),
            }
            let mut ok = true;
            for p in &points {
                if let Some(err) = &p.report.error {
                    eprintln!("error at epsilon={} lambda={}: {err}", p.epsilon, p.lambda);
                    ok = false;
                }
            }
            Ok(ok)
        }
        Command::Gradcheck { seed } => {
            let report = gradcheck::run_suite(seed);
            println!(
                "{:<7} {:<6} {:<10} {:<18} {:>12}",
                "lambda", "noise", "adversary", "tensor", "max rel err"
            );
            for case in &report.cases {
                for t in &case.tensors {
                    println!(
                        "{:<7} {:<6} {:<10} {:<18} {:>12.3e}",
                        case.lambda, case.noise, case.adversary, t.tensor, t.max_relative_error
                    );
                }
            }
            let ok = report.passed();
            println!(
                "{} (tolerance {:e}, step {:e})",
                if ok { "PASS" } else { "FAIL" },
                gradcheck::TOLERANCE,
                gradcheck::STEP
            );
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
