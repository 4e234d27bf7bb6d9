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

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cape::adversarial_model::{fit, gradcheck, FitObserver, TrainConfig, TrainingData};
use cape::datakit::{generate_synthetic, geohash_encode, Attribute, SyntheticSpec};
use cape::eval::{f1_macro, ConfusionMatrix};
use cape::experiment::{run_experiment, run_variant, ExperimentConfig, Prepared, Variant};
use cape::featurizer::{featurize, FeaturizerConfig};
use cape::privacy::{minmax_normalize, perturb, release_rows, sample_laplace, NoiseRng, PrivacyParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64, what: &str) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_secs as f64, || {
        format!("{what} took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = gradcheck::run_suite(0);
    within(start.elapsed(), 10, "gradient check")?;
    for noise in [false, true] {
        for lambda in [0.0, 0.5, 1.0] {
            check(
                report
                    .cases
                    .iter()
                    .any(|c| c.noise == noise && c.adversary && c.lambda == lambda),
                || format!("missing case lambda={lambda} noise={noise}"),
            )?;
        }
    }
    let worst = report.cases.iter().map(|c| c.max_relative_error()).fold(0.0, f64::max);
    check(report.passed() && worst < 1e-4, || {
        format!("max relative error {worst:.3e} >= 1e-4")
    })?;
    Ok(format!(
        "{} cases, max relative error {worst:.2e}, {:.2}s",
        report.cases.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn laplace_statistics() -> Outcome {
    let start = Instant::now();
    let n = 100_000;
    let b = 10.0;
    let mut rng = NoiseRng::new(2024, 1000);
    let draws: Vec<f64> = (0..n).map(|_| sample_laplace(b, &mut rng)).collect();
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let mean_abs = draws.iter().map(|v| v.abs()).sum::<f64>() / nf;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    within(start.elapsed(), 5, "sampling")?;
    let se = (2.0 * b * b / nf).sqrt();
    check(mean.abs() <= 3.0 * se, || {
        format!("mean {mean:.4} outside 3 SE ({:.4})", 3.0 * se)
    })?;
    check((mean_abs - b).abs() <= 0.02 * b, || {
        format!("mean |x| {mean_abs:.4} not within 2% of {b}")
    })?;
    check((var - 2.0 * b * b).abs() <= 0.05 * 2.0 * b * b, || {
        format!("variance {var:.2} not within 5% of {}", 2.0 * b * b)
    })?;
    Ok(format!("mean {mean:.4}, mean |x| {mean_abs:.4}, variance {var:.2}"))
}

fn mechanism_exactness() -> Outcome {
    let mut data_rng = ChaCha8Rng::seed_from_u64(3);
    let mut noise_rng = NoiseRng::new(3, 1001);
    let params = PrivacyParams::with_epsilon(0.1).map_err(|e| e.to_string())?;
    let mut components = 0usize;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..64).map(|_| data_rng.random_range(-5.0..5.0)).collect();
        let normalized = minmax_normalize(&x).map_err(|e| e.to_string())?;
        let out = perturb(&normalized, &params, &mut noise_rng);
        for ((v, z), e) in out.values.iter().zip(&normalized).zip(&out.noise) {
            check((v - z).to_bits() == e.to_bits(), || {
                format!("perturbed - normalized = {:e} but stored noise {e:e}", v - z)
            })?;
            components += 1;
        }
    }

    let batch = Array2::from_shape_fn((50, 64), |(i, j)| ((i * 64 + j) as f64).sin());
    let (released, noise) = release_rows(&batch.view(), Some(&params), &mut noise_rng).map_err(|e| e.to_string())?;
    let noise = noise.ok_or("release without noise")?;
    for (r, (row, noise_row)) in batch.rows().into_iter().zip(noise.rows()).enumerate() {
        let normalized = minmax_normalize(&row.to_vec()).map_err(|e| e.to_string())?;
        for j in 0..64 {
            check(
                (released[[r, j]] - normalized[j]).to_bits() == noise_row[j].to_bits(),
                || format!("released row {r} col {j} does not reproduce its noise"),
            )?;
        }
    }

    let mut a = NoiseRng::new(11, 1002);
    let mut b = NoiseRng::new(11, 1002);
    for _ in 0..10_000 {
        let strong = sample_laplace(PrivacyParams::with_epsilon(0.1).unwrap().laplace_scale(), &mut a);
        let weak = sample_laplace(PrivacyParams::with_epsilon(1.0).unwrap().laplace_scale(), &mut b);
        check(strong.to_bits() == (10.0 * weak).to_bits(), || {
            format!("eps=0.1 draw {strong:e} is not 10 x eps=1 draw {weak:e}")
        })?;
    }
    let zeros = vec![0.0; 64];
    let strong = perturb(
        &zeros,
        &PrivacyParams::with_epsilon(0.1).unwrap(),
        &mut NoiseRng::new(12, 1003),
    );
    let weak = perturb(
        &zeros,
        &PrivacyParams::with_epsilon(1.0).unwrap(),
        &mut NoiseRng::new(12, 1003),
    );
    for (s, w) in strong.noise.iter().zip(&weak.noise) {
        check(s.to_bits() == (10.0 * w).to_bits(), || {
            "perturb noise is not exactly 10x".into()
        })?;
    }
    Ok(format!(
        "{components} components recovered bitwise; 10x scale exact on 10000 shared-stream draws"
    ))
}

fn normalization_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut done = 0;
    while done < 1000 {
        let len = rng.random_range(2..100);
        let scale = 10f64.powi(rng.random_range(-3..4));
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        if x.iter().all(|v| *v == x[0]) {
            continue;
        }
        let y = minmax_normalize(&x).map_err(|e| e.to_string())?;
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        check(lo.abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12, || {
            format!("range [{lo}, {hi}]")
        })?;
        check(y.iter().all(|v| (0.0..=1.0).contains(v)), || {
            "component outside [0, 1]".into()
        })?;
        done += 1;
    }
    for c in [-3.5, 0.0, 1.0, 1e9] {
        let y = minmax_normalize(&[c; 17]).map_err(|e| e.to_string())?;
        check(y.iter().all(|v| *v == 0.0), || {
            format!("constant {c} did not map to zeros")
        })?;
    }
    Ok("1000 random vectors span exactly [0, 1]; constants map to zeros".into())
}

fn f1_oracle() -> Outcome {
    let cases = [
        (vec![vec![1, 1], vec![0, 2]], (2.0 / 3.0 + 0.8) / 2.0),
        (vec![vec![5, 0, 0], vec![0, 3, 0], vec![0, 0, 9]], 1.0),
        (vec![vec![10, 0], vec![10, 0]], 1.0 / 3.0),
    ];
    let mut got = Vec::new();
    for (counts, expected) in cases {
        let f = f1_macro(&ConfusionMatrix::from_counts(counts.clone())).map_err(|e| e.to_string())?;
        check((f - expected).abs() <= 1e-12, || {
            format!("{counts:?}: {f} != {expected}")
        })?;
        got.push(format!("{f:.4}"));
    }
    Ok(format!("macro-F1 {}", got.join(", ")))
}

fn geohash_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..1000 {
        let lat: f64 = rng.random_range(-90.0..90.0);
        let lon: f64 = rng.random_range(-180.0..180.0);
        let precision = 1 + i % 6;
        let ours = geohash_encode(lat, lon, precision).map_err(|e| e.to_string())?;
        let reference = geohash::encode(geohash::Coord { x: lon, y: lat }, precision).map_err(|e| e.to_string())?;
        check(ours == reference, || {
            format!("({lat}, {lon}, {precision}): {ours} != {reference}")
        })?;
    }
    let london = geohash_encode(51.5074, -0.1278, 2).map_err(|e| e.to_string())?;
    check(london == "gc", || format!("London cell {london}"))?;
    Ok("1000 random points agree with the reference at precisions 1-6; London -> gc".into())
}

fn privacy_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    check(cfg.featurizer.dimension == 64 && cfg.runs == 4, || {
        "unexpected defaults".into()
    })?;
    check(cfg.epsilon == 0.1 && cfg.lambda == 1.0, || "unexpected defaults".into())?;
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    if let Some(err) = &report.error {
        return Err(format!("experiment invalid: {err}"));
    }
    within(start.elapsed(), 300, "experiment")?;
    let row = |v: Variant| {
        report
            .rows
            .iter()
            .find(|r| r.variant == v && r.attribute == Attribute::Gender)
            .map(|r| (r.aggregate.target_f1.mean, r.aggregate.attacker_f1.mean))
            .ok_or_else(|| format!("no {v} row"))
    };
    let (base_t, base_a) = row(Variant::Base)?;
    let (_, adv_a) = row(Variant::Adv)?;
    let (dp_t, dp_a) = row(Variant::Dp)?;
    let (cape_t, cape_a) = row(Variant::Cape)?;
    let summary = format!(
        "attacker base {base_a:.4} adv {adv_a:.4} dp {dp_a:.4} cape {cape_a:.4}; \
         target base {base_t:.4} dp {dp_t:.4} cape {cape_t:.4}; {:.0}s",
        start.elapsed().as_secs_f64()
    );
    check(base_a >= 0.85, || format!("(a) base attacker < 0.85: {summary}"))?;
    check(cape_a <= base_a - 0.10, || {
        format!("(b) cape not 0.10 below base: {summary}")
    })?;
    check(cape_a <= adv_a.min(dp_a) + 0.02, || {
        format!("(c) cape above min(adv, dp) + 0.02: {summary}")
    })?;
    check(dp_t <= base_t && cape_t <= base_t, || {
        format!("(d) noisy target above base: {summary}")
    })?;
    Ok(summary)
}

fn lambda_zero_equivalence() -> Outcome {
    let cfg = ExperimentConfig {
        lambda: 0.0,
        data: cape::experiment::DataSource::Synthetic {
            n: 1500,
            leak_strength: 0.9,
            seed: 8,
        },
        ..ExperimentConfig::default()
    };
    let prepared = Prepared::load(&cfg).map_err(|e| e.to_string())?;
    for seed in [0, 1] {
        let base = run_variant(&prepared, Variant::Base, Attribute::Gender, &cfg, seed).map_err(|e| e.to_string())?;
        let adv = run_variant(&prepared, Variant::Adv, Attribute::Gender, &cfg, seed).map_err(|e| e.to_string())?;
        let (b, a) = (&base.scores, &adv.scores);
        check(b.target_f1.to_bits() == a.target_f1.to_bits(), || {
            format!("seed {seed}: target F1 differs")
        })?;
        check(b.attacker_f1.to_bits() == a.attacker_f1.to_bits(), || {
            format!("seed {seed}: attacker F1 differs")
        })?;
        check(
            b.target_per_class == a.target_per_class && b.attacker_per_class == a.attacker_per_class,
            || format!("seed {seed}: per-class F1 differs"),
        )?;
        let losses =
            |h: &[cape::adversarial_model::LossRecord]| h.iter().map(|r| r.target.to_bits()).collect::<Vec<_>>();
        check(losses(&base.history) == losses(&adv.history), || {
            format!("seed {seed}: loss history differs")
        })?;
    }
    Ok("adv at lambda 0 matches base bitwise on seeds 0 and 1".into())
}

fn run_csv(dir: &std::path::Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cape"))
        .args([
            "run",
            "--synthetic",
            "600",
            "--runs",
            "2",
            "--epochs",
            "5",
            "--seed",
            "9",
            "--out",
        ])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("cape run failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    std::fs::read(dir.join("results.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_csv(first.path())?;
    let b = run_csv(second.path())?;
    check(!a.is_empty() && a == b, || {
        "CSV outputs differ between invocations".into()
    })?;
    Ok(format!("two invocations wrote identical {}-byte CSVs", a.len()))
}

#[derive(Default)]
struct NoiseLog {
    by_epoch_row: HashMap<(usize, usize), Vec<u64>>,
}

impl FitObserver for NoiseLog {
    fn on_batch(&mut self, epoch: usize, rows: &[usize], noise: Option<&Array2<f64>>) {
        if let Some(noise) = noise {
            for (&r, row) in rows.iter().zip(noise.rows()) {
                self.by_epoch_row
                    .insert((epoch, r), row.iter().map(|v| v.to_bits()).collect());
            }
        }
    }
}

fn noise_freshness() -> Outcome {
    let dataset = generate_synthetic(&SyntheticSpec::new(100, 0.9, 10)).map_err(|e| e.to_string())?;
    let x = featurize(&dataset, &FeaturizerConfig::default()).map_err(|e| e.to_string())?;
    let targets = dataset.targets();
    let private = dataset.private_labels(Attribute::Gender).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 2,
        noise_enabled: true,
        ..TrainConfig::default()
    };
    let params = PrivacyParams::with_epsilon(0.1).map_err(|e| e.to_string())?;
    let mut log = NoiseLog::default();
    fit(
        TrainingData {
            features: x.view(),
            targets: &targets,
            private: &private,
            target_classes: dataset.label_count,
            private_classes: dataset.classes(Attribute::Gender).map_err(|e| e.to_string())?,
        },
        &cfg,
        Some(&params),
        10,
        &mut log,
    )
    .map_err(|e| e.to_string())?;
    let mut collisions = 0usize;
    for r in 0..100 {
        let first = log
            .by_epoch_row
            .get(&(0, r))
            .ok_or(format!("row {r} missing in epoch 0"))?;
        let second = log
            .by_epoch_row
            .get(&(1, r))
            .ok_or(format!("row {r} missing in epoch 1"))?;
        check(first != second, || {
            format!("row {r} got identical noise in both epochs")
        })?;
        collisions += first.iter().zip(second).filter(|(a, b)| a == b).count();
    }
    check(collisions == 0, || format!("{collisions} component-level collisions"))?;
    Ok("100 examples got fresh noise in epoch 2, no component collisions".into())
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("laplace statistics", laplace_statistics),
        ("mechanism exactness", mechanism_exactness),
        ("normalization contract", normalization_contract),
        ("f1 oracle equivalence", f1_oracle),
        ("geohash conformance", geohash_conformance),
        ("end-to-end privacy ordering", privacy_ordering),
        ("lambda = 0 equivalence", lambda_zero_equivalence),
        ("determinism", determinism),
        ("noise freshness", noise_freshness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
