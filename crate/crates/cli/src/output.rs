//! Result bundle writers. Every file is deterministic: no timestamps, no
//! floating-point reformatting, fixed row order. Writing the same sweep
//! twice produces byte-identical output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedshift_core::metrics::EvalResult;
use fedshift_core::partition::PartitionReport;
use serde::Serialize;

use crate::config::RunConfig;
use crate::runner::{SweepOutcome, SweepRun};

/// `f64` Display round-trips, so values survive a write/read/write cycle
/// unchanged.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'static str,
    seeds: &'a [u64],
    strategies: Vec<&'a str>,
    config: &'a RunConfig,
}

/// Writes the complete bundle: manifest, tidy CSVs, partition audit, and
/// the per-figure plot data.
pub fn write_bundle(config: &RunConfig, outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let manifest = Manifest {
        name: &config.run.name,
        version: env!("CARGO_PKG_VERSION"),
        seeds: &outcome.seeds,
        strategies: outcome
            .strategies
            .iter()
            .map(|s| s.label.as_str())
            .collect(),
        config,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    fs::write(dir.join("manifest.json"), manifest_json)?;

    write_results(&outcome.runs, &dir.join("results.csv"))?;
    write_holdout(&outcome.runs, &dir.join("holdout.csv"))?;
    write_rounds(&outcome.runs, &dir.join("rounds.csv"))?;
    write_partitions(outcome, &dir.join("partition.json"))?;
    if let Some(novel) = outcome.novel_label {
        write_pandemic(&outcome.runs, novel, &dir.join("pandemic.csv"))?;
    }
    emit_plotdata(dir)
}

/// Lower-triangle matrix cells in long form: one row per metric value.
fn write_results(runs: &[SweepRun], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "seed",
        "client",
        "trained_task",
        "eval_task",
        "metric",
        "value",
    ])?;
    for run in runs {
        for (client, matrix) in run.result.matrices.iter().enumerate() {
            for trained in 0..matrix.num_tasks() {
                for eval in 0..=trained {
                    let Some(cell) = matrix.get(trained, eval) else {
                        continue;
                    };
                    for (metric, value) in cell_metrics(cell) {
                        w.write_record([
                            run.label.as_str(),
                            &run.seed.to_string(),
                            &client.to_string(),
                            &trained.to_string(),
                            &eval.to_string(),
                            metric,
                            &num(value),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cell_metrics(cell: &EvalResult) -> Vec<(&'static str, f64)> {
    let mut out = vec![("ltr", cell.ltr), ("accuracy", cell.overall_accuracy)];
    if let Some(auc) = cell.macro_auc {
        out.push(("macro_auc", auc));
    }
    out
}

fn write_holdout(runs: &[SweepRun], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "seed", "client", "metric", "value"])?;
    for run in runs {
        for (client, matrix) in run.result.matrices.iter().enumerate() {
            let Some(cell) = matrix.holdout() else {
                continue;
            };
            for (metric, value) in cell_metrics(cell) {
                w.write_record([
                    run.label.as_str(),
                    &run.seed.to_string(),
                    &client.to_string(),
                    metric,
                    &num(value),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-round training trace. The checksum column repeats the round's
/// post-aggregation fingerprint on every client row of that round.
fn write_rounds(runs: &[SweepRun], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "seed",
        "task",
        "round",
        "client",
        "pre_loss",
        "post_loss",
        "checksum",
    ])?;
    for run in runs {
        for record in &run.result.rounds {
            let checksum = format!("{:016x}", record.checksum);
            for loss in &record.losses {
                w.write_record([
                    run.label.as_str(),
                    &run.seed.to_string(),
                    &record.task.to_string(),
                    &record.round.to_string(),
                    &loss.client_id.to_string(),
                    &opt(loss.pre),
                    &opt(loss.post),
                    &checksum,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PartitionEntry<'a> {
    seed: u64,
    report: &'a PartitionReport,
}

/// The partition is a function of seed and plan alone, so every strategy
/// at a given seed must have produced the same report; anything else is a
/// determinism bug worth failing loudly on.
fn write_partitions(outcome: &SweepOutcome, path: &Path) -> Result<()> {
    let mut per_seed: BTreeMap<u64, (&str, String, &PartitionReport)> = BTreeMap::new();
    for run in &outcome.runs {
        let encoded = serde_json::to_string(&run.result.partition)?;
        match per_seed.get(&run.seed) {
            None => {
                per_seed.insert(run.seed, (&run.label, encoded, &run.result.partition));
            }
            Some((first_label, first_encoded, _)) => {
                if *first_encoded != encoded {
                    bail!(
                        "partition mismatch at seed {}: {} and {} disagree",
                        run.seed,
                        first_label,
                        run.label
                    );
                }
            }
        }
    }
    let entries: Vec<PartitionEntry> = outcome
        .seeds
        .iter()
        .filter_map(|seed| {
            per_seed
                .get(seed)
                .map(|(_, _, report)| PartitionEntry { seed: *seed, report })
        })
        .collect();
    let mut json = serde_json::to_string_pretty(&entries)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

/// Per-task metrics on the fixed full test pool, split into the ramping
/// class and everything else. Columns stay empty where the novel class
/// never showed up in the pool.
fn write_pandemic(runs: &[SweepRun], novel: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "seed",
        "client",
        "task",
        "known_ltr",
        "novel_recall",
        "novel_auc",
    ])?;
    for run in runs {
        for (client, matrix) in run.result.matrices.iter().enumerate() {
            for task in 0..matrix.num_tasks() {
                let Some(cell) = matrix.pooled(task) else {
                    continue;
                };
                w.write_record([
                    run.label.as_str(),
                    &run.seed.to_string(),
                    &client.to_string(),
                    &task.to_string(),
                    &opt(cell.ltr_excluding(novel)),
                    &opt(cell.per_class_recall[novel]),
                    &opt(cell.per_class_auc[novel]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Plot data: per-figure aggregates, derived from the tidy CSVs so the
// emit-plotdata subcommand works on any bundle on disk.

/// One results.csv row; the eval_task column only matters as a grouping
/// axis, so it is not retained.
struct TidyRow {
    strategy: String,
    seed: u64,
    client: usize,
    trained: usize,
    metric: String,
    value: f64,
}

fn read_results(path: &Path) -> Result<Vec<TidyRow>> {
    let mut rows = Vec::new();
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    for record in r.records() {
        let record = record?;
        rows.push(TidyRow {
            strategy: record[0].to_string(),
            seed: record[1].parse()?,
            client: record[2].parse()?,
            trained: record[3].parse()?,
            metric: record[5].to_string(),
            value: record[6].parse()?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation; std is 0 for a single value.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Labels in first-appearance order, which the writers keep equal to the
/// config's strategy order.
fn label_order(labels: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = Vec::new();
    for label in labels {
        if !seen.contains(&label) {
            seen.push(label);
        }
    }
    seen
}

/// Derives the per-figure CSVs plus a data dictionary from an existing
/// bundle directory.
pub fn emit_plotdata(dir: &Path) -> Result<()> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    plot_task_ltr(&dir.join("results.csv"), &plots.join("fig_task_ltr.csv"))?;
    plot_holdout(&dir.join("holdout.csv"), &plots.join("fig_holdout.csv"))?;
    let pandemic = dir.join("pandemic.csv");
    if pandemic.exists() {
        plot_pandemic(&pandemic, &plots.join("fig_pandemic.csv"))?;
    }
    fs::write(plots.join("data_dictionary.md"), DATA_DICTIONARY)?;
    Ok(())
}

/// Mean seen-task recall per strategy and task: for each client, average
/// the LTR over every test task seen so far, then average over clients,
/// then report mean and spread over seeds.
fn plot_task_ltr(results: &Path, out: &Path) -> Result<()> {
    let rows = read_results(results)?;
    let order = label_order(rows.iter().map(|r| r.strategy.clone()));

    // (strategy, seed, client, trained) -> per-eval LTR values
    let mut cells: BTreeMap<(String, u64, usize, usize), Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.metric == "ltr") {
        cells
            .entry((row.strategy.clone(), row.seed, row.client, row.trained))
            .or_default()
            .push(row.value);
    }
    // (strategy, trained, seed) -> per-client seen-task means
    let mut per_seed: BTreeMap<(String, usize, u64), Vec<f64>> = BTreeMap::new();
    for ((strategy, seed, _client, trained), evals) in &cells {
        let seen = evals.iter().sum::<f64>() / evals.len() as f64;
        per_seed
            .entry((strategy.clone(), *trained, *seed))
            .or_default()
            .push(seen);
    }
    // (strategy, trained) -> per-seed client means
    let mut grouped: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for ((strategy, trained, _seed), clients) in &per_seed {
        let client_mean = clients.iter().sum::<f64>() / clients.len() as f64;
        grouped
            .entry((strategy.clone(), *trained))
            .or_default()
            .push(client_mean);
    }

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["strategy", "task", "mean", "std"])?;
    for strategy in &order {
        let tasks: Vec<usize> = grouped
            .keys()
            .filter(|(s, _)| s == strategy)
            .map(|(_, t)| *t)
            .collect();
        for task in tasks {
            let (mean, std) = mean_std(&grouped[&(strategy.clone(), task)]);
            w.write_record([strategy.as_str(), &task.to_string(), &num(mean), &num(std)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn plot_holdout(holdout: &Path, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(holdout)
        .with_context(|| format!("reading {}", holdout.display()))?;
    // (strategy, metric, seed) -> client values
    let mut per_seed: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for record in r.records() {
        let record = record?;
        let strategy = record[0].to_string();
        if !order.contains(&strategy) {
            order.push(strategy.clone());
        }
        let seed: u64 = record[1].parse()?;
        let metric = record[3].to_string();
        let value: f64 = record[4].parse()?;
        per_seed
            .entry((strategy, metric, seed))
            .or_default()
            .push(value);
    }
    let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((strategy, metric, _seed), clients) in &per_seed {
        let client_mean = clients.iter().sum::<f64>() / clients.len() as f64;
        grouped
            .entry((strategy.clone(), metric.clone()))
            .or_default()
            .push(client_mean);
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["strategy", "metric", "mean", "std"])?;
    for strategy in &order {
        for metric in ["ltr", "accuracy", "macro_auc"] {
            let Some(values) = grouped.get(&(strategy.clone(), metric.to_string())) else {
                continue;
            };
            let (mean, std) = mean_std(values);
            w.write_record([strategy.as_str(), metric, &num(mean), &num(std)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn plot_pandemic(pandemic: &Path, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(pandemic)
        .with_context(|| format!("reading {}", pandemic.display()))?;
    // (strategy, task, metric, seed) -> client values; empty cells drop out
    let mut per_seed: BTreeMap<(String, usize, &'static str, u64), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for record in r.records() {
        let record = record?;
        let strategy = record[0].to_string();
        if !order.contains(&strategy) {
            order.push(strategy.clone());
        }
        let seed: u64 = record[1].parse()?;
        let task: usize = record[3].parse()?;
        for (metric, field) in [("known_ltr", 4), ("novel_recall", 5), ("novel_auc", 6)] {
            if record[field].is_empty() {
                continue;
            }
            let value: f64 = record[field].parse()?;
            per_seed
                .entry((strategy.clone(), task, metric, seed))
                .or_default()
                .push(value);
        }
    }
    let mut grouped: BTreeMap<(String, usize, &'static str), Vec<f64>> = BTreeMap::new();
    for ((strategy, task, metric, _seed), clients) in &per_seed {
        let client_mean = clients.iter().sum::<f64>() / clients.len() as f64;
        grouped
            .entry((strategy.clone(), *task, *metric))
            .or_default()
            .push(client_mean);
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["strategy", "task", "metric", "mean", "std"])?;
    for strategy in &order {
        let mut tasks: Vec<usize> = grouped
            .keys()
            .filter(|(s, _, _)| s == strategy)
            .map(|(_, t, _)| *t)
            .collect();
        tasks.sort_unstable();
        tasks.dedup();
        for task in tasks {
            for metric in ["known_ltr", "novel_recall", "novel_auc"] {
                let Some(values) = grouped.get(&(strategy.clone(), task, metric)) else {
                    continue;
                };
                let (mean, std) = mean_std(values);
                w.write_record([
                    strategy.as_str(),
                    &task.to_string(),
                    metric,
                    &num(mean),
                    &num(std),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const DATA_DICTIONARY: &str = r#"# Plot data dictionary

All aggregates pool client means first, then report the mean and sample
standard deviation across seeds. With a single seed the std column is 0.
Values use full `f64` precision and round-trip exactly.

## fig_task_ltr.csv

Mean recall over seen tasks, per strategy, after each training task.

| column   | meaning |
|----------|---------|
| strategy | strategy label from the config (F- prefix = federated) |
| task     | 0-based index of the task just finished |
| mean     | over seeds: mean over clients of (mean LTR across test tasks 0..=task) |
| std      | sample standard deviation of the per-seed values |

## fig_holdout.csv

Final-model scores on the shared held-out set, per strategy.

| column   | meaning |
|----------|---------|
| strategy | strategy label |
| metric   | `ltr` (mean per-class recall), `accuracy`, or `macro_auc` (one-vs-rest) |
| mean     | over seeds: mean over clients of the final hold-out score |
| std      | sample standard deviation of the per-seed values |

## fig_pandemic.csv

Written only for the novel-class scenario. Scores on each client's full
test pool (all test tasks combined, a fixed set) after each training task.

| column   | meaning |
|----------|---------|
| strategy | strategy label |
| task     | 0-based index of the task just finished |
| metric   | `known_ltr` (mean recall over the non-novel classes), `novel_recall`, `novel_auc` |
| mean     | over seeds: mean over clients with a defined value |
| std      | sample standard deviation of the per-seed values |

Rows are absent where no client had a defined value, e.g. the novel class
never appeared in any test pool.
"#;
