//! Drives the sweep: one experiment per (strategy, seed) pair, with the
//! dataset shared across strategies at each seed so comparisons are
//! apples to apples.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use fedshift_core::data::Dataset;
use fedshift_core::federation::{
    prepare_partition, run_experiment, ExperimentResult, ExperimentSpec, PreparedPartition,
};
use fedshift_core::partition::PartitionReport;
use rayon::prelude::*;

use crate::config::{ResolvedStrategy, RunConfig};

/// One finished experiment within the sweep.
pub struct SweepRun {
    pub label: String,
    pub federated: bool,
    pub seed: u64,
    pub result: ExperimentResult,
}

/// Every run of the sweep, strategy-major then seed, plus the shared
/// naming context the writers need.
pub struct SweepOutcome {
    pub strategies: Vec<ResolvedStrategy>,
    pub seeds: Vec<u64>,
    pub runs: Vec<SweepRun>,
    /// Class index of the ramping label in the pandemic scenario.
    pub novel_label: Option<usize>,
    pub class_names: Vec<String>,
}

/// Joins an exhaustive validation report into one error.
pub fn validation_error(errors: Vec<String>) -> anyhow::Error {
    anyhow!(
        "invalid config ({} problem{}):\n  {}",
        errors.len(),
        if errors.len() == 1 { "" } else { "s" },
        errors.join("\n  ")
    )
}

/// Builds the per-seed datasets once; synthetic draws differ by seed, a
/// CSV source is read repeatedly but identical.
fn load_datasets(config: &RunConfig, config_dir: &Path) -> Result<Vec<(u64, Dataset)>> {
    config
        .run
        .seeds
        .iter()
        .map(|&seed| {
            let data = config
                .load_dataset(seed, config_dir)
                .map_err(|e| anyhow!(e))
                .with_context(|| format!("seed {seed}"))?;
            Ok((seed, data))
        })
        .collect()
}

/// Runs the full sweep described by the config. Experiments run
/// concurrently across (strategy, seed) pairs; results come back in
/// deterministic strategy-major order regardless of scheduling.
pub fn run_sweep(config: &RunConfig, config_dir: &Path) -> Result<SweepOutcome> {
    config.validate().map_err(validation_error)?;
    let datasets = load_datasets(config, config_dir)?;
    let strategies = config.resolved_strategies();

    let schema = datasets[0].1.schema();
    let class_names = schema.labels.names().to_vec();
    let input_dim = schema.feature_dim;
    let num_classes = schema.labels.num_classes();
    let scenario = config
        .scenario(&datasets[0].1)
        .map_err(|e| anyhow!(e))?;
    let novel_label = match &scenario {
        fedshift_core::federation::Scenario::Localized => None,
        fedshift_core::federation::Scenario::NovelDisease { schedule, .. } => {
            Some(schedule.novel_label)
        }
    };

    let jobs: Vec<(usize, usize)> = (0..strategies.len())
        .flat_map(|s| (0..datasets.len()).map(move |d| (s, d)))
        .collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(s, d)| {
            let entry = &strategies[s];
            let (seed, dataset) = &datasets[d];
            let spec = ExperimentSpec {
                plan: config.partition_plan(*seed),
                scenario: scenario.clone(),
                model: config.model_spec(input_dim, num_classes, *seed),
                strategy: entry.strategy.clone(),
                federation: config.federation_config(entry.federated),
                seed: *seed,
            };
            let result = run_experiment(dataset, &spec)
                .with_context(|| format!("strategy {} seed {seed}", entry.label))?;
            Ok(SweepRun {
                label: entry.label.clone(),
                federated: entry.federated,
                seed: *seed,
                result,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SweepOutcome {
        strategies,
        seeds: config.run.seeds.clone(),
        runs,
        novel_label,
        class_names,
    })
}

/// Partitions every seed's dataset without training anything; what the
/// `partition describe` subcommand prints.
pub fn describe_partitions(
    config: &RunConfig,
    config_dir: &Path,
) -> Result<Vec<(u64, PartitionReport)>> {
    config.validate().map_err(validation_error)?;
    let datasets = load_datasets(config, config_dir)?;
    datasets
        .iter()
        .map(|(seed, dataset)| {
            let scenario = config.scenario(dataset).map_err(|e| anyhow!(e))?;
            let plan = config.partition_plan(*seed);
            let PreparedPartition { report, .. } = prepare_partition(dataset, &plan, &scenario)
                .with_context(|| format!("seed {seed}"))?;
            Ok((*seed, report))
        })
        .collect()
}
