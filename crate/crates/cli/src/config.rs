//! TOML run configuration: parsing, exhaustive validation, and translation
//! into the core types. One config file fully describes a sweep: data
//! source, model, partition plan, federation settings, strategy list,
//! seeds, and (for the pandemic scenario) the novel-class schedule.

use std::path::{Path, PathBuf};

use fedshift_core::data::{AttributeSchema, CsvSchema, Dataset, LabelSpace, SyntheticSpec};
use fedshift_core::federation::{Execution, FederationConfig, Scenario, Weighting};
use fedshift_core::learner::{ModelFamily, ModelSpec};
use fedshift_core::partition::{
    NovelDiseaseSchedule, PartitionPlan, ScheduleGenerator, FAST_ONSET, SLOW_ONSET,
};
use fedshift_core::rng::{derive_rng, tags};
use fedshift_core::strategies::StrategyConfig;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub federation: FederationSection,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pandemic: Option<PandemicSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Bundle name; also the default output subdirectory.
    pub name: String,
    pub scenario: ScenarioKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Localized,
    Pandemic,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

/// Exactly one source must be configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: Vec<String>,
    #[serde(default = "default_attribute_name")]
    pub attribute: String,
    pub attribute_values: Vec<String>,
    pub feature_dim: usize,
    pub class_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_probs: Option<Vec<f64>>,
    #[serde(default = "default_variance")]
    pub variance: f64,
    pub num_records: usize,
    /// Explicit per-(class, attribute) mean vectors. Mutually exclusive
    /// with the scale recipe below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<Vec<f64>>>>,
    /// Auto recipe: mean = class_scale * u_class + attribute_scale * v_attr
    /// with fixed unit directions, so class separation and attribute shift
    /// are dialed independently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_scale: Option<f64>,
}

fn default_attribute_name() -> String {
    "group".into()
}

fn default_variance() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// Relative paths resolve against the config file's directory.
    pub path: String,
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub label_values: Vec<String>,
    pub attribute_column: String,
    pub attribute_values: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Logistic,
    Mlp,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

fn default_learning_rate() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub clients: usize,
    pub tasks: usize,
    pub skewed_fraction: f64,
    pub skew_share: f64,
    pub balance_ratio: f64,
    pub holdout_fraction: f64,
    pub test_fraction: f64,
    pub min_client_size: usize,
    pub schedule: ScheduleKind,
    pub task_dominant_share: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_sizes: Option<Vec<usize>>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let plan = PartitionPlan::default();
        Self {
            clients: plan.num_clients,
            tasks: plan.num_tasks,
            skewed_fraction: plan.skewed_fraction,
            skew_share: plan.skew_share,
            balance_ratio: plan.balance_ratio,
            holdout_fraction: plan.holdout_fraction,
            test_fraction: plan.test_fraction,
            min_client_size: plan.min_client_size,
            schedule: ScheduleKind::Rotation,
            task_dominant_share: plan.task_dominant_share,
            client_sizes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Rotation,
    Resample,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub rounds_per_task: usize,
    pub local_iterations: usize,
    pub batch_size: usize,
    pub weighting: WeightingKind,
    /// Pure scheduling knob with no effect on results, so it is kept out
    /// of the manifest echo: bundles from serial and concurrent runs of
    /// the same experiment are byte-identical.
    #[serde(skip_serializing)]
    pub parallel_clients: bool,
}

impl Default for FederationSection {
    fn default() -> Self {
        let cfg = FederationConfig::default();
        Self {
            rounds_per_task: cfg.rounds_per_task,
            local_iterations: cfg.local_iterations,
            batch_size: cfg.batch_size,
            weighting: WeightingKind::BySampleCount,
            parallel_clients: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingKind {
    BySampleCount,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    /// When false, clients train in isolation (no averaging); the label
    /// then drops its "F-" prefix.
    #[serde(default = "default_true")]
    pub federated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_replay_ratio")]
    pub replay_ratio: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_stage2_fraction")]
    pub stage2_fraction: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Erm,
    Cb,
    Gb,
    Er,
    Mixup,
    Crt,
    Swad,
}

fn default_true() -> bool {
    true
}

fn default_capacity() -> usize {
    200
}

fn default_replay_ratio() -> f64 {
    0.5
}

fn default_alpha() -> f64 {
    0.2
}

fn default_stage2_fraction() -> f64 {
    0.15
}

fn default_window() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PandemicSection {
    /// Name of the class that ramps up (must exist in the label set).
    pub novel_label: String,
    /// The first `fast_clients` clients follow the fast ramp, the rest the
    /// slow one. Mutually exclusive with explicit `rows`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_clients: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_row: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_row: Option<Vec<f64>>,
    /// Fixed train-task size; near-equal division of the train pool if
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_size: Option<usize>,
}

/// One entry of the sweep: a labeled strategy plus its federation switch.
#[derive(Debug, Clone)]
pub struct ResolvedStrategy {
    pub label: String,
    pub strategy: StrategyConfig,
    pub federated: bool,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))
    }

    /// Collects every problem with the config, not just the first one.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        let mut err = |msg: String| errors.push(msg);

        if self.run.name.is_empty() {
            err("run.name: must not be empty".into());
        }
        if self.run.seeds.is_empty() {
            err("run.seeds: at least one seed required".into());
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.run.seeds.len() {
            err("run.seeds: duplicate seeds".into());
        }

        match (&self.data.synthetic, &self.data.csv) {
            (None, None) => err("data: configure exactly one of data.synthetic or data.csv".into()),
            (Some(_), Some(_)) => {
                err("data: data.synthetic and data.csv are mutually exclusive".into())
            }
            (Some(s), None) => validate_synthetic(s, &mut errors),
            (None, Some(c)) => validate_csv(c, &mut errors),
        }

        let mut err = |msg: String| errors.push(msg);
        if self.model.learning_rate <= 0.0 || !self.model.learning_rate.is_finite() {
            err(format!(
                "model.learning_rate: must be positive and finite, got {}",
                self.model.learning_rate
            ));
        }
        if self.model.l2 < 0.0 || !self.model.l2.is_finite() {
            err(format!("model.l2: must be nonnegative, got {}", self.model.l2));
        }
        if self.model.family == FamilyKind::Mlp
            && self.model.hidden.iter().any(|&h| h == 0)
        {
            err("model.hidden: layer widths must be positive".into());
        }

        if let Err(e) = self.partition_plan(0).validate() {
            err(format!("partition: {e}"));
        }
        if let Err(e) = self.federation_config(true).validate() {
            err(format!("federation: {e}"));
        }

        if self.strategies.is_empty() {
            err("strategies: at least one [[strategies]] entry required".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, entry) in self.strategies.iter().enumerate() {
            let resolved = resolve_strategy(entry);
            if let Err(e) = resolved.strategy.validate() {
                err(format!("strategies[{i}] ({}): {e}", resolved.label));
            }
            if !labels.insert(resolved.label.clone()) {
                err(format!(
                    "strategies[{i}]: duplicate label {:?}; set an explicit label",
                    resolved.label
                ));
            }
        }

        match (&self.pandemic, self.run.scenario) {
            (None, ScenarioKind::Pandemic) => {
                err("pandemic: section required when run.scenario = \"pandemic\"".into())
            }
            (Some(_), ScenarioKind::Localized) => {
                err("pandemic: section only applies when run.scenario = \"pandemic\"".into())
            }
            (Some(p), ScenarioKind::Pandemic) => self.validate_pandemic(p, &mut errors),
            (None, ScenarioKind::Localized) => {}
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn validate_pandemic(&self, p: &PandemicSection, errors: &mut Vec<String>) {
        let labels = self.label_names();
        if !labels.iter().any(|l| l == &p.novel_label) {
            errors.push(format!(
                "pandemic.novel_label: {:?} is not one of the configured labels",
                p.novel_label
            ));
        }
        let k = self.partition.clients;
        let t = self.partition.tasks;
        match (&p.rows, p.fast_clients) {
            (Some(_), Some(_)) => errors.push(
                "pandemic: rows and fast_clients are mutually exclusive".into(),
            ),
            (Some(rows), None) => {
                if rows.len() != k {
                    errors.push(format!(
                        "pandemic.rows: {} rows for {k} clients",
                        rows.len()
                    ));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != t {
                        errors.push(format!(
                            "pandemic.rows[{i}]: {} entries for {t} tasks",
                            row.len()
                        ));
                    }
                }
            }
            (None, fast) => {
                let fast = fast.unwrap_or_else(|| default_fast_clients(k));
                if fast > k {
                    errors.push(format!(
                        "pandemic.fast_clients: {fast} exceeds {k} clients"
                    ));
                }
                for (name, row) in [("fast_row", &p.fast_row), ("slow_row", &p.slow_row)] {
                    if let Some(row) = row {
                        if row.len() != t {
                            errors.push(format!(
                                "pandemic.{name}: {} entries for {t} tasks",
                                row.len()
                            ));
                        }
                    } else if t != FAST_ONSET.len() {
                        errors.push(format!(
                            "pandemic.{name}: required when tasks != {} (built-in ramps cover {} tasks)",
                            FAST_ONSET.len(),
                            FAST_ONSET.len()
                        ));
                    }
                }
            }
        }
    }

    fn label_names(&self) -> Vec<String> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(s), _) => s.classes.clone(),
            (_, Some(c)) => c.label_values.clone(),
            _ => Vec::new(),
        }
    }

    pub fn resolved_strategies(&self) -> Vec<ResolvedStrategy> {
        self.strategies.iter().map(resolve_strategy).collect()
    }

    pub fn partition_plan(&self, seed: u64) -> PartitionPlan {
        let p = &self.partition;
        PartitionPlan {
            num_clients: p.clients,
            num_tasks: p.tasks,
            seed,
            skewed_fraction: p.skewed_fraction,
            skew_share: p.skew_share,
            balance_ratio: p.balance_ratio,
            holdout_fraction: p.holdout_fraction,
            test_fraction: p.test_fraction,
            min_client_size: p.min_client_size,
            schedule: match p.schedule {
                ScheduleKind::Rotation => ScheduleGenerator::Rotation,
                ScheduleKind::Resample => ScheduleGenerator::Resample,
                ScheduleKind::Uniform => ScheduleGenerator::Uniform,
            },
            task_dominant_share: p.task_dominant_share,
            client_sizes: p.client_sizes.clone(),
        }
    }

    pub fn federation_config(&self, federated: bool) -> FederationConfig {
        let f = &self.federation;
        FederationConfig {
            rounds_per_task: f.rounds_per_task,
            local_iterations: f.local_iterations,
            batch_size: f.batch_size,
            weighting: match f.weighting {
                WeightingKind::BySampleCount => Weighting::BySampleCount,
                WeightingKind::Uniform => Weighting::Uniform,
            },
            execution: if f.parallel_clients {
                Execution::Parallel
            } else {
                Execution::Serial
            },
            aggregate: federated,
        }
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            family: match self.model.family {
                FamilyKind::Logistic => ModelFamily::Logistic,
                FamilyKind::Mlp => ModelFamily::Mlp {
                    hidden: self.model.hidden.clone(),
                },
            },
            input_dim,
            num_classes,
            init_seed: seed,
            learning_rate: self.model.learning_rate,
            l2: self.model.l2,
        }
    }

    /// Builds the dataset for one sweep seed. Synthetic data is drawn fresh
    /// per seed; a CSV file is the same for every seed.
    pub fn load_dataset(&self, seed: u64, config_dir: &Path) -> Result<Dataset, String> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(s), None) => {
                let spec = synthetic_spec(s, seed).map_err(|e| format!("data.synthetic: {e}"))?;
                fedshift_core::data::generate_synthetic(&spec)
                    .map_err(|e| format!("data.synthetic: {e}"))
            }
            (None, Some(c)) => {
                let path = resolve_path(config_dir, &c.path);
                let schema = CsvSchema {
                    feature_columns: c.feature_columns.clone(),
                    label_column: c.label_column.clone(),
                    label_values: c.label_values.clone(),
                    attribute_column: c.attribute_column.clone(),
                    attribute_values: c.attribute_values.clone(),
                };
                fedshift_core::data::ingest_csv(&path, &schema)
                    .map_err(|e| format!("data.csv ({}): {e}", path.display()))
            }
            _ => Err("data: configure exactly one of data.synthetic or data.csv".into()),
        }
    }

    /// The per-client prevalence rows for the pandemic scenario.
    pub fn pandemic_schedule(&self, dataset: &Dataset) -> Result<NovelDiseaseSchedule, String> {
        let p = self
            .pandemic
            .as_ref()
            .ok_or("pandemic: section missing")?;
        let novel_label = dataset
            .schema()
            .labels
            .index_of(&p.novel_label)
            .ok_or_else(|| format!("pandemic.novel_label: {:?} not in label set", p.novel_label))?;
        let k = self.partition.clients;
        let rows = match &p.rows {
            Some(rows) => rows.clone(),
            None => {
                let fast = p.fast_clients.unwrap_or_else(|| default_fast_clients(k));
                let fast_row = p.fast_row.clone().unwrap_or_else(|| FAST_ONSET.to_vec());
                let slow_row = p.slow_row.clone().unwrap_or_else(|| SLOW_ONSET.to_vec());
                (0..k)
                    .map(|c| {
                        if c < fast {
                            fast_row.clone()
                        } else {
                            slow_row.clone()
                        }
                    })
                    .collect()
            }
        };
        Ok(NovelDiseaseSchedule { novel_label, rows })
    }

    pub fn scenario(&self, dataset: &Dataset) -> Result<Scenario, String> {
        match self.run.scenario {
            ScenarioKind::Localized => Ok(Scenario::Localized),
            ScenarioKind::Pandemic => Ok(Scenario::NovelDisease {
                schedule: self.pandemic_schedule(dataset)?,
                task_size: self.pandemic.as_ref().and_then(|p| p.task_size),
            }),
        }
    }

    /// Where this run's bundle lands, under the given output root.
    pub fn bundle_dir(&self, output_root: &Path) -> PathBuf {
        let sub = self.run.output_dir.as_deref().unwrap_or(&self.run.name);
        output_root.join(sub)
    }
}

/// The default split when none is configured: three clients hit fast, the
/// rest slow.
fn default_fast_clients(num_clients: usize) -> usize {
    num_clients.min(3)
}

fn resolve_path(config_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_dir.join(p)
    }
}

fn resolve_strategy(entry: &StrategyEntry) -> ResolvedStrategy {
    let strategy = match entry.kind {
        StrategyKind::Erm => StrategyConfig::Erm,
        StrategyKind::Cb => StrategyConfig::ClassBalanced,
        StrategyKind::Gb => StrategyConfig::GroupBalanced,
        StrategyKind::Er => StrategyConfig::Replay {
            capacity: entry.capacity,
            replay_ratio: entry.replay_ratio,
        },
        StrategyKind::Mixup => StrategyConfig::Mixup { alpha: entry.alpha },
        StrategyKind::Crt => StrategyConfig::Crt {
            stage2_fraction: entry.stage2_fraction,
        },
        StrategyKind::Swad => StrategyConfig::Swad {
            window: entry.window,
        },
    };
    let label = entry.label.clone().unwrap_or_else(|| {
        if entry.federated {
            format!("F-{}", strategy.name())
        } else {
            strategy.name().to_string()
        }
    });
    ResolvedStrategy {
        label,
        strategy,
        federated: entry.federated,
    }
}

fn validate_synthetic(s: &SyntheticSection, errors: &mut Vec<String>) {
    match synthetic_spec(s, 0) {
        Ok(spec) => {
            if let Err(e) = spec.validate() {
                errors.push(format!("data.synthetic: {e}"));
            }
        }
        Err(e) => errors.push(format!("data.synthetic: {e}")),
    }
}

fn validate_csv(c: &CsvSection, errors: &mut Vec<String>) {
    if c.path.is_empty() {
        errors.push("data.csv.path: must not be empty".into());
    }
    if c.feature_columns.is_empty() {
        errors.push("data.csv.feature_columns: at least one required".into());
    }
    if c.label_values.len() < 2 {
        errors.push("data.csv.label_values: at least two classes required".into());
    }
    if c.attribute_values.len() < 2 {
        errors.push("data.csv.attribute_values: at least two values required".into());
    }
}

/// A deterministic unit vector, fixed per (role, index) so the same config
/// always produces the same means regardless of sweep seed.
fn unit_direction(dim: usize, role: u64, index: usize) -> Vec<f64> {
    let mut rng = derive_rng(0, &[tags::MEANS, role, index as u64]);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn synthetic_spec(s: &SyntheticSection, seed: u64) -> Result<SyntheticSpec, String> {
    let labels = LabelSpace::new(s.classes.clone()).map_err(|e| e.to_string())?;
    let attributes = AttributeSchema::new(s.attribute.clone(), s.attribute_values.clone())
        .map_err(|e| e.to_string())?;
    let num_classes = labels.num_classes();
    let num_attrs = attributes.num_values();
    let means = match (&s.means, s.class_scale, s.attribute_scale) {
        (Some(m), None, None) => m.clone(),
        (None, Some(cs), Some(asc)) => {
            let class_dirs: Vec<Vec<f64>> = (0..num_classes)
                .map(|c| unit_direction(s.feature_dim, 0, c))
                .collect();
            let attr_dirs: Vec<Vec<f64>> = (0..num_attrs)
                .map(|a| unit_direction(s.feature_dim, 1, a))
                .collect();
            (0..num_classes)
                .map(|c| {
                    (0..num_attrs)
                        .map(|a| {
                            (0..s.feature_dim)
                                .map(|j| cs * class_dirs[c][j] + asc * attr_dirs[a][j])
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
        (Some(_), _, _) => {
            return Err("means and class_scale/attribute_scale are mutually exclusive".into())
        }
        _ => {
            return Err(
                "set either means or both class_scale and attribute_scale".into(),
            )
        }
    };
    let attribute_probs = s
        .attribute_probs
        .clone()
        .unwrap_or_else(|| vec![1.0 / num_attrs as f64; num_attrs]);
    Ok(SyntheticSpec {
        labels,
        attributes,
        feature_dim: s.feature_dim,
        class_probs: s.class_probs.clone(),
        attribute_probs,
        means,
        variance: s.variance,
        num_records: s.num_records,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> String {
        r#"
[run]
name = "smoke"
scenario = "localized"
seeds = [1, 2]

[data.synthetic]
classes = ["a", "b"]
attribute_values = ["x", "y"]
feature_dim = 2
class_probs = [0.5, 0.5]
num_records = 400
class_scale = 1.0
attribute_scale = 0.5

[model]
family = "logistic"

[[strategies]]
kind = "erm"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let config: RunConfig = toml::from_str(&minimal_toml()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.run.seeds, vec![1, 2]);
        assert_eq!(config.partition.clients, 10, "defaults fill in");
        assert_eq!(config.federation.rounds_per_task, 20);
        let strategies = config.resolved_strategies();
        assert_eq!(strategies[0].label, "F-ERM");
    }

    #[test]
    fn non_federated_entry_drops_the_prefix() {
        let mut toml_text = minimal_toml();
        toml_text.push_str("\n[[strategies]]\nkind = \"erm\"\nfederated = false\n");
        let config: RunConfig = toml_from(&toml_text);
        config.validate().unwrap();
        let labels: Vec<String> = config
            .resolved_strategies()
            .iter()
            .map(|s| s.label.clone())
            .collect();
        assert_eq!(labels, vec!["F-ERM", "ERM"]);
    }

    fn toml_from(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn validation_reports_every_problem_at_once() {
        let text = r#"
[run]
name = ""
scenario = "pandemic"
seeds = []

[data]

[model]
family = "logistic"
learning_rate = -1.0
"#;
        let config: RunConfig = toml::from_str(&format!(
            "{text}\n[[strategies]]\nkind = \"er\"\nreplay_ratio = 2.0\n"
        ))
        .unwrap();
        let errors = config.validate().unwrap_err();
        let text = errors.join("\n");
        assert!(text.contains("run.name"), "{text}");
        assert!(text.contains("run.seeds"), "{text}");
        assert!(text.contains("data:"), "{text}");
        assert!(text.contains("learning_rate"), "{text}");
        assert!(text.contains("replay_ratio") || text.contains("F-ER"), "{text}");
        assert!(text.contains("pandemic"), "{text}");
        assert!(errors.len() >= 5, "want the full list, got {errors:?}");
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let mut text = minimal_toml();
        text.push_str("\n[[strategies]]\nkind = \"erm\"\n");
        let config = toml_from(&text);
        let errors = config.validate().unwrap_err();
        assert!(errors.iter().any(|e| e.contains("duplicate label")));
    }

    #[test]
    fn unknown_fields_are_parse_errors() {
        let mut text = minimal_toml();
        text.push_str("\n[federation]\nrounds = 3\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn pandemic_defaults_fill_fast_and_slow_rows() {
        let text = r#"
[run]
name = "p"
scenario = "pandemic"
seeds = [1]

[data.synthetic]
classes = ["a", "b", "nov"]
attribute_values = ["x", "y"]
feature_dim = 2
class_probs = [0.5, 0.45, 0.05]
num_records = 400
class_scale = 1.0
attribute_scale = 0.5

[model]
family = "logistic"

[partition]
clients = 5
tasks = 4

[[strategies]]
kind = "cb"

[pandemic]
novel_label = "nov"
"#;
        let config: RunConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        let data = config
            .load_dataset(1, Path::new("."))
            .expect("synthetic data");
        let schedule = config.pandemic_schedule(&data).unwrap();
        assert_eq!(schedule.rows.len(), 5);
        assert_eq!(schedule.rows[2], FAST_ONSET.to_vec());
        assert_eq!(schedule.rows[3], SLOW_ONSET.to_vec());
        assert_eq!(schedule.novel_label, 2);
    }

    #[test]
    fn auto_means_are_seed_independent_and_scaled() {
        let config = toml_from(&minimal_toml());
        let s = config.data.synthetic.as_ref().unwrap();
        let a = synthetic_spec(s, 1).unwrap();
        let b = synthetic_spec(s, 2).unwrap();
        assert_eq!(a.means, b.means, "means must not depend on the sweep seed");
        // Each class direction has unit norm before scaling, so the two
        // class means differ by about 2 * class_scale on average.
        let m = &a.means;
        assert_eq!(m.len(), 2);
        assert_eq!(m[0][0].len(), 2);
        let norm0: f64 = m[0][0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm0 > 0.0);
    }
}
