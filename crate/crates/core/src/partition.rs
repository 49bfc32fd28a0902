//! Carves a dataset into a stratified hold-out set, per-client shards with
//! controlled demographic makeup, and per-client task timelines that shift
//! over time (drifting attributes or a growing novel class).
//!
//! All draws pop from per-(class, attribute) pools that are shuffled once
//! with seed-derived streams, so a partition is a pure function of the
//! dataset and the plan. Quotas use largest-remainder rounding, which keeps
//! every realized count within one record of its target.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, tags};

/// Everything the partitioner needs to know, minus the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub num_clients: usize,
    pub num_tasks: usize,
    pub seed: u64,
    /// Fraction of clients whose attribute mix is deliberately skewed.
    pub skewed_fraction: f64,
    /// Share of a skewed client's records drawn from its dominant attribute.
    pub skew_share: f64,
    /// Largest allowed max/min attribute-count ratio on balanced clients.
    pub balance_ratio: f64,
    /// Fraction of the full dataset reserved as the shared hold-out set.
    pub holdout_fraction: f64,
    /// Fraction of each client's shard reserved for its test timeline.
    pub test_fraction: f64,
    pub min_client_size: usize,
    pub schedule: ScheduleGenerator,
    /// Share of a task drawn from that task's dominant attribute.
    pub task_dominant_share: f64,
    /// Optional per-client shard sizes; equal split of the pool otherwise.
    pub client_sizes: Option<Vec<usize>>,
}

impl Default for PartitionPlan {
    fn default() -> Self {
        Self {
            num_clients: 10,
            num_tasks: 4,
            seed: 0,
            skewed_fraction: 0.5,
            skew_share: 0.8,
            balance_ratio: 1.2,
            holdout_fraction: 0.2,
            test_fraction: 0.2,
            min_client_size: 100,
            schedule: ScheduleGenerator::Rotation,
            task_dominant_share: 0.6,
            client_sizes: None,
        }
    }
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Invalid("num_clients must be positive".into()));
        }
        if self.num_tasks == 0 {
            return Err(Error::Invalid("num_tasks must be positive".into()));
        }
        for (name, value) in [
            ("holdout_fraction", self.holdout_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::Invalid(format!(
                    "{name} must lie strictly between 0 and 1, got {value}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.skewed_fraction) {
            return Err(Error::Invalid(format!(
                "skewed_fraction must lie in [0, 1], got {}",
                self.skewed_fraction
            )));
        }
        for (name, value) in [
            ("skew_share", self.skew_share),
            ("task_dominant_share", self.task_dominant_share),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::Invalid(format!(
                    "{name} must lie in (0, 1], got {value}"
                )));
            }
        }
        if self.balance_ratio < 1.0 {
            return Err(Error::Invalid(format!(
                "balance_ratio must be at least 1, got {}",
                self.balance_ratio
            )));
        }
        if self.min_client_size == 0 {
            return Err(Error::Invalid("min_client_size must be positive".into()));
        }
        if let Some(sizes) = &self.client_sizes {
            if sizes.len() != self.num_clients {
                return Err(Error::Invalid(format!(
                    "client_sizes has {} entries for {} clients",
                    sizes.len(),
                    self.num_clients
                )));
            }
        }
        Ok(())
    }
}

/// How each client's per-task attribute emphasis evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleGenerator {
    /// Dominant attribute rotates one step per task.
    Rotation,
    /// Dominant attribute drawn fresh per (client, task).
    Resample,
    /// No temporal emphasis; tasks mirror the client pool.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Balanced,
    Skewed,
}

/// A client's demographic makeup target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub kind: ClientKind,
    /// Target share per attribute value; sums to 1.
    pub attr_distribution: Vec<f64>,
    /// Dominant attribute and its share, for skewed clients.
    pub dominant: Option<(usize, f64)>,
}

/// One client's data over time: a train task and a test task per step,
/// all pairwise disjoint.
#[derive(Debug, Clone)]
pub struct ClientTimeline {
    pub client_id: usize,
    pub train_tasks: Vec<Dataset>,
    pub test_tasks: Vec<Dataset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Test,
}

/// A stratification target that could not be met exactly; the shortfall
/// was shifted onto attributes with spare records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaxationEvent {
    pub client_id: usize,
    pub task: usize,
    pub split: SplitKind,
    pub attribute: usize,
    pub wanted: usize,
    pub got: usize,
}

/// Result of building one client's timeline.
#[derive(Debug, Clone)]
pub struct TimelineOutcome {
    pub timeline: ClientTimeline,
    /// Train-task attribute targets, where the schedule prescribes one.
    pub task_targets: Vec<Option<Vec<f64>>>,
    pub relaxations: Vec<RelaxationEvent>,
    pub warnings: Vec<String>,
    /// Train-pool records no task consumed (novel-class splits only).
    pub train_leftover: usize,
}

/// Novel-class prevalence per task, one row per client. Row values are the
/// share of each train task made up of the novel class; the first task is
/// always free of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelDiseaseSchedule {
    pub novel_label: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Prevalence ramp for clients hit early and hard.
pub const FAST_ONSET: [f64; 4] = [0.0, 0.10, 0.50, 0.90];
/// Prevalence ramp for clients hit late and mildly.
pub const SLOW_ONSET: [f64; 4] = [0.0, 0.0, 0.10, 0.50];

impl NovelDiseaseSchedule {
    pub fn validate(&self, num_clients: usize, num_tasks: usize, num_classes: usize) -> Result<()> {
        if self.novel_label >= num_classes {
            return Err(Error::Invalid(format!(
                "novel label {} out of range for {num_classes} classes",
                self.novel_label
            )));
        }
        if self.rows.len() != num_clients {
            return Err(Error::Invalid(format!(
                "schedule has {} rows for {num_clients} clients",
                self.rows.len()
            )));
        }
        for (client, row) in self.rows.iter().enumerate() {
            validate_prevalence_row(row, num_tasks)
                .map_err(|e| Error::Invalid(format!("client {client}: {e}")))?;
        }
        Ok(())
    }
}

fn validate_prevalence_row(row: &[f64], num_tasks: usize) -> std::result::Result<(), String> {
    if row.len() != num_tasks {
        return Err(format!(
            "prevalence row has {} entries for {num_tasks} tasks",
            row.len()
        ));
    }
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err("prevalence must lie in [0, 1]".into());
    }
    if row[0] != 0.0 {
        return Err(format!(
            "the first task must have zero novel prevalence, got {}",
            row[0]
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Quota arithmetic

/// Splits `total` into integer counts proportional to `weights` using
/// largest-remainder rounding: floor the quotas, then hand the leftover
/// units to the largest fractional parts (ties to the lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    if total == 0 {
        return vec![0; weights.len()];
    }
    let weight_sum: f64 = weights.iter().sum();
    debug_assert!(weight_sum > 0.0, "cannot apportion over zero weight");
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| w / weight_sum * total as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Largest-remainder apportionment with per-bin capacity caps. Overflow
/// demand is reassigned proportionally to the remaining spare capacity.
/// `None` when the caps cannot absorb `total` at all.
fn apportion_capped(weights: &[f64], caps: &[usize], total: usize) -> Option<Vec<usize>> {
    if caps.iter().sum::<usize>() < total {
        return None;
    }
    let mut take = largest_remainder(weights, total);
    for (t, &cap) in take.iter_mut().zip(caps) {
        *t = (*t).min(cap);
    }
    let mut assigned: usize = take.iter().sum();
    while assigned < total {
        let spare: Vec<f64> = take
            .iter()
            .zip(caps)
            .map(|(&t, &c)| (c - t) as f64)
            .collect();
        let add = largest_remainder(&spare, total - assigned);
        for i in 0..take.len() {
            let granted = add[i].min(caps[i] - take[i]);
            take[i] += granted;
        }
        let now: usize = take.iter().sum();
        debug_assert!(now > assigned, "capped apportionment must progress");
        assigned = now;
    }
    Some(take)
}

/// Near-equal split of `total` into `parts` integer chunks.
fn near_equal(total: usize, parts: usize) -> Vec<usize> {
    largest_remainder(&vec![1.0; parts], total)
}

// ---------------------------------------------------------------------------
// Record pools

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LabelFilter {
    All,
    Only(usize),
    Except(usize),
}

impl LabelFilter {
    fn allows(self, label: usize) -> bool {
        match self {
            LabelFilter::All => true,
            LabelFilter::Only(l) => label == l,
            LabelFilter::Except(l) => label != l,
        }
    }
}

/// Per-(class, attribute) record pools, each shuffled once by its own
/// seed-derived stream. Draws pop from the front, so a pool sequence is
/// fixed the moment it is built.
struct CellPools {
    num_labels: usize,
    num_attrs: usize,
    cells: Vec<VecDeque<Record>>,
}

impl CellPools {
    fn build(records: &[Record], num_labels: usize, num_attrs: usize, seed: u64, path: &[u64]) -> Self {
        let mut buckets: Vec<Vec<Record>> = vec![Vec::new(); num_labels * num_attrs];
        for record in records {
            buckets[record.label * num_attrs + record.attribute].push(record.clone());
        }
        let mut cells = Vec::with_capacity(buckets.len());
        for (idx, mut bucket) in buckets.into_iter().enumerate() {
            let (label, attr) = (idx / num_attrs, idx % num_attrs);
            bucket.sort_by_key(|r| r.record_id);
            let mut tag_path = path.to_vec();
            tag_path.push(label as u64);
            tag_path.push(attr as u64);
            let mut rng = derive_rng(seed, &tag_path);
            bucket.shuffle(&mut rng);
            cells.push(bucket.into());
        }
        Self {
            num_labels,
            num_attrs,
            cells,
        }
    }

    fn cell_len(&self, label: usize, attr: usize) -> usize {
        self.cells[label * self.num_attrs + attr].len()
    }

    fn avail_attr(&self, attr: usize, filter: LabelFilter) -> usize {
        (0..self.num_labels)
            .filter(|&l| filter.allows(l))
            .map(|l| self.cell_len(l, attr))
            .sum()
    }

    fn avail_total(&self, filter: LabelFilter) -> usize {
        (0..self.num_attrs).map(|a| self.avail_attr(a, filter)).sum()
    }

    fn remaining(&self) -> usize {
        self.cells.iter().map(|c| c.len()).sum()
    }

    fn pop(&mut self, label: usize, attr: usize, n: usize, out: &mut Vec<Record>) {
        let cell = &mut self.cells[label * self.num_attrs + attr];
        for _ in 0..n {
            out.push(cell.pop_front().expect("pool underflow"));
        }
    }

    /// Takes `n` records of one attribute, spread over the allowed classes
    /// in proportion to what each class still has.
    fn take_from_attr(&mut self, attr: usize, n: usize, filter: LabelFilter, out: &mut Vec<Record>) {
        if n == 0 {
            return;
        }
        let labels: Vec<usize> = (0..self.num_labels).filter(|&l| filter.allows(l)).collect();
        let avail: Vec<usize> = labels.iter().map(|&l| self.cell_len(l, attr)).collect();
        let weights: Vec<f64> = avail.iter().map(|&a| a as f64).collect();
        let take = apportion_capped(&weights, &avail, n).expect("attr availability checked");
        for (i, &label) in labels.iter().enumerate() {
            self.pop(label, attr, take[i], out);
        }
    }

    /// Drain whatever is left, in (class, attribute) cell order.
    fn drain_all(&mut self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.remaining());
        for cell in &mut self.cells {
            out.extend(cell.drain(..));
        }
        out
    }
}

/// How a stratified draw spreads records over attributes.
enum AttrTarget<'a> {
    /// Explicit shares per attribute.
    Weights(&'a [f64]),
    /// Proportional to what the pools currently hold.
    Availability,
}

struct DrawContext<'a> {
    client_id: usize,
    task: usize,
    split: SplitKind,
    events: &'a mut Vec<RelaxationEvent>,
}

/// Draws `count` records spread over attributes per `target`. In strict
/// mode a per-attribute shortfall is an error naming the attribute; in
/// relaxed mode the shortfall moves to attributes with spare records and
/// every deviation from the ideal is logged.
fn draw_stratified(
    pools: &mut CellPools,
    count: usize,
    target: AttrTarget,
    filter: LabelFilter,
    strict: bool,
    attr_names: &[String],
    mut relax: Option<DrawContext>,
) -> Result<Vec<Record>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let avail: Vec<usize> = (0..pools.num_attrs)
        .map(|a| pools.avail_attr(a, filter))
        .collect();
    let total_avail: usize = avail.iter().sum();
    if count > total_avail {
        return Err(Error::Invalid(format!(
            "asked for {count} records, pool holds {total_avail}"
        )));
    }
    let ideal = match &target {
        AttrTarget::Weights(w) => largest_remainder(w, count),
        AttrTarget::Availability => {
            let weights: Vec<f64> = avail.iter().map(|&a| a as f64).collect();
            largest_remainder(&weights, count)
        }
    };
    let take = if strict {
        for (attr, (&want, &have)) in ideal.iter().zip(&avail).enumerate() {
            if want > have {
                return Err(Error::InfeasibleAttribute {
                    attribute: attr_names[attr].clone(),
                    required: want,
                    available: have,
                });
            }
        }
        ideal.clone()
    } else {
        let weights: Vec<f64> = match &target {
            AttrTarget::Weights(w) => w.to_vec(),
            AttrTarget::Availability => avail.iter().map(|&a| a as f64).collect(),
        };
        apportion_capped(&weights, &avail, count).expect("total availability checked")
    };
    if let (AttrTarget::Weights(_), Some(ctx)) = (&target, relax.as_mut()) {
        for attr in 0..pools.num_attrs {
            if take[attr] != ideal[attr] {
                ctx.events.push(RelaxationEvent {
                    client_id: ctx.client_id,
                    task: ctx.task,
                    split: ctx.split,
                    attribute: attr,
                    wanted: ideal[attr],
                    got: take[attr],
                });
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for attr in 0..pools.num_attrs {
        pools.take_from_attr(attr, take[attr], filter, &mut out);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hold-out split

/// A stratified hold-out carve: the set itself, what remains, and any
/// cells too small to split.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub remainder: Dataset,
    pub holdout: Dataset,
    pub warnings: Vec<String>,
}

/// Reserves `fraction` of every (class, attribute) cell as a shared
/// hold-out set. Each cell keeps at least one record on the training side;
/// single-record cells stay whole and are reported.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<HoldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "holdout fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let schema = dataset.schema();
    let num_labels = schema.labels.num_classes();
    let num_attrs = schema.attributes.num_values();
    let mut buckets: Vec<Vec<Record>> = vec![Vec::new(); num_labels * num_attrs];
    for record in dataset.records() {
        buckets[record.label * num_attrs + record.attribute].push(record.clone());
    }
    let mut holdout = Vec::new();
    let mut remainder = Vec::new();
    let mut warnings = Vec::new();
    for (idx, mut bucket) in buckets.into_iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let (label, attr) = (idx / num_attrs, idx % num_attrs);
        if bucket.len() == 1 {
            warnings.push(format!(
                "cell ({}, {}) has a single record; kept on the training side",
                schema.labels.name(label),
                schema.attributes.value(attr)
            ));
            remainder.append(&mut bucket);
            continue;
        }
        bucket.sort_by_key(|r| r.record_id);
        let mut rng = derive_rng(seed, &[tags::HOLDOUT, label as u64, attr as u64]);
        bucket.shuffle(&mut rng);
        let take = ((fraction * bucket.len() as f64).round() as usize).min(bucket.len() - 1);
        holdout.extend(bucket.drain(..take));
        remainder.append(&mut bucket);
    }
    holdout.sort_by_key(|r| r.record_id);
    remainder.sort_by_key(|r| r.record_id);
    Ok(HoldoutSplit {
        remainder: dataset.with_records(remainder)?,
        holdout: dataset.with_records(holdout)?,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Client allocation

#[derive(Debug, Clone)]
pub struct ClientAllocation {
    pub clients: Vec<(ClientProfile, Dataset)>,
    /// Records left in the pool after every client took its share.
    pub unallocated: usize,
}

/// Builds client profiles and deals each client its shard. Skewed clients
/// concentrate `skew_share` of their records on one dominant attribute; a
/// shortfall there is a hard error, because a client that cannot meet its
/// skew invalidates the scenario. Balanced clients take the closest
/// achievable uniform mix and are then checked against `balance_ratio`.
pub fn make_clients(dataset: &Dataset, plan: &PartitionPlan) -> Result<ClientAllocation> {
    plan.validate()?;
    let schema = dataset.schema();
    let num_attrs = schema.attributes.num_values();
    let num_labels = schema.labels.num_classes();
    let k = plan.num_clients;

    let sizes = match &plan.client_sizes {
        Some(sizes) => {
            let total: usize = sizes.iter().sum();
            if total > dataset.len() {
                return Err(Error::Invalid(format!(
                    "client_sizes sum to {total}, dataset has {}",
                    dataset.len()
                )));
            }
            sizes.clone()
        }
        None => vec![dataset.len() / k; k],
    };
    for (client, &size) in sizes.iter().enumerate() {
        if size < plan.min_client_size {
            return Err(Error::Invalid(format!(
                "client {client} would get {size} records, below the minimum {}",
                plan.min_client_size
            )));
        }
    }

    let num_skewed = (plan.skewed_fraction * k as f64).round() as usize;
    let mut profiles = Vec::with_capacity(k);
    for client_id in 0..k {
        if client_id < num_skewed {
            let dominant = client_id % num_attrs;
            let rest = (1.0 - plan.skew_share) / (num_attrs - 1) as f64;
            let mut dist = vec![rest; num_attrs];
            dist[dominant] = plan.skew_share;
            profiles.push(ClientProfile {
                client_id,
                kind: ClientKind::Skewed,
                attr_distribution: dist,
                dominant: Some((dominant, plan.skew_share)),
            });
        } else {
            profiles.push(ClientProfile {
                client_id,
                kind: ClientKind::Balanced,
                attr_distribution: vec![1.0 / num_attrs as f64; num_attrs],
                dominant: None,
            });
        }
    }

    let mut pools = CellPools::build(
        dataset.records(),
        num_labels,
        num_attrs,
        plan.seed,
        &[tags::CLIENT_ALLOC],
    );
    let mut clients = Vec::with_capacity(k);
    for profile in profiles {
        let records = draw_stratified(
            &mut pools,
            sizes[profile.client_id],
            AttrTarget::Weights(&profile.attr_distribution),
            LabelFilter::All,
            matches!(profile.kind, ClientKind::Skewed),
            schema.attributes.values(),
            None,
        )?;
        let shard = dataset.with_records(records)?;
        if matches!(profile.kind, ClientKind::Balanced) {
            let counts = shard.attribute_counts();
            let max = *counts.iter().max().unwrap() as f64;
            let min = *counts.iter().min().unwrap() as f64;
            if min == 0.0 || max / min > plan.balance_ratio {
                return Err(Error::Invalid(format!(
                    "balanced client {} got attribute counts {counts:?}, ratio above {}",
                    profile.client_id, plan.balance_ratio
                )));
            }
        }
        clients.push((profile, shard));
    }
    Ok(ClientAllocation {
        unallocated: pools.remaining(),
        clients,
    })
}

// ---------------------------------------------------------------------------
// Timelines

/// Splits a client shard into a held-back test pool and a train pool, both
/// mirroring the shard's composition. Returns the pools plus sizes.
fn reserve_test_pool(
    client_data: &Dataset,
    client_id: usize,
    plan: &PartitionPlan,
) -> Result<(Vec<Record>, Vec<Record>)> {
    let schema = client_data.schema();
    let n = client_data.len();
    let test_n = (plan.test_fraction * n as f64).round() as usize;
    if test_n < plan.num_tasks {
        return Err(Error::Invalid(format!(
            "client {client_id}: test pool of {test_n} cannot cover {} tasks",
            plan.num_tasks
        )));
    }
    if n - test_n < plan.num_tasks {
        return Err(Error::Invalid(format!(
            "client {client_id}: train pool of {} cannot cover {} tasks",
            n - test_n,
            plan.num_tasks
        )));
    }
    let mut pools = CellPools::build(
        client_data.records(),
        schema.labels.num_classes(),
        schema.attributes.num_values(),
        plan.seed,
        &[tags::TEST_POOL, client_id as u64],
    );
    let test_records = draw_stratified(
        &mut pools,
        test_n,
        AttrTarget::Availability,
        LabelFilter::All,
        false,
        schema.attributes.values(),
        None,
    )?;
    let train_records = pools.drain_all();
    Ok((train_records, test_records))
}

/// Attribute target vectors per task under the rotation and resample
/// generators; `None` for the uniform generator.
fn schedule_targets(
    client_id: usize,
    num_attrs: usize,
    plan: &PartitionPlan,
) -> Vec<Option<Vec<f64>>> {
    (0..plan.num_tasks)
        .map(|t| {
            let dominant = match plan.schedule {
                ScheduleGenerator::Rotation => (client_id + t) % num_attrs,
                ScheduleGenerator::Resample => {
                    let mut rng =
                        derive_rng(plan.seed, &[tags::SCHEDULE, client_id as u64, t as u64]);
                    rand::Rng::random_range(&mut rng, 0..num_attrs)
                }
                ScheduleGenerator::Uniform => return None,
            };
            let rest = (1.0 - plan.task_dominant_share) / (num_attrs - 1) as f64;
            let mut target = vec![rest; num_attrs];
            target[dominant] = plan.task_dominant_share;
            Some(target)
        })
        .collect()
}

/// Builds one client's timeline under attribute drift: each train task
/// emphasizes a (possibly rotating) dominant attribute, and each test task
/// is carved from the reserved pool with the same target, so evaluation at
/// step t sees the same kind of data that training did.
pub fn localized_split(
    client_data: &Dataset,
    profile: &ClientProfile,
    plan: &PartitionPlan,
) -> Result<TimelineOutcome> {
    plan.validate()?;
    let schema = client_data.schema();
    let num_attrs = schema.attributes.num_values();
    if profile.attr_distribution.len() != num_attrs {
        return Err(Error::Invalid(format!(
            "profile lists {} attributes, schema has {num_attrs}",
            profile.attr_distribution.len()
        )));
    }
    let client_id = profile.client_id;
    let (train_records, test_records) = reserve_test_pool(client_data, client_id, plan)?;
    let targets = schedule_targets(client_id, num_attrs, plan);
    let mut relaxations = Vec::new();
    let warnings = Vec::new();

    let mut train_pools = CellPools::build(
        &train_records,
        schema.labels.num_classes(),
        num_attrs,
        plan.seed,
        &[tags::TASK_POOL, client_id as u64],
    );
    let train_sizes = near_equal(train_records.len(), plan.num_tasks);
    let mut train_tasks = Vec::with_capacity(plan.num_tasks);
    for (t, &size) in train_sizes.iter().enumerate() {
        let target = match &targets[t] {
            Some(w) => AttrTarget::Weights(w),
            None => AttrTarget::Availability,
        };
        let records = draw_stratified(
            &mut train_pools,
            size,
            target,
            LabelFilter::All,
            false,
            schema.attributes.values(),
            Some(DrawContext {
                client_id,
                task: t,
                split: SplitKind::Train,
                events: &mut relaxations,
            }),
        )?;
        train_tasks.push(client_data.with_records(records)?);
    }

    let mut test_pools = CellPools::build(
        &test_records,
        schema.labels.num_classes(),
        num_attrs,
        plan.seed,
        &[tags::TEST_TASKS, client_id as u64],
    );
    let test_sizes = near_equal(test_records.len(), plan.num_tasks);
    let mut test_tasks = Vec::with_capacity(plan.num_tasks);
    for (t, &size) in test_sizes.iter().enumerate() {
        let target = match &targets[t] {
            Some(w) => AttrTarget::Weights(w),
            None => AttrTarget::Availability,
        };
        let records = draw_stratified(
            &mut test_pools,
            size,
            target,
            LabelFilter::All,
            false,
            schema.attributes.values(),
            Some(DrawContext {
                client_id,
                task: t,
                split: SplitKind::Test,
                events: &mut relaxations,
            }),
        )?;
        test_tasks.push(client_data.with_records(records)?);
    }

    Ok(TimelineOutcome {
        timeline: ClientTimeline {
            client_id,
            train_tasks,
            test_tasks,
        },
        task_targets: targets,
        relaxations,
        warnings,
        train_leftover: train_pools.remaining(),
    })
}

/// Builds one client's timeline under an emerging novel class: train task t
/// is `prevalence[t]` novel records and the rest drawn from the other
/// classes, mirroring the pool. Test tasks follow the same ramp, with at
/// least one novel record whenever the ramp is positive and the shard can
/// supply it. Shortfalls against the train ramp are hard errors with exact
/// counts; test-side shortfalls cap to supply and are reported as warnings.
pub fn novel_disease_split(
    client_data: &Dataset,
    client_id: usize,
    prevalence: &[f64],
    novel_label: usize,
    plan: &PartitionPlan,
    task_size: Option<usize>,
) -> Result<TimelineOutcome> {
    plan.validate()?;
    let schema = client_data.schema();
    let num_labels = schema.labels.num_classes();
    let num_attrs = schema.attributes.num_values();
    if novel_label >= num_labels {
        return Err(Error::Invalid(format!(
            "novel label {novel_label} out of range for {num_labels} classes"
        )));
    }
    validate_prevalence_row(prevalence, plan.num_tasks).map_err(Error::Invalid)?;
    let novel_name = schema.labels.name(novel_label).to_string();

    let n = client_data.len();
    let test_n = (plan.test_fraction * n as f64).round() as usize;
    if test_n < plan.num_tasks {
        return Err(Error::Invalid(format!(
            "client {client_id}: test pool of {test_n} cannot cover {} tasks",
            plan.num_tasks
        )));
    }
    if n - test_n < plan.num_tasks {
        return Err(Error::Invalid(format!(
            "client {client_id}: train pool of {} cannot cover {} tasks",
            n - test_n,
            plan.num_tasks
        )));
    }

    // Plan the novel content of each test task up front and carve the test
    // pool to exactly that demand, leaving every other novel record on the
    // training side. A proportional carve would strand novel records in the
    // test pool (or starve it) whenever the ramp differs from the shard mix.
    let novel_total = client_data.class_counts()[novel_label];
    let test_sizes = near_equal(test_n, plan.num_tasks);
    let mut warnings = Vec::new();
    let mut test_novel = Vec::with_capacity(plan.num_tasks);
    let mut novel_left = novel_total;
    for (t, &share) in prevalence.iter().enumerate() {
        let size_t = test_sizes[t];
        let mut want = (share * size_t as f64).round() as usize;
        if share > 0.0 && want == 0 && novel_left > 0 {
            // Rounding must not erase the novel class from a test task
            // meant to contain it; one record is the floor.
            want = 1;
        }
        want = want.min(size_t);
        if want > novel_left {
            warnings.push(format!(
                "client {client_id}: test task {t} wanted {want} {novel_name} records, pool had {novel_left}"
            ));
            want = novel_left;
        }
        novel_left -= want;
        test_novel.push(want);
    }
    let novel_in_test: usize = test_novel.iter().sum();
    let rest_in_test = test_n - novel_in_test;
    if rest_in_test > n - novel_total {
        return Err(Error::InfeasibleClass {
            class: format!("classes other than {novel_name} (test pool)"),
            required: rest_in_test,
            available: n - novel_total,
        });
    }
    let mut carve_pools = CellPools::build(
        client_data.records(),
        num_labels,
        num_attrs,
        plan.seed,
        &[tags::TEST_POOL, client_id as u64],
    );
    let mut test_records = draw_stratified(
        &mut carve_pools,
        novel_in_test,
        AttrTarget::Availability,
        LabelFilter::Only(novel_label),
        false,
        schema.attributes.values(),
        None,
    )?;
    test_records.extend(draw_stratified(
        &mut carve_pools,
        rest_in_test,
        AttrTarget::Availability,
        LabelFilter::Except(novel_label),
        false,
        schema.attributes.values(),
        None,
    )?);
    let train_records = carve_pools.drain_all();

    let size = match task_size {
        Some(s) => s,
        None => train_records.len() / plan.num_tasks,
    };
    if size == 0 {
        return Err(Error::Invalid(format!(
            "client {client_id}: task size of zero ({} train records over {} tasks)",
            train_records.len(),
            plan.num_tasks
        )));
    }
    if size * plan.num_tasks > train_records.len() {
        return Err(Error::Invalid(format!(
            "client {client_id}: {} tasks of {size} need {} records, train pool has {}",
            plan.num_tasks,
            size * plan.num_tasks,
            train_records.len()
        )));
    }

    let mut train_pools = CellPools::build(
        &train_records,
        num_labels,
        num_attrs,
        plan.seed,
        &[tags::TASK_POOL, client_id as u64],
    );
    let mut train_tasks = Vec::with_capacity(plan.num_tasks);
    for (t, &share) in prevalence.iter().enumerate() {
        let novel_want = (share * size as f64).round() as usize;
        let novel_have = train_pools.avail_total(LabelFilter::Only(novel_label));
        if novel_want > novel_have {
            return Err(Error::InfeasibleClass {
                class: format!("{novel_name} (train task {t})"),
                required: novel_want,
                available: novel_have,
            });
        }
        let rest_want = size - novel_want;
        let rest_have = train_pools.avail_total(LabelFilter::Except(novel_label));
        if rest_want > rest_have {
            return Err(Error::InfeasibleClass {
                class: format!("classes other than {novel_name} (train task {t})"),
                required: rest_want,
                available: rest_have,
            });
        }
        let mut records = draw_stratified(
            &mut train_pools,
            novel_want,
            AttrTarget::Availability,
            LabelFilter::Only(novel_label),
            false,
            schema.attributes.values(),
            None,
        )?;
        records.extend(draw_stratified(
            &mut train_pools,
            rest_want,
            AttrTarget::Availability,
            LabelFilter::Except(novel_label),
            false,
            schema.attributes.values(),
            None,
        )?);
        train_tasks.push(client_data.with_records(records)?);
    }

    let mut test_pools = CellPools::build(
        &test_records,
        num_labels,
        num_attrs,
        plan.seed,
        &[tags::TEST_TASKS, client_id as u64],
    );
    let mut test_tasks = Vec::with_capacity(plan.num_tasks);
    for (t, &novel_want) in test_novel.iter().enumerate() {
        let size_t = test_sizes[t];
        let mut records = draw_stratified(
            &mut test_pools,
            novel_want,
            AttrTarget::Availability,
            LabelFilter::Only(novel_label),
            false,
            schema.attributes.values(),
            None,
        )?;
        records.extend(draw_stratified(
            &mut test_pools,
            size_t - novel_want,
            AttrTarget::Availability,
            LabelFilter::Except(novel_label),
            false,
            schema.attributes.values(),
            None,
        )?);
        test_tasks.push(client_data.with_records(records)?);
    }

    Ok(TimelineOutcome {
        timeline: ClientTimeline {
            client_id,
            train_tasks,
            test_tasks,
        },
        task_targets: vec![None; plan.num_tasks],
        relaxations: Vec::new(),
        warnings,
        train_leftover: train_pools.remaining(),
    })
}

// ---------------------------------------------------------------------------
// Reporting

/// Per-task record counts for one client, for audit output.
#[derive(Debug, Clone, Serialize)]
pub struct TaskCounts {
    pub task: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_class_counts: Vec<usize>,
    pub train_attr_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
    pub test_attr_counts: Vec<usize>,
    pub target_attr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientPartitionReport {
    pub client_id: usize,
    pub kind: ClientKind,
    pub dominant_attribute: Option<usize>,
    pub shard_size: usize,
    pub tasks: Vec<TaskCounts>,
    pub train_leftover: usize,
}

/// Everything an auditor needs to see what the partition actually did.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub total_records: usize,
    pub holdout_size: usize,
    pub holdout_class_counts: Vec<usize>,
    pub holdout_attr_counts: Vec<usize>,
    pub unallocated: usize,
    pub clients: Vec<ClientPartitionReport>,
    pub relaxations: Vec<RelaxationEvent>,
    pub warnings: Vec<String>,
}

impl ClientPartitionReport {
    pub fn from_outcome(profile: &ClientProfile, shard_size: usize, outcome: &TimelineOutcome) -> Self {
        let tasks = outcome
            .timeline
            .train_tasks
            .iter()
            .zip(&outcome.timeline.test_tasks)
            .enumerate()
            .map(|(t, (train, test))| TaskCounts {
                task: t,
                train_size: train.len(),
                test_size: test.len(),
                train_class_counts: train.class_counts(),
                train_attr_counts: train.attribute_counts(),
                test_class_counts: test.class_counts(),
                test_attr_counts: test.attribute_counts(),
                target_attr: outcome.task_targets[t].clone(),
            })
            .collect();
        Self {
            client_id: profile.client_id,
            kind: profile.kind,
            dominant_attribute: profile.dominant.map(|(a, _)| a),
            shard_size,
            tasks,
            train_leftover: outcome.train_leftover,
        }
    }
}
