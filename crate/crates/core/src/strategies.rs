//! Training strategies: how a client turns its current task (and possibly
//! a memory of older data) into gradient batches, plus the schedules and
//! parameter averaging some strategies add around the basic SGD loop.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::learner::{Batch, Layout, MixInfo, ParamVector};
use crate::rng::{derive_rng, tags};

/// Which batch construction (and training-loop decoration) a client uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StrategyConfig {
    /// Plain uniform sampling.
    Erm,
    /// Every present class equally likely per slot.
    ClassBalanced,
    /// Every present attribute group equally likely per slot.
    GroupBalanced,
    /// Reservoir memory of past records replayed into each batch.
    Replay { capacity: usize, replay_ratio: f64 },
    /// Pairwise feature interpolation with Beta-distributed weights.
    Mixup { alpha: f64 },
    /// Two-stage training: full model first, then the output layer alone
    /// on class-balanced batches for the final rounds of each task.
    Crt { stage2_fraction: f64 },
    /// Evaluate with the mean of the last `window` post-step parameters.
    Swad { window: usize },
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyConfig::Erm | StrategyConfig::ClassBalanced | StrategyConfig::GroupBalanced => {
                Ok(())
            }
            StrategyConfig::Replay {
                capacity,
                replay_ratio,
            } => {
                if *capacity == 0 {
                    return Err(Error::Invalid("replay capacity must be positive".into()));
                }
                if !(0.0..=1.0).contains(replay_ratio) || !replay_ratio.is_finite() {
                    return Err(Error::Invalid(format!(
                        "replay_ratio must lie in [0, 1], got {replay_ratio}"
                    )));
                }
                Ok(())
            }
            StrategyConfig::Mixup { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::Invalid(format!(
                        "mixup alpha must be positive, got {alpha}"
                    )));
                }
                Ok(())
            }
            StrategyConfig::Crt { stage2_fraction } => {
                if !(stage2_fraction.is_finite()
                    && *stage2_fraction > 0.0
                    && *stage2_fraction < 1.0)
                {
                    return Err(Error::Invalid(format!(
                        "stage2_fraction must lie strictly between 0 and 1, got {stage2_fraction}"
                    )));
                }
                Ok(())
            }
            StrategyConfig::Swad { window } => {
                if *window == 0 {
                    return Err(Error::Invalid("swad window must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Erm => "ERM",
            StrategyConfig::ClassBalanced => "CB",
            StrategyConfig::GroupBalanced => "GB",
            StrategyConfig::Replay { .. } => "ER",
            StrategyConfig::Mixup { .. } => "MIXUP",
            StrategyConfig::Crt { .. } => "CRT",
            StrategyConfig::Swad { .. } => "SWAD",
        }
    }
}

// ---------------------------------------------------------------------------
// Batch samplers

fn schema_dim(task: &Dataset) -> usize {
    task.schema().feature_dim
}

/// Uniform sampling with replacement.
pub fn sample_batch_uniform<R: Rng>(task: &Dataset, batch_size: usize, rng: &mut R) -> Result<Batch> {
    if task.is_empty() {
        return Err(Error::EmptyInput("task data"));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    let records = task.records();
    let picks: Vec<&Record> = (0..batch_size)
        .map(|_| &records[rng.random_range(0..records.len())])
        .collect();
    Batch::from_records(&picks, schema_dim(task))
}

/// Buckets record indices by a key in 0..key_count, dropping empty buckets.
fn bucket_indices(
    task: &Dataset,
    key_count: usize,
    key: impl Fn(&Record) -> usize,
) -> Vec<Vec<usize>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); key_count];
    for (i, record) in task.records().iter().enumerate() {
        buckets[key(record)].push(i);
    }
    buckets.retain(|b| !b.is_empty());
    buckets
}

fn sample_batch_bucketed<R: Rng>(
    task: &Dataset,
    buckets: &[Vec<usize>],
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    if task.is_empty() {
        return Err(Error::EmptyInput("task data"));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    let records = task.records();
    let picks: Vec<&Record> = (0..batch_size)
        .map(|_| {
            let bucket = &buckets[rng.random_range(0..buckets.len())];
            &records[bucket[rng.random_range(0..bucket.len())]]
        })
        .collect();
    Batch::from_records(&picks, schema_dim(task))
}

/// Each slot picks a class uniformly among those present, then a record
/// uniformly within it. Absent classes simply do not participate.
pub fn sample_batch_class_balanced<R: Rng>(
    task: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    let buckets = bucket_indices(task, task.num_classes(), |r| r.label);
    sample_batch_bucketed(task, &buckets, batch_size, rng)
}

/// Each slot picks an attribute group uniformly among those present, then
/// a record uniformly within it.
pub fn sample_batch_group_balanced<R: Rng>(
    task: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    let buckets = bucket_indices(task, task.num_attribute_values(), |r| r.attribute);
    sample_batch_bucketed(task, &buckets, batch_size, rng)
}

// ---------------------------------------------------------------------------
// Replay buffer

/// Fixed-capacity reservoir over a stream of records. After `n` updates
/// every record seen so far has the same `capacity / n` chance of being
/// held, regardless of its position in the stream.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    seen: u64,
    stored: Vec<Record>,
    rng: rand_chacha::ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            seen: 0,
            stored: Vec::with_capacity(capacity),
            rng: derive_rng(seed, &[tags::BUFFER]),
        }
    }

    /// One reservoir step for an incoming record.
    pub fn update(&mut self, record: Record) {
        self.seen += 1;
        if self.stored.len() < self.capacity {
            self.stored.push(record);
        } else if self.capacity > 0 {
            let slot = self.rng.random_range(0..self.seen);
            if (slot as usize) < self.capacity {
                self.stored[slot as usize] = record;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn records(&self) -> &[Record] {
        &self.stored
    }
}

/// A batch drawn partly from memory: `ceil(replay_ratio * batch_size)`
/// records from the buffer (less if it holds fewer), the rest fresh from
/// the current task. Replayed records come first in the batch.
#[derive(Debug, Clone)]
pub struct ErDraw {
    pub batch: Batch,
    /// How many leading batch rows came from the buffer.
    pub replayed: usize,
    /// Clones of the fresh current-task records, in batch order, so the
    /// caller can stream them into the buffer afterwards.
    pub fresh: Vec<Record>,
}

pub fn sample_batch_er<R: Rng>(
    task: &Dataset,
    buffer: &ReplayBuffer,
    batch_size: usize,
    replay_ratio: f64,
    rng: &mut R,
) -> Result<ErDraw> {
    if task.is_empty() {
        return Err(Error::EmptyInput("task data"));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&replay_ratio) {
        return Err(Error::Invalid(format!(
            "replay_ratio must lie in [0, 1], got {replay_ratio}"
        )));
    }
    let want_replay = (replay_ratio * batch_size as f64).ceil() as usize;
    let replayed = want_replay.min(buffer.len()).min(batch_size);
    let records = task.records();
    let stored = buffer.records();
    let mut picks: Vec<&Record> = Vec::with_capacity(batch_size);
    for _ in 0..replayed {
        picks.push(&stored[rng.random_range(0..stored.len())]);
    }
    let mut fresh = Vec::with_capacity(batch_size - replayed);
    for _ in replayed..batch_size {
        let pick = &records[rng.random_range(0..records.len())];
        picks.push(pick);
        fresh.push(pick.clone());
    }
    Ok(ErDraw {
        batch: Batch::from_records(&picks, schema_dim(task))?,
        replayed,
        fresh,
    })
}

// ---------------------------------------------------------------------------
// Mixup

/// Applies feature interpolation with the given partner permutation and
/// per-row weights: row i becomes lambda * x_i + (1 - lambda) * x_partner.
/// The loss side sees both labels weighted by lambda via `MixInfo`.
pub fn mixup_batch_with(batch: Batch, partners: &[usize], lambdas: &[f64]) -> Result<Batch> {
    let n = batch.len();
    if partners.len() != n || lambdas.len() != n {
        return Err(Error::Invalid(format!(
            "mixup needs {n} partners and lambdas, got {} and {}",
            partners.len(),
            lambdas.len()
        )));
    }
    if partners.iter().any(|&p| p >= n) {
        return Err(Error::Invalid("mixup partner index out of range".into()));
    }
    if lambdas
        .iter()
        .any(|&l| !l.is_finite() || !(0.0..=1.0).contains(&l))
    {
        return Err(Error::Invalid("mixup lambdas must lie in [0, 1]".into()));
    }
    let original = batch.features.clone();
    let mut mixed = batch;
    let mut partner_labels = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = lambdas[i];
        let partner = partners[i];
        for j in 0..mixed.features.ncols() {
            mixed.features[[i, j]] =
                lambda * original[[i, j]] + (1.0 - lambda) * original[[partner, j]];
        }
        partner_labels.push(mixed.labels[partner]);
    }
    mixed.mix = Some(MixInfo {
        partner_labels,
        lambdas: lambdas.to_vec(),
    });
    Ok(mixed)
}

/// Draws a partner permutation and per-row Beta(alpha, alpha) weights, then
/// interpolates. Small alpha pushes the weights toward {0, 1}, recovering
/// plain training in the limit.
pub fn mixup_batch<R: Rng>(batch: Batch, alpha: f64, rng: &mut R) -> Result<Batch> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Invalid(format!(
            "mixup alpha must be positive, got {alpha}"
        )));
    }
    let n = batch.len();
    let mut partners: Vec<usize> = (0..n).collect();
    // Fisher-Yates, matching what a slice shuffle does.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        partners.swap(i, j);
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Invalid(format!("beta distribution: {e}")))?;
    let lambdas: Vec<f64> = (0..n).map(|_| beta.sample(rng)).collect();
    mixup_batch_with(batch, &partners, &lambdas)
}

// ---------------------------------------------------------------------------
// Two-stage schedule

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrtPhase {
    /// Full-model training on the strategy's usual batches.
    Stage1,
    /// Output layer only, on class-balanced batches.
    Stage2,
}

/// Phase per round: the last `floor(stage2_fraction * rounds)` rounds are
/// stage two, everything before them stage one. With a single round the
/// floor keeps it in stage one, so the model always gets full training.
pub fn crt_schedule(rounds: usize, stage2_fraction: f64) -> Result<Vec<CrtPhase>> {
    if !(stage2_fraction > 0.0 && stage2_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "stage2_fraction must lie strictly between 0 and 1, got {stage2_fraction}"
        )));
    }
    let stage2 = (stage2_fraction * rounds as f64).floor() as usize;
    let stage1 = rounds - stage2;
    Ok(std::iter::repeat(CrtPhase::Stage1)
        .take(stage1)
        .chain(std::iter::repeat(CrtPhase::Stage2).take(stage2))
        .collect())
}

// ---------------------------------------------------------------------------
// Dense parameter averaging

/// Rolling window over post-step parameter vectors; finalize yields their
/// coordinate-wise mean. Training always continues from the raw (last)
/// parameters; the average is for evaluation only.
#[derive(Debug, Clone)]
pub struct SwadState {
    window: usize,
    layout: Layout,
    history: VecDeque<Vec<f64>>,
}

impl SwadState {
    pub fn new(window: usize, layout: Layout) -> Result<Self> {
        if window == 0 {
            return Err(Error::Invalid("swad window must be positive".into()));
        }
        Ok(Self {
            window,
            layout,
            history: VecDeque::new(),
        })
    }

    pub fn update(&mut self, params: &ParamVector) -> Result<()> {
        if *params.layout() != self.layout {
            return Err(Error::LayoutMismatch(
                "swad state built for a different model".into(),
            ));
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(params.values().to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Mean of the snapshots currently in the window; `None` before any
    /// update.
    pub fn finalize(&self) -> Option<ParamVector> {
        if self.history.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.layout.total_len()];
        for snapshot in &self.history {
            for (m, &v) in mean.iter_mut().zip(snapshot) {
                *m += v;
            }
        }
        let n = self.history.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        Some(ParamVector::new(mean, self.layout.clone()).expect("mean of finite params"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeSchema, Dataset, DatasetSchema, LabelSpace};

    fn toy_task(class_counts: &[usize], attr_period: usize) -> Dataset {
        let num_classes = class_counts.len().max(2);
        let labels =
            LabelSpace::new((0..num_classes).map(|i| format!("c{i}")).collect()).unwrap();
        let attributes =
            AttributeSchema::new("g", (0..attr_period).map(|i| format!("g{i}")).collect())
                .unwrap();
        let mut records = Vec::new();
        let mut id = 0u64;
        for (label, &count) in class_counts.iter().enumerate() {
            for _ in 0..count {
                records.push(crate::data::Record {
                    record_id: id,
                    features: vec![id as f64, label as f64],
                    label,
                    attribute: (id as usize) % attr_period,
                });
                id += 1;
            }
        }
        Dataset::new(
            DatasetSchema {
                labels,
                attributes,
                feature_dim: 2,
            },
            records,
        )
        .unwrap()
    }

    #[test]
    fn class_balanced_equalizes_lopsided_classes() {
        let task = toy_task(&[900, 100], 2);
        let mut rng = derive_rng(3, &[50]);
        let mut minority = 0usize;
        let total_batches = 2000;
        for _ in 0..total_batches {
            let batch = sample_batch_class_balanced(&task, 10, &mut rng).unwrap();
            minority += batch.labels.iter().filter(|&&l| l == 1).count();
        }
        let share = minority as f64 / (total_batches * 10) as f64;
        assert!(
            (share - 0.5).abs() < 0.03,
            "minority share {share} should be near 0.5"
        );
    }

    #[test]
    fn uniform_sampler_tracks_base_rate() {
        let task = toy_task(&[900, 100], 2);
        let mut rng = derive_rng(4, &[50]);
        let mut minority = 0usize;
        let total_batches = 2000;
        for _ in 0..total_batches {
            let batch = sample_batch_uniform(&task, 10, &mut rng).unwrap();
            minority += batch.labels.iter().filter(|&&l| l == 1).count();
        }
        let share = minority as f64 / (total_batches * 10) as f64;
        assert!(
            (share - 0.1).abs() < 0.02,
            "minority share {share} should be near its base rate 0.1"
        );
    }

    #[test]
    fn group_balanced_equalizes_groups() {
        // Ids alternate over 4 groups but class 1 is rare, so group shares
        // under uniform sampling would track the data; balanced sampling
        // pins each group near 1/4.
        let task = toy_task(&[800, 80], 4);
        let mut rng = derive_rng(5, &[50]);
        let mut group0 = 0usize;
        for _ in 0..2000 {
            let batch = sample_batch_group_balanced(&task, 10, &mut rng).unwrap();
            group0 += batch.attributes.iter().filter(|&&a| a == 0).count();
        }
        let share = group0 as f64 / 20_000.0;
        assert!((share - 0.25).abs() < 0.03);
    }

    #[test]
    fn balanced_sampler_skips_absent_classes() {
        let task = toy_task(&[50, 0, 50], 2);
        let mut rng = derive_rng(6, &[50]);
        for _ in 0..200 {
            let batch = sample_batch_class_balanced(&task, 8, &mut rng).unwrap();
            assert!(batch.labels.iter().all(|&l| l != 1));
        }
    }

    #[test]
    fn samplers_reject_empty_task_and_zero_batch() {
        let task = toy_task(&[10, 10], 2);
        let empty = task.with_records(Vec::new()).unwrap();
        let mut rng = derive_rng(7, &[50]);
        assert!(sample_batch_uniform(&empty, 4, &mut rng).is_err());
        assert!(sample_batch_uniform(&task, 0, &mut rng).is_err());
    }

    #[test]
    fn reservoir_keeps_prefix_then_stays_at_capacity() {
        let task = toy_task(&[50, 50], 2);
        let mut buffer = ReplayBuffer::new(10, 1);
        for record in task.records() {
            buffer.update(record.clone());
            assert!(buffer.len() <= 10);
        }
        assert_eq!(buffer.len(), 10);
        assert_eq!(buffer.seen(), 100);
    }

    #[test]
    fn reservoir_is_unbiased_over_stream_positions() {
        // Capacity 1 over a 100-record stream, 10,000 seeds: each position
        // should be retained about 100 times. Binomial(10^4, 10^-2) has
        // sigma just under 10, so a band of plus or minus 30 is three
        // sigma; a position-biased reservoir lands far outside it.
        let stream = 100usize;
        let trials = 10_000u64;
        let mut kept = vec![0usize; stream];
        for seed in 0..trials {
            let mut buffer = ReplayBuffer::new(1, seed);
            for pos in 0..stream {
                buffer.update(crate::data::Record {
                    record_id: pos as u64,
                    features: vec![0.0],
                    label: 0,
                    attribute: 0,
                });
            }
            kept[buffer.records()[0].record_id as usize] += 1;
        }
        for (pos, &count) in kept.iter().enumerate() {
            assert!(
                (70..=130).contains(&count),
                "position {pos} kept {count} times, outside the 3-sigma band"
            );
        }
    }

    #[test]
    fn er_batch_mixes_buffer_and_fresh() {
        let old_task = toy_task(&[40, 40], 2);
        let new_task = toy_task(&[30, 30], 2);
        let mut buffer = ReplayBuffer::new(200, 9);
        for record in old_task.records() {
            let mut shifted = record.clone();
            shifted.record_id += 10_000; // distinguish buffer records by id
            buffer.update(shifted);
        }
        let mut rng = derive_rng(9, &[51]);
        let draw = sample_batch_er(&new_task, &buffer, 10, 0.5, &mut rng).unwrap();
        assert_eq!(draw.replayed, 5);
        assert_eq!(draw.batch.len(), 10);
        assert_eq!(draw.fresh.len(), 5);
        // Fresh records come from the current task, not the buffer.
        assert!(draw.fresh.iter().all(|r| r.record_id < 10_000));
    }

    #[test]
    fn er_replay_count_ceils_and_caps() {
        let task = toy_task(&[30, 30], 2);
        let mut rng = derive_rng(10, &[51]);
        // Ratio 0.34 of 10 asks for ceil(3.4) = 4.
        let mut buffer = ReplayBuffer::new(200, 1);
        for record in task.records() {
            buffer.update(record.clone());
        }
        let draw = sample_batch_er(&task, &buffer, 10, 0.34, &mut rng).unwrap();
        assert_eq!(draw.replayed, 4);
        // An empty buffer yields a fully fresh batch.
        let empty = ReplayBuffer::new(200, 2);
        let draw = sample_batch_er(&task, &empty, 10, 0.5, &mut rng).unwrap();
        assert_eq!(draw.replayed, 0);
        assert_eq!(draw.batch.len(), 10);
        assert_eq!(draw.fresh.len(), 10);
    }

    #[test]
    fn mixup_with_forced_lambdas_interpolates_features() {
        let task = toy_task(&[2, 2], 2);
        let records: Vec<&crate::data::Record> = task.records().iter().collect();
        let batch = Batch::from_records(&records, 2).unwrap();
        let partners = vec![1, 0, 3, 2];
        let lambdas = vec![0.25, 1.0, 0.5, 0.0];
        let original = batch.features.clone();
        let mixed = mixup_batch_with(batch, &partners, &lambdas).unwrap();
        for j in 0..2 {
            assert!(
                (mixed.features[[0, j]]
                    - (0.25 * original[[0, j]] + 0.75 * original[[1, j]]))
                    .abs()
                    < 1e-15
            );
            // Lambda 1 leaves the row untouched.
            assert_eq!(mixed.features[[1, j]], original[[1, j]]);
            // Lambda 0 swaps the row for its partner entirely.
            assert_eq!(mixed.features[[3, j]], original[[2, j]]);
        }
        let mix = mixed.mix.unwrap();
        assert_eq!(mix.partner_labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn mixup_small_alpha_polarizes_lambdas() {
        let task = toy_task(&[50, 50], 2);
        let records: Vec<&crate::data::Record> = task.records().iter().collect();
        let batch = Batch::from_records(&records, 2).unwrap();
        let mut rng = derive_rng(12, &[52]);
        let mixed = mixup_batch(batch, 0.05, &mut rng).unwrap();
        let lambdas = mixed.mix.unwrap().lambdas;
        let middling = lambdas.iter().filter(|&&l| (0.1..=0.9).contains(&l)).count();
        assert!(
            middling * 4 < lambdas.len(),
            "Beta(0.05, 0.05) should concentrate near 0 and 1, got {middling} middling of {}",
            lambdas.len()
        );
    }

    #[test]
    fn mixup_rejects_bad_arguments() {
        let task = toy_task(&[2, 2], 2);
        let records: Vec<&crate::data::Record> = task.records().iter().collect();
        let batch = Batch::from_records(&records, 2).unwrap();
        assert!(mixup_batch_with(batch.clone(), &[0, 1], &[0.5, 0.5]).is_err());
        assert!(mixup_batch_with(batch.clone(), &[9, 0, 1, 2], &[0.5; 4]).is_err());
        assert!(mixup_batch_with(batch.clone(), &[0, 1, 2, 3], &[1.5; 4]).is_err());
        let mut rng = derive_rng(1, &[1]);
        assert!(mixup_batch(batch, 0.0, &mut rng).is_err());
    }

    #[test]
    fn crt_schedule_floors_stage_two() {
        let phases = crt_schedule(10, 0.3).unwrap();
        assert_eq!(phases.len(), 10);
        assert!(phases[..7].iter().all(|&p| p == CrtPhase::Stage1));
        assert!(phases[7..].iter().all(|&p| p == CrtPhase::Stage2));
        // floor(0.5 * 1) = 0: a single round stays in stage one.
        assert_eq!(crt_schedule(1, 0.5).unwrap(), vec![CrtPhase::Stage1]);
        assert!(crt_schedule(10, 0.0).is_err());
        assert!(crt_schedule(10, 1.0).is_err());
    }

    #[test]
    fn swad_window_mean_is_exact() {
        let layout = Layout::new(vec![(2, 1)]);
        let p1 = ParamVector::new(vec![1.0, 10.0], layout.clone()).unwrap();
        let p2 = ParamVector::new(vec![2.0, 20.0], layout.clone()).unwrap();
        let p3 = ParamVector::new(vec![4.0, 40.0], layout.clone()).unwrap();
        let mut state = SwadState::new(2, layout).unwrap();
        state.update(&p1).unwrap();
        state.update(&p2).unwrap();
        state.update(&p3).unwrap();
        let mean = state.finalize().unwrap();
        assert_eq!(mean.values(), &[3.0, 30.0]);
    }

    #[test]
    fn swad_empty_returns_none_and_window_one_tracks_last() {
        let layout = Layout::new(vec![(2, 1)]);
        let state = SwadState::new(3, layout.clone()).unwrap();
        assert!(state.finalize().is_none());
        let mut state = SwadState::new(1, layout.clone()).unwrap();
        state
            .update(&ParamVector::new(vec![1.0, 1.0], layout.clone()).unwrap())
            .unwrap();
        state
            .update(&ParamVector::new(vec![5.0, 6.0], layout).unwrap())
            .unwrap();
        assert_eq!(state.finalize().unwrap().values(), &[5.0, 6.0]);
    }

    #[test]
    fn strategy_validation_catches_bad_parameters() {
        assert!(StrategyConfig::Replay {
            capacity: 0,
            replay_ratio: 0.5
        }
        .validate()
        .is_err());
        assert!(StrategyConfig::Replay {
            capacity: 10,
            replay_ratio: 1.5
        }
        .validate()
        .is_err());
        assert!(StrategyConfig::Mixup { alpha: -1.0 }.validate().is_err());
        assert!(StrategyConfig::Crt {
            stage2_fraction: 1.0
        }
        .validate()
        .is_err());
        assert!(StrategyConfig::Swad { window: 0 }.validate().is_err());
        assert!(StrategyConfig::Erm.validate().is_ok());
    }
}
