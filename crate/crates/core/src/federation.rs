//! The federated training loop: clients train locally on their current
//! task, a coordinator averages their parameters each round, and everyone
//! advances to the next task together. Evaluation after each task fills a
//! lower-triangular matrix of scores on every test task seen so far.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{sgd_step, sgd_step_masked, Batch, ModelSpec, ParamVector};
use crate::metrics::{evaluate, EvalResult};
use crate::partition::{
    localized_split, make_clients, novel_disease_split, split_holdout, ClientPartitionReport,
    ClientProfile, ClientTimeline, NovelDiseaseSchedule, PartitionPlan, PartitionReport,
};
use crate::rng::{derive_rng, derive_seed, tags};
use crate::strategies::{
    crt_schedule, mixup_batch, sample_batch_class_balanced, sample_batch_er,
    sample_batch_group_balanced, sample_batch_uniform, CrtPhase, ReplayBuffer, StrategyConfig,
    SwadState,
};

/// How client contributions are weighted in the average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Proportional to the client's current train-task size.
    BySampleCount,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Communication rounds per task.
    pub rounds_per_task: usize,
    /// Local SGD iterations per client per round.
    pub local_iterations: usize,
    pub batch_size: usize,
    pub weighting: Weighting,
    pub execution: Execution,
    /// When false, clients train in isolation and never average; the
    /// non-federated baseline.
    pub aggregate: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds_per_task: 20,
            local_iterations: 5,
            batch_size: 10,
            weighting: Weighting::BySampleCount,
            execution: Execution::Serial,
            aggregate: true,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds_per_task == 0 {
            return Err(Error::Invalid("rounds_per_task must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Coordinate-wise weighted mean of parameter vectors. Weights are
/// normalized first, so any common scaling of them is a no-op. Per
/// coordinate, the weighted terms are summed in sorted order, which makes
/// the result independent of how the clients are listed; and when every
/// input is bit-identical the result is exactly that input, so an
/// aggregation of a consensus is a true no-op.
pub fn fedavg(params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if params.is_empty() {
        return Err(Error::EmptyInput("parameter list"));
    }
    if weights.len() != params.len() {
        return Err(Error::Invalid(format!(
            "{} weights for {} parameter vectors",
            weights.len(),
            params.len()
        )));
    }
    let layout = params[0].layout();
    for (i, p) in params.iter().enumerate() {
        if p.layout() != layout {
            return Err(Error::LayoutMismatch(format!(
                "client {i} has a different parameter layout"
            )));
        }
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Invalid(
            "aggregation weights must be finite and nonnegative".into(),
        ));
    }
    // Sum the weights in value order, not argument order, so the
    // normalizer (and with it the whole mean) is permutation invariant
    // down to the last bit.
    let mut ordered = weights.to_vec();
    ordered.sort_by(|a, b| a.total_cmp(b));
    let total: f64 = ordered.iter().sum();
    if total <= 0.0 {
        return Err(Error::Invalid("aggregation weights sum to zero".into()));
    }
    if params[1..].iter().all(|p| p == &params[0]) {
        // The mean of identical vectors is that vector, exactly; skipping
        // the arithmetic keeps consensus rounds bit-stable.
        return Ok(params[0].clone());
    }
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let len = layout.total_len();
    let mut values = vec![0.0; len];
    let mut terms = vec![0.0; params.len()];
    for (coord, value) in values.iter_mut().enumerate() {
        for (i, p) in params.iter().enumerate() {
            terms[i] = normalized[i] * p.values()[coord];
        }
        terms.sort_by(|a, b| a.total_cmp(b));
        *value = terms.iter().sum();
    }
    ParamVector::new(values, layout.clone())
}

/// One client's full mutable state across the experiment.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub profile: ClientProfile,
    pub timeline: ClientTimeline,
    pub params: ParamVector,
    /// Root for this client's per-round training streams.
    pub seed: u64,
    pub buffer: Option<ReplayBuffer>,
    pub swad: Option<SwadState>,
}

impl ClientState {
    /// Sets up state for one client: shared initial parameters and strategy
    /// scratch (buffer or averaging window) seeded from the run seed and
    /// the client id.
    pub fn new(
        profile: ClientProfile,
        timeline: ClientTimeline,
        params: ParamVector,
        strategy: &StrategyConfig,
        run_seed: u64,
    ) -> Result<Self> {
        let client_id = profile.client_id;
        let buffer = match strategy {
            StrategyConfig::Replay { capacity, .. } => Some(ReplayBuffer::new(
                *capacity,
                derive_seed(run_seed, &[tags::BUFFER, client_id as u64]),
            )),
            _ => None,
        };
        let swad = match strategy {
            StrategyConfig::Swad { window } => {
                Some(SwadState::new(*window, params.layout().clone())?)
            }
            _ => None,
        };
        Ok(Self {
            profile,
            timeline,
            params,
            seed: derive_seed(run_seed, &[tags::CLIENT_SEED, client_id as u64]),
            buffer,
            swad,
        })
    }

    /// Parameters used for evaluation: the averaged window when the
    /// strategy keeps one (and it has content), the live parameters
    /// otherwise.
    pub fn eval_params(&self) -> ParamVector {
        self.swad
            .as_ref()
            .and_then(|s| s.finalize())
            .unwrap_or_else(|| self.params.clone())
    }
}

/// Loss bookkeeping for one client in one round. `pre` is the mean local
/// training loss over the round's iterations; `post` is the loss of the
/// round's final (post-aggregation) parameters on the client's last local
/// batch. Both absent when the round ran zero iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundLoss {
    pub client_id: usize,
    pub pre: Option<f64>,
    pub post: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub task: usize,
    pub round: usize,
    pub losses: Vec<ClientRoundLoss>,
    /// Fingerprint of every client's parameters after the round, folded in
    /// client order.
    pub checksum: u64,
}

fn fold_checksums(states: &[ClientState]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for state in states {
        for byte in state.params.checksum().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Runs the strategy's local loop for one client on one round: M batches,
/// M gradient steps, streaming into the replay buffer and the averaging
/// window where those exist.
fn train_client_round(
    client: &mut ClientState,
    model: &ModelSpec,
    strategy: &StrategyConfig,
    cfg: &FederationConfig,
    task_idx: usize,
    round_idx: usize,
    phase: CrtPhase,
) -> Result<(Option<f64>, Option<Batch>)> {
    let task = &client.timeline.train_tasks[task_idx];
    let mut rng = derive_rng(client.seed, &[tags::TRAIN, task_idx as u64, round_idx as u64]);
    let mut loss_sum = 0.0;
    let mut last_batch = None;
    for _ in 0..cfg.local_iterations {
        let batch = match strategy {
            StrategyConfig::Erm | StrategyConfig::Swad { .. } => {
                sample_batch_uniform(task, cfg.batch_size, &mut rng)?
            }
            StrategyConfig::ClassBalanced => {
                sample_batch_class_balanced(task, cfg.batch_size, &mut rng)?
            }
            StrategyConfig::GroupBalanced => {
                sample_batch_group_balanced(task, cfg.batch_size, &mut rng)?
            }
            StrategyConfig::Mixup { alpha } => {
                let plain = sample_batch_uniform(task, cfg.batch_size, &mut rng)?;
                mixup_batch(plain, *alpha, &mut rng)?
            }
            StrategyConfig::Replay { replay_ratio, .. } => {
                let buffer = client.buffer.as_ref().expect("replay strategy has a buffer");
                let draw = sample_batch_er(task, buffer, cfg.batch_size, *replay_ratio, &mut rng)?;
                let buffer = client.buffer.as_mut().expect("replay strategy has a buffer");
                for record in draw.fresh {
                    buffer.update(record);
                }
                draw.batch
            }
            StrategyConfig::Crt { .. } => match phase {
                CrtPhase::Stage1 => sample_batch_uniform(task, cfg.batch_size, &mut rng)?,
                CrtPhase::Stage2 => sample_batch_class_balanced(task, cfg.batch_size, &mut rng)?,
            },
        };
        let (loss, grad) = model.loss_and_grad(&client.params, &batch)?;
        client.params = match (strategy, phase) {
            (StrategyConfig::Crt { .. }, CrtPhase::Stage2) => sgd_step_masked(
                &client.params,
                &grad,
                model.learning_rate,
                model.l2,
                client.params.layout().final_layer_range(),
            )?,
            _ => sgd_step(&client.params, &grad, model.learning_rate, model.l2)?,
        };
        if let Some(swad) = &mut client.swad {
            swad.update(&client.params)?;
        }
        loss_sum += loss;
        last_batch = Some(batch);
    }
    let mean_loss = (cfg.local_iterations > 0).then(|| loss_sum / cfg.local_iterations as f64);
    Ok((mean_loss, last_batch))
}

fn with_client_context(e: Error, client_id: usize, task: usize, round: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "client {client_id}, task {task}, round {round}: {what}"
        )),
        other => other,
    }
}

/// One communication round: every client trains locally, then (unless
/// aggregation is off) the coordinator averages their parameters and
/// broadcasts the result back.
pub fn run_round(
    clients: &mut [ClientState],
    model: &ModelSpec,
    strategy: &StrategyConfig,
    cfg: &FederationConfig,
    task_idx: usize,
    round_idx: usize,
    phase: CrtPhase,
) -> Result<RoundRecord> {
    let local = |client: &mut ClientState| {
        let client_id = client.profile.client_id;
        train_client_round(client, model, strategy, cfg, task_idx, round_idx, phase)
            .map_err(|e| with_client_context(e, client_id, task_idx, round_idx))
    };
    let outcomes: Vec<(Option<f64>, Option<Batch>)> = match cfg.execution {
        Execution::Serial => {
            let mut out = Vec::with_capacity(clients.len());
            for client in clients.iter_mut() {
                out.push(local(client)?);
            }
            out
        }
        Execution::Parallel => clients
            .par_iter_mut()
            .map(local)
            .collect::<Result<Vec<_>>>()?,
    };

    if cfg.aggregate {
        let weights: Vec<f64> = clients
            .iter()
            .map(|c| match cfg.weighting {
                Weighting::BySampleCount => c.timeline.train_tasks[task_idx].len() as f64,
                Weighting::Uniform => 1.0,
            })
            .collect();
        let stacked: Vec<ParamVector> = clients.iter().map(|c| c.params.clone()).collect();
        let merged = fedavg(&stacked, &weights)?;
        for client in clients.iter_mut() {
            client.params = merged.clone();
        }
    }

    let mut losses = Vec::with_capacity(clients.len());
    for (client, (pre, last_batch)) in clients.iter().zip(&outcomes) {
        let post = match last_batch {
            Some(batch) => Some(
                model
                    .loss_and_grad(&client.params, batch)
                    .map_err(|e| {
                        with_client_context(e, client.profile.client_id, task_idx, round_idx)
                    })?
                    .0,
            ),
            None => None,
        };
        losses.push(ClientRoundLoss {
            client_id: client.profile.client_id,
            pre: *pre,
            post,
        });
    }
    Ok(RoundRecord {
        task: task_idx,
        round: round_idx,
        losses,
        checksum: fold_checksums(clients),
    })
}

/// Scores on test tasks after each training task: a lower-triangular
/// matrix (trained task, eval task), a pooled evaluation on the client's
/// whole test pool after each task, and a shared hold-out slot. Each cell
/// is written exactly once.
#[derive(Debug, Clone)]
pub struct EvalMatrix {
    num_tasks: usize,
    cells: Vec<Option<EvalResult>>,
    pooled: Vec<Option<EvalResult>>,
    holdout: Option<EvalResult>,
}

impl EvalMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            cells: vec![None; num_tasks * num_tasks],
            pooled: vec![None; num_tasks],
            holdout: None,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn slot(&self, trained: usize, eval: usize) -> usize {
        trained * self.num_tasks + eval
    }

    pub fn set(&mut self, trained: usize, eval: usize, result: EvalResult) -> Result<()> {
        if trained >= self.num_tasks || eval > trained {
            return Err(Error::Invalid(format!(
                "cell ({trained}, {eval}) outside the lower triangle of {} tasks",
                self.num_tasks
            )));
        }
        let slot = self.slot(trained, eval);
        if self.cells[slot].is_some() {
            return Err(Error::Invalid(format!(
                "cell ({trained}, {eval}) already populated"
            )));
        }
        self.cells[slot] = Some(result);
        Ok(())
    }

    pub fn get(&self, trained: usize, eval: usize) -> Option<&EvalResult> {
        self.cells.get(self.slot(trained, eval))?.as_ref()
    }

    pub fn set_pooled(&mut self, trained: usize, result: EvalResult) -> Result<()> {
        if trained >= self.num_tasks {
            return Err(Error::Invalid(format!("task {trained} out of range")));
        }
        if self.pooled[trained].is_some() {
            return Err(Error::Invalid(format!(
                "pooled slot {trained} already populated"
            )));
        }
        self.pooled[trained] = Some(result);
        Ok(())
    }

    /// Evaluation over the union of all test tasks, taken after training
    /// task `trained`. The set is the same at every step, so successive
    /// entries are directly comparable.
    pub fn pooled(&self, trained: usize) -> Option<&EvalResult> {
        self.pooled.get(trained)?.as_ref()
    }

    pub fn set_holdout(&mut self, result: EvalResult) -> Result<()> {
        if self.holdout.is_some() {
            return Err(Error::Invalid("holdout slot already populated".into()));
        }
        self.holdout = Some(result);
        Ok(())
    }

    pub fn holdout(&self) -> Option<&EvalResult> {
        self.holdout.as_ref()
    }

    /// Lower-triangle rows of one scalar metric, e.g. for forgetting.
    pub fn metric_rows(&self, f: impl Fn(&EvalResult) -> f64) -> Vec<Vec<f64>> {
        (0..self.num_tasks)
            .map(|t| {
                (0..=t)
                    .filter_map(|j| self.get(t, j).map(&f))
                    .collect()
            })
            .collect()
    }
}

fn eval_on(model: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<EvalResult> {
    let scores = model.forward(params, &data.features_matrix())?;
    evaluate(scores.view(), &data.labels())
}

fn eval_pooled(
    model: &ModelSpec,
    params: &ParamVector,
    tasks: &[Dataset],
) -> Result<EvalResult> {
    let total: usize = tasks.iter().map(|t| t.len()).sum();
    let dim = tasks[0].schema().feature_dim;
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for task in tasks {
        for record in task.records() {
            for (j, &x) in record.features.iter().enumerate() {
                features[[row, j]] = x;
            }
            labels.push(record.label);
            row += 1;
        }
    }
    let scores = model.forward(params, &features)?;
    evaluate(scores.view(), &labels)
}

/// Trains one task to completion (all rounds) and evaluates every client
/// on each test task seen so far, plus the client's whole test pool.
pub fn run_task(
    clients: &mut [ClientState],
    model: &ModelSpec,
    strategy: &StrategyConfig,
    cfg: &FederationConfig,
    task_idx: usize,
    matrices: &mut [EvalMatrix],
) -> Result<Vec<RoundRecord>> {
    let phases = match strategy {
        StrategyConfig::Crt { stage2_fraction } => {
            crt_schedule(cfg.rounds_per_task, *stage2_fraction)?
        }
        _ => vec![CrtPhase::Stage1; cfg.rounds_per_task],
    };
    let mut records = Vec::with_capacity(cfg.rounds_per_task);
    for (round_idx, &phase) in phases.iter().enumerate() {
        records.push(run_round(
            clients, model, strategy, cfg, task_idx, round_idx, phase,
        )?);
    }
    for (client, matrix) in clients.iter().zip(matrices.iter_mut()) {
        let eval_params = client.eval_params();
        for j in 0..=task_idx {
            let result = eval_on(model, &eval_params, &client.timeline.test_tasks[j])?;
            matrix.set(task_idx, j, result)?;
        }
        let pooled = eval_pooled(model, &eval_params, &client.timeline.test_tasks)?;
        matrix.set_pooled(task_idx, pooled)?;
    }
    Ok(records)
}

/// What kind of shift the task timelines encode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    /// Attribute emphasis drifts from task to task.
    Localized,
    /// A novel class ramps up according to per-client prevalence rows.
    NovelDisease {
        schedule: NovelDiseaseSchedule,
        /// Fixed train-task size; the train pool divided evenly otherwise.
        task_size: Option<usize>,
    },
}

/// A fully specified experiment: one dataset in, one result bundle out.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub plan: PartitionPlan,
    pub scenario: Scenario,
    pub model: ModelSpec,
    pub strategy: StrategyConfig,
    pub federation: FederationConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub profiles: Vec<ClientProfile>,
    pub matrices: Vec<EvalMatrix>,
    pub rounds: Vec<RoundRecord>,
    pub partition: PartitionReport,
    /// Live parameters per client after the final round (not the averaged
    /// window a strategy may evaluate with).
    pub final_params: Vec<ParamVector>,
}

impl ExperimentResult {
    /// Mean of a per-result scalar across clients at one matrix cell;
    /// `None` if any client lacks the value there.
    pub fn mean_over_clients(
        &self,
        trained: usize,
        eval: usize,
        f: impl Fn(&EvalResult) -> Option<f64>,
    ) -> Option<f64> {
        let mut sum = 0.0;
        for matrix in &self.matrices {
            sum += f(matrix.get(trained, eval)?)?;
        }
        Some(sum / self.matrices.len() as f64)
    }
}

/// Everything the partitioning phase produces, before any training.
#[derive(Debug, Clone)]
pub struct PreparedPartition {
    pub holdout: Dataset,
    pub profiles: Vec<ClientProfile>,
    pub timelines: Vec<ClientTimeline>,
    pub report: PartitionReport,
}

/// Runs just the data pipeline: hold-out split, client allocation, and
/// per-client timeline construction.
pub fn prepare_partition(
    dataset: &Dataset,
    plan: &PartitionPlan,
    scenario: &Scenario,
) -> Result<PreparedPartition> {
    plan.validate()?;
    if let Scenario::NovelDisease { schedule, .. } = scenario {
        schedule.validate(plan.num_clients, plan.num_tasks, dataset.num_classes())?;
    }

    let holdout = split_holdout(dataset, plan.holdout_fraction, plan.seed)?;
    if holdout.holdout.is_empty() {
        return Err(Error::Invalid(
            "hold-out set came out empty; dataset too small for the fraction".into(),
        ));
    }
    let alloc = make_clients(&holdout.remainder, plan)?;

    let mut warnings = holdout.warnings.clone();
    let mut relaxations = Vec::new();
    let mut client_reports = Vec::with_capacity(alloc.clients.len());
    let mut profiles = Vec::with_capacity(alloc.clients.len());
    let mut timelines = Vec::with_capacity(alloc.clients.len());
    for (profile, shard) in &alloc.clients {
        let outcome = match scenario {
            Scenario::Localized => localized_split(shard, profile, plan)?,
            Scenario::NovelDisease {
                schedule,
                task_size,
            } => novel_disease_split(
                shard,
                profile.client_id,
                &schedule.rows[profile.client_id],
                schedule.novel_label,
                plan,
                *task_size,
            )?,
        };
        client_reports.push(ClientPartitionReport::from_outcome(
            profile,
            shard.len(),
            &outcome,
        ));
        relaxations.extend(outcome.relaxations.clone());
        warnings.extend(outcome.warnings.clone());
        profiles.push(profile.clone());
        timelines.push(outcome.timeline);
    }
    let report = PartitionReport {
        total_records: dataset.len(),
        holdout_size: holdout.holdout.len(),
        holdout_class_counts: holdout.holdout.class_counts(),
        holdout_attr_counts: holdout.holdout.attribute_counts(),
        unallocated: alloc.unallocated,
        clients: client_reports,
        relaxations,
        warnings,
    };
    Ok(PreparedPartition {
        holdout: holdout.holdout,
        profiles,
        timelines,
        report,
    })
}

/// Runs the whole pipeline: hold-out split, client allocation, timeline
/// construction, all tasks, final hold-out evaluation.
pub fn run_experiment(dataset: &Dataset, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.strategy.validate()?;
    spec.model.validate()?;
    spec.federation.validate()?;
    let prepared = prepare_partition(dataset, &spec.plan, &spec.scenario)?;
    let PreparedPartition {
        holdout,
        profiles,
        timelines,
        report: partition,
    } = prepared;

    let init = spec.model.init()?;
    let mut clients = Vec::with_capacity(timelines.len());
    for (profile, timeline) in profiles.iter().zip(timelines) {
        clients.push(ClientState::new(
            profile.clone(),
            timeline,
            init.clone(),
            &spec.strategy,
            spec.seed,
        )?);
    }

    let mut matrices = vec![EvalMatrix::new(spec.plan.num_tasks); clients.len()];
    let mut rounds = Vec::new();
    for task_idx in 0..spec.plan.num_tasks {
        rounds.extend(run_task(
            &mut clients,
            &spec.model,
            &spec.strategy,
            &spec.federation,
            task_idx,
            &mut matrices,
        )?);
    }

    for (client, matrix) in clients.iter().zip(matrices.iter_mut()) {
        let result = eval_on(&spec.model, &client.eval_params(), &holdout)?;
        matrix.set_holdout(result)?;
    }

    Ok(ExperimentResult {
        profiles,
        matrices,
        rounds,
        partition,
        final_params: clients.into_iter().map(|c| c.params).collect(),
    })
}
