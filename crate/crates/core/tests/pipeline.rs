//! End-to-end runs through the whole stack: data generation, hold-out and
//! client splits, timelines, federated training, evaluation. The checks
//! here are about identities the pipeline must preserve exactly, so most
//! assertions are bitwise.

use fedshift_core::data::{
    generate_synthetic, ingest_csv, write_csv, AttributeSchema, LabelSpace, SyntheticSpec,
};
use fedshift_core::federation::{
    run_experiment, Execution, ExperimentSpec, FederationConfig, Scenario, Weighting,
};
use fedshift_core::learner::{sgd_step, Batch, ModelFamily, ModelSpec};
use fedshift_core::partition::{
    localized_split, make_clients, split_holdout, NovelDiseaseSchedule, PartitionPlan,
    ScheduleGenerator,
};
use fedshift_core::rng::{derive_rng, derive_seed, tags};
use fedshift_core::strategies::{sample_batch_uniform, StrategyConfig};

fn two_class_data(num_records: usize, seed: u64) -> fedshift_core::data::Dataset {
    generate_synthetic(&SyntheticSpec {
        labels: LabelSpace::new(vec!["neg".into(), "pos".into()]).unwrap(),
        attributes: AttributeSchema::new("site", vec!["a".into(), "b".into()]).unwrap(),
        feature_dim: 3,
        class_probs: vec![0.5, 0.5],
        attribute_probs: vec![0.5, 0.5],
        means: vec![
            vec![vec![-1.0, 0.0, 0.3], vec![-1.0, 0.5, -0.2]],
            vec![vec![1.0, 0.0, -0.3], vec![1.0, -0.5, 0.2]],
        ],
        variance: 1.0,
        num_records,
        seed,
    })
    .unwrap()
}

fn mlp_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        family: ModelFamily::Mlp { hidden: vec![4] },
        input_dim: 3,
        num_classes: 2,
        init_seed: seed,
        learning_rate: 0.1,
        l2: 1e-4,
    }
}

fn small_experiment(strategy: StrategyConfig, seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        plan: PartitionPlan {
            num_clients: 2,
            num_tasks: 2,
            seed,
            min_client_size: 50,
            client_sizes: Some(vec![150, 150]),
            ..PartitionPlan::default()
        },
        scenario: Scenario::Localized,
        model: mlp_spec(seed),
        strategy,
        federation: FederationConfig {
            rounds_per_task: 3,
            local_iterations: 2,
            batch_size: 5,
            weighting: Weighting::BySampleCount,
            execution: Execution::Serial,
            aggregate: true,
        },
        seed,
    }
}

#[test]
fn reruns_are_bit_identical_for_every_strategy() {
    let data = two_class_data(600, 41);
    let strategies = [
        StrategyConfig::Erm,
        StrategyConfig::ClassBalanced,
        StrategyConfig::GroupBalanced,
        StrategyConfig::Mixup { alpha: 0.2 },
        StrategyConfig::Replay {
            capacity: 40,
            replay_ratio: 0.5,
        },
        StrategyConfig::Crt {
            stage2_fraction: 0.34,
        },
        StrategyConfig::Swad { window: 5 },
    ];
    for strategy in strategies {
        let name = strategy.name();
        let spec = small_experiment(strategy, 29);
        let a = run_experiment(&data, &spec).unwrap();
        let b = run_experiment(&data, &spec).unwrap();
        let ca: Vec<u64> = a.rounds.iter().map(|r| r.checksum).collect();
        let cb: Vec<u64> = b.rounds.iter().map(|r| r.checksum).collect();
        assert_eq!(ca, cb, "{name}: round checksums diverged between reruns");
        assert_eq!(
            a.final_params, b.final_params,
            "{name}: final parameters diverged between reruns"
        );
        for (ma, mb) in a.matrices.iter().zip(&b.matrices) {
            for t in 0..2 {
                for j in 0..=t {
                    let (ra, rb) = (ma.get(t, j).unwrap(), mb.get(t, j).unwrap());
                    assert_eq!(ra.ltr, rb.ltr, "{name}: cell ({t}, {j}) differs");
                    assert_eq!(ra.overall_accuracy, rb.overall_accuracy);
                }
            }
            assert_eq!(
                ma.holdout().unwrap().ltr,
                mb.holdout().unwrap().ltr,
                "{name}: holdout differs"
            );
        }
    }
}

#[test]
fn serial_and_parallel_full_runs_agree() {
    let data = two_class_data(600, 43);
    for strategy in [
        StrategyConfig::GroupBalanced,
        StrategyConfig::Mixup { alpha: 0.3 },
        StrategyConfig::Crt {
            stage2_fraction: 0.5,
        },
    ] {
        let name = strategy.name();
        let mut spec = small_experiment(strategy, 31);
        spec.federation.execution = Execution::Serial;
        let serial = run_experiment(&data, &spec).unwrap();
        spec.federation.execution = Execution::Parallel;
        let parallel = run_experiment(&data, &spec).unwrap();
        assert_eq!(
            serial.final_params, parallel.final_params,
            "{name}: execution mode changed the result"
        );
    }
}

/// With one client, aggregation averages a single vector, so the whole
/// federated loop must collapse to an ordinary SGD loop over the same
/// batch stream.
#[test]
fn single_client_federation_is_plain_sgd() {
    let data = two_class_data(400, 47);
    let run_seed = 53;
    let spec = ExperimentSpec {
        plan: PartitionPlan {
            num_clients: 1,
            num_tasks: 2,
            seed: run_seed,
            skewed_fraction: 0.0,
            min_client_size: 50,
            ..PartitionPlan::default()
        },
        scenario: Scenario::Localized,
        model: ModelSpec {
            family: ModelFamily::Logistic,
            input_dim: 3,
            num_classes: 2,
            init_seed: run_seed,
            learning_rate: 0.2,
            l2: 1e-3,
        },
        strategy: StrategyConfig::Erm,
        federation: FederationConfig {
            rounds_per_task: 4,
            local_iterations: 3,
            batch_size: 6,
            weighting: Weighting::BySampleCount,
            execution: Execution::Serial,
            aggregate: true,
        },
        seed: run_seed,
    };
    let federated = run_experiment(&data, &spec).unwrap();

    // The same trajectory, assembled by hand from the pieces.
    let holdout = split_holdout(&data, spec.plan.holdout_fraction, spec.plan.seed).unwrap();
    let alloc = make_clients(&holdout.remainder, &spec.plan).unwrap();
    let (profile, shard) = &alloc.clients[0];
    let outcome = localized_split(shard, profile, &spec.plan).unwrap();
    let client_seed = derive_seed(run_seed, &[tags::CLIENT_SEED, 0]);
    let mut params = spec.model.init().unwrap();
    for task in 0..2u64 {
        for round in 0..4u64 {
            let mut rng = derive_rng(client_seed, &[tags::TRAIN, task, round]);
            for _ in 0..3 {
                let batch: Batch = sample_batch_uniform(
                    &outcome.timeline.train_tasks[task as usize],
                    6,
                    &mut rng,
                )
                .unwrap();
                let (_, grad) = spec.model.loss_and_grad(&params, &batch).unwrap();
                params = sgd_step(&params, &grad, 0.2, 1e-3).unwrap();
            }
        }
    }
    assert_eq!(
        federated.final_params[0], params,
        "one-client federation must be bitwise plain SGD"
    );
}

/// A novel-class ramp that never rises, over data where the novel class
/// never occurs, is the same scenario as attribute-uniform drift. The two
/// code paths must produce bitwise identical runs.
#[test]
fn zero_ramp_on_empty_class_matches_uniform_drift() {
    let data = generate_synthetic(&SyntheticSpec {
        labels: LabelSpace::new(vec!["flu".into(), "cold".into(), "nov".into()]).unwrap(),
        attributes: AttributeSchema::new("site", vec!["a".into(), "b".into()]).unwrap(),
        feature_dim: 3,
        class_probs: vec![0.5, 0.5, 0.0],
        attribute_probs: vec![0.5, 0.5],
        means: vec![
            vec![vec![-1.0, 0.0, 0.3], vec![-1.0, 0.5, -0.2]],
            vec![vec![1.0, 0.0, -0.3], vec![1.0, -0.5, 0.2]],
            vec![vec![0.0, 2.0, 0.0], vec![0.0, 2.0, 0.0]],
        ],
        variance: 1.0,
        num_records: 1200,
        seed: 59,
    })
    .unwrap();
    assert_eq!(data.class_counts()[2], 0, "novel class must stay empty");

    let run_seed = 61;
    let plan = PartitionPlan {
        num_clients: 2,
        num_tasks: 4,
        seed: run_seed,
        schedule: ScheduleGenerator::Uniform,
        min_client_size: 50,
        // 200 per client: test pool 40, train 160, four tasks of 40.
        client_sizes: Some(vec![200, 200]),
        ..PartitionPlan::default()
    };
    let model = ModelSpec {
        family: ModelFamily::Logistic,
        input_dim: 3,
        num_classes: 3,
        init_seed: run_seed,
        learning_rate: 0.15,
        l2: 0.0,
    };
    let federation = FederationConfig {
        rounds_per_task: 3,
        local_iterations: 2,
        batch_size: 5,
        weighting: Weighting::BySampleCount,
        execution: Execution::Serial,
        aggregate: true,
    };
    let localized = ExperimentSpec {
        plan: plan.clone(),
        scenario: Scenario::Localized,
        model: model.clone(),
        strategy: StrategyConfig::Erm,
        federation: federation.clone(),
        seed: run_seed,
    };
    let ramp = ExperimentSpec {
        scenario: Scenario::NovelDisease {
            schedule: NovelDiseaseSchedule {
                novel_label: 2,
                rows: vec![vec![0.0; 4]; 2],
            },
            task_size: None,
        },
        ..localized.clone()
    };
    let a = run_experiment(&data, &localized).unwrap();
    let b = run_experiment(&data, &ramp).unwrap();

    let ca: Vec<u64> = a.rounds.iter().map(|r| r.checksum).collect();
    let cb: Vec<u64> = b.rounds.iter().map(|r| r.checksum).collect();
    assert_eq!(ca, cb, "training trajectories diverged");
    assert_eq!(a.final_params, b.final_params);
    for (ma, mb) in a.matrices.iter().zip(&b.matrices) {
        for t in 0..4 {
            for j in 0..=t {
                assert_eq!(ma.get(t, j).unwrap().ltr, mb.get(t, j).unwrap().ltr);
            }
        }
    }
}

/// Writing a dataset to CSV and reading it back must not change a single
/// bit of a downstream run.
#[test]
fn csv_round_trip_preserves_the_run() {
    let data = two_class_data(500, 67);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("examples.csv");
    write_csv(&data, &path).unwrap();
    let restored = ingest_csv(&path, &data.csv_schema()).unwrap();
    assert_eq!(restored.len(), data.len());

    let spec = small_experiment(StrategyConfig::ClassBalanced, 71);
    let from_memory = run_experiment(&data, &spec).unwrap();
    let from_disk = run_experiment(&restored, &spec).unwrap();
    assert_eq!(from_memory.final_params, from_disk.final_params);
    let ca: Vec<u64> = from_memory.rounds.iter().map(|r| r.checksum).collect();
    let cb: Vec<u64> = from_disk.rounds.iter().map(|r| r.checksum).collect();
    assert_eq!(ca, cb);
}
