//! Training-loop behaviour on enumerable and teacher-generated data.

mod common;

use ptn_core::data::write_metrics;
use ptn_core::oracle::tv_distance;
use ptn_core::training::train_iterations;
use ptn_core::{
    enumerate, synth_teacher, train, DiscreteDataset, GradMethod, MpsModel, PositivityMode, Rng,
    Split, TrainConfig,
};

#[test]
fn learned_joint_matches_empirical_joint() {
    // Known joint over two ternary variables.
    let p = [0.30, 0.05, 0.10, 0.02, 0.20, 0.08, 0.05, 0.05, 0.15];
    let mut rng = Rng::new(21);
    let rows: Vec<Vec<usize>> = (0..4000)
        .map(|_| {
            let u = rng.uniform();
            let mut acc = 0.0;
            let k = p
                .iter()
                .position(|&q| {
                    acc += q;
                    u < acc
                })
                .unwrap_or(8);
            vec![k / 3, k % 3]
        })
        .collect();
    let mut empirical = vec![0.0; 9];
    for r in &rows {
        empirical[r[0] * 3 + r[1]] += 1.0 / rows.len() as f64;
    }
    let data = DiscreteDataset::new(rows, vec![3, 3], Split::Train).unwrap();
    let mut m =
        MpsModel::random(&[3, 3], 3, PositivityMode::SigmaExp, 0.5, &mut Rng::new(1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 256,
        epochs: 200,
        optimizer: ptn_core::OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let log = train(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
    assert!(log.failure.is_none());
    let learned = enumerate(&m).unwrap().probabilities();
    let tv = tv_distance(&learned, &empirical);
    assert!(tv <= 0.02, "TV {tv}");
}

#[test]
fn loss_decreases_over_first_five_epochs_on_teacher_data() {
    let mut first = 0.0;
    let mut fifth = 0.0;
    for seed in 0..5u64 {
        let (_, data) = synth_teacher(100 + seed, 8, 2, 3, PositivityMode::SigmaExp, 800).unwrap();
        let mut rng = Rng::new(seed);
        let mut m = MpsModel::random(&[2; 8], 3, PositivityMode::SigmaExp, 0.3, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.05,
            seed,
            ..TrainConfig::default()
        };
        let log = train(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
        let train_rows: Vec<f64> = log.records.iter().map(|r| r.nll_per_variable).collect();
        assert_eq!(train_rows.len(), 5);
        first += train_rows[0] / 5.0;
        fifth += train_rows[4] / 5.0;
    }
    assert!(fifth < first, "seed-averaged NLL/var {first} -> {fifth}");
}

#[test]
fn born_mode_trains_on_teacher_data() {
    let (_, data) = synth_teacher(7, 6, 2, 2, PositivityMode::Born, 1000).unwrap();
    let mut m = MpsModel::random(&[2; 6], 2, PositivityMode::Born, 0.7, &mut Rng::new(3)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let log = train(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
    let v: Vec<f64> = log.records.iter().map(|r| r.nll_per_variable).collect();
    assert!(v[4] < v[0], "{v:?}");
}

#[test]
fn long_chain_runs_without_failures() {
    let n = 1000;
    let mut rng = Rng::new(5);
    let mut m = MpsModel::random(&vec![2; n], 2, PositivityMode::SigmaExp, 1.0, &mut rng).unwrap();
    let data = common::random_rows(&vec![2; n], 64, 6);
    let out =
        train_iterations(&mut m, &data, &TrainConfig::default(), GradMethod::Lsf, 100).unwrap();
    assert_eq!(out.iterations_reached, 100);
    assert!(out.failure.is_none());
    assert!(out.final_loss.unwrap().is_finite());
}

#[test]
fn fifty_epoch_run_writes_hundred_metric_lines() {
    let (_, data) = synth_teacher(1, 4, 2, 2, PositivityMode::SigmaExp, 64).unwrap();
    let valid = synth_teacher(2, 4, 2, 2, PositivityMode::SigmaExp, 16)
        .unwrap()
        .1
        .with_split(Split::Valid);
    let mut m =
        MpsModel::random(&[2; 4], 2, PositivityMode::SigmaExp, 0.5, &mut Rng::new(0)).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let log = train(&mut m, &data, Some(&valid), &cfg, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    write_metrics(&log.records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let splits: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["split"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(splits.iter().filter(|s| *s == "train").count(), 50);
    assert_eq!(splits.iter().filter(|s| *s == "valid").count(), 50);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let (_, data) = synth_teacher(3, 5, 2, 2, PositivityMode::SigmaSoftplus, 200).unwrap();
    let run = || {
        let mut m = MpsModel::random(
            &[2; 5],
            2,
            PositivityMode::SigmaSoftplus,
            0.5,
            &mut Rng::new(9),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        train(&mut m, &data, None, &cfg, &mut |_| {}).unwrap();
        m
    };
    let (a, b) = (run(), run());
    for (x, y) in a.cores().iter().zip(b.cores()) {
        assert!(x
            .data()
            .iter()
            .zip(y.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
