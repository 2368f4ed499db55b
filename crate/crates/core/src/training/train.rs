//! Mini-batch training loops.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{DiscreteDataset, Split};
use crate::error::{PtnError, Result};
use crate::kernel::Rng;
use crate::model::MpsModel;
use crate::stable::nll;
use crate::training::grad::grad_nll;
use crate::training::naive::naive_grad_nll;
use crate::training::optim::{sgd_step, OptimizerState, TrainConfig};

/// One metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub nll_per_variable: f64,
    pub wall_ms: f64,
    pub failures: usize,
}

/// A numerical failure and where it happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// Zero-based index of the iteration whose loss or gradient was
    /// non-finite; equals the number of completed iterations.
    pub iteration: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Model with the lowest validation NLL (lowest train NLL when no
    /// validation set is given).
    pub best_model: MpsModel,
    pub best_epoch: usize,
    pub best_nll_per_variable: f64,
    pub iterations: usize,
    pub failure: Option<Failure>,
}

/// Which loss/gradient routine drives an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    /// Scaled contraction (stable).
    Lsf,
    /// Raw chain products (unstable baseline).
    Naive,
}

fn step_grad(
    method: GradMethod,
    model: &MpsModel,
    batch: &[&[usize]],
) -> Result<(f64, crate::training::GradientSet)> {
    match method {
        GradMethod::Lsf => grad_nll(model, batch),
        GradMethod::Naive => naive_grad_nll(model, batch),
    }
}

/// Shuffled mini-batch training for `config.epochs` epochs.
///
/// A numerical failure (non-finite loss, gradient or parameters, or a zero
/// amplitude) ends training early and is recorded in the returned log rather
/// than returned as an error; the caller decides how to surface it. Any other
/// error is propagated.
pub fn train(
    model: &mut MpsModel,
    data: &DiscreteDataset,
    valid: Option<&DiscreteDataset>,
    config: &TrainConfig,
    callback: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    train_with_method(model, data, valid, config, GradMethod::Lsf, callback)
}

/// [`train`] with the update gradient computed by `method`. Reported NLLs
/// always come from the scaled evaluation.
pub fn train_with_method(
    model: &mut MpsModel,
    data: &DiscreteDataset,
    valid: Option<&DiscreteDataset>,
    config: &TrainConfig,
    method: GradMethod,
    callback: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(PtnError::Data("training set is empty".into()));
    }
    data.check_model(model)?;
    if let Some(v) = valid {
        v.check_model(model)?;
        if v.is_empty() {
            return Err(PtnError::Data("validation set is empty".into()));
        }
    }
    let n_vars = model.len() as f64;
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = OptimizerState::new();
    let mut log = TrainingLog {
        records: Vec::new(),
        best_model: model.clone(),
        best_epoch: 0,
        best_nll_per_variable: f64::INFINITY,
        iterations: 0,
        failure: None,
    };

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let mut failure = None;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| data.row(i)).collect();
            let step = step_grad(method, model, &batch)
                .and_then(|(_, g)| sgd_step(model, &g, config, &mut state));
            match step {
                Ok(()) => log.iterations += 1,
                Err(e) if e.is_numerical() => {
                    failure = Some(Failure {
                        iteration: log.iterations,
                        message: e.to_string(),
                    });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let failed = failure.is_some() as usize;
        let train_nll = if failed == 0 {
            match nll(model, data.rows()) {
                Ok(r) => r.mean / n_vars,
                Err(e) if e.is_numerical() => {
                    failure = Some(Failure {
                        iteration: log.iterations,
                        message: e.to_string(),
                    });
                    f64::NAN
                }
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };
        let record = EpochRecord {
            epoch,
            split: Split::Train,
            nll_per_variable: train_nll,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            failures: failure.is_some() as usize,
        };
        callback(&record);
        log.records.push(record);
        if let Some(f) = failure {
            log.failure = Some(f);
            break;
        }

        let mut score = train_nll;
        if let Some(v) = valid {
            let vstart = Instant::now();
            let (value, failures, error) = match nll(model, v.rows()) {
                Ok(r) => (r.mean / n_vars, 0, None),
                Err(e) if e.is_numerical() => (f64::NAN, 1, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            let record = EpochRecord {
                epoch,
                split: Split::Valid,
                nll_per_variable: value,
                wall_ms: vstart.elapsed().as_secs_f64() * 1e3,
                failures,
            };
            callback(&record);
            log.records.push(record);
            if let Some(message) = error {
                log.failure = Some(Failure {
                    iteration: log.iterations,
                    message,
                });
                break;
            }
            score = value;
        }
        if score < log.best_nll_per_variable {
            log.best_nll_per_variable = score;
            log.best_epoch = epoch;
            log.best_model = model.clone();
        }
    }
    Ok(log)
}

/// Result of a fixed-budget run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    /// Completed iterations (equals the budget when nothing failed).
    pub iterations_reached: usize,
    pub failure: Option<Failure>,
    pub final_loss: Option<f64>,
}

/// Runs exactly `budget` update iterations (cycling through reshuffled
/// mini-batches) or stops at the first numerical failure.
pub fn train_iterations<S: AsRef<[usize]> + Sync>(
    model: &mut MpsModel,
    data: &[S],
    config: &TrainConfig,
    method: GradMethod,
    budget: usize,
) -> Result<IterationOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(PtnError::Data("training set is empty".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = OptimizerState::new();
    let mut cursor = order.len();
    let mut final_loss = None;
    for it in 0..budget {
        if cursor + config.batch_size > order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch: Vec<&[usize]> = order[cursor..end]
            .iter()
            .map(|&i| data[i].as_ref())
            .collect();
        cursor = end;
        let step = step_grad(method, model, &batch).and_then(|(loss, g)| {
            sgd_step(model, &g, config, &mut state)?;
            Ok(loss)
        });
        match step {
            Ok(loss) => final_loss = Some(loss),
            Err(e) if e.is_numerical() => {
                return Ok(IterationOutcome {
                    iterations_reached: it,
                    failure: Some(Failure {
                        iteration: it,
                        message: e.to_string(),
                    }),
                    final_loss,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(IterationOutcome {
        iterations_reached: budget,
        failure: None,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PositivityMode;

    fn toy() -> (MpsModel, DiscreteDataset) {
        let mut rng = Rng::new(4);
        let m = MpsModel::random(&[2, 2, 2], 2, PositivityMode::SigmaExp, 0.5, &mut rng).unwrap();
        let rows = (0..40).map(|k| vec![k % 2, k % 2, (k / 2) % 2]).collect();
        (
            m,
            DiscreteDataset::new(rows, vec![2, 2, 2], Split::Train).unwrap(),
        )
    }

    #[test]
    fn emits_train_and_valid_rows_per_epoch() {
        let (mut m, d) = toy();
        let v = d.clone().with_split(Split::Valid);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let log = train(&mut m, &d, Some(&v), &cfg, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 8);
        assert_eq!(log.records.len(), 8);
        assert_eq!(log.iterations, 4 * 5);
        assert!(log.failure.is_none());
        let valid: Vec<f64> = log
            .records
            .iter()
            .filter(|r| r.split == Split::Valid)
            .map(|r| r.nll_per_variable)
            .collect();
        assert!(valid.last().unwrap() < valid.first().unwrap());
        assert_eq!(
            log.best_nll_per_variable,
            valid.iter().cloned().fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn dimension_mismatch_is_a_data_error() {
        let (mut m, _) = toy();
        let d = DiscreteDataset::new(vec![vec![0, 1]], vec![2, 2], Split::Train).unwrap();
        let err = train(&mut m, &d, None, &TrainConfig::default(), &mut |_| {}).unwrap_err();
        assert!(err.is_data());
    }

    #[test]
    fn fixed_budget_runs_to_completion() {
        let (mut m, d) = toy();
        let cfg = TrainConfig {
            batch_size: 7,
            ..TrainConfig::default()
        };
        let out = train_iterations(&mut m, d.rows(), &cfg, GradMethod::Lsf, 25).unwrap();
        assert_eq!(out.iterations_reached, 25);
        assert!(out.failure.is_none());
    }

    #[test]
    fn naive_failure_is_recorded_at_first_iteration() {
        let mut rng = Rng::new(9);
        let mut m =
            MpsModel::random(&[2; 800], 2, PositivityMode::SigmaExp, 1.0, &mut rng).unwrap();
        let data: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..800).map(|_| rng.below(2)).collect())
            .collect();
        let out = train_iterations(
            &mut m,
            &data,
            &TrainConfig::default(),
            GradMethod::Naive,
            10,
        )
        .unwrap();
        assert_eq!(out.iterations_reached, 0);
        assert_eq!(out.failure.unwrap().iteration, 0);
    }
}
