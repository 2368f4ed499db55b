//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ptn_core::diagnostics::{abs_log_z_slope, write_csv};
use ptn_core::dmrg::SIGMA_MODE_REJECTION;
use ptn_core::sampling::{format_samples, sample_backward};
use ptn_core::{
    bench_update, load_checkpoint, load_csv01, load_mnist_binarized, mc_growth, nll,
    overflow_onset, sample, sample_query, save_checkpoint, sweep, train_with_method, BenchMethod,
    BenchSpec, BenchStats, CheckpointMeta, Delimiter, DiscreteDataset, DmrgConfig, EpochRecord,
    GradMethod, GrowthStatistic, MpsModel, PtnError, QuerySpec, Rng, Split, TrainConfig,
};
use serde_json::{json, Value};

use crate::args::{
    BenchArgs, BenchMethodArg, Command, DataArgs, DataFormat, DiagArgs, DiagKind, EvalArgs,
    OnsetMethod, SampleArgs, SampleOrder, TrainArgs, TrainMethod,
};
use crate::run_dir::{metrics_writer, write_text};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.ptn";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const GROWTH_FILE: &str = "growth.csv";
pub const ONSET_FILE: &str = "onset.csv";

/// Rejects contradictory configurations before anything is written.
pub fn check(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => {
            if a.method == TrainMethod::Dmrg && !a.mode.is_born() {
                return Err(CliError::usage(format!(
                    "--method dmrg cannot train --mode {}: {SIGMA_MODE_REJECTION}",
                    a.mode
                )));
            }
            if a.rank == 0 || a.max_rank == Some(0) {
                return Err(CliError::usage("--rank and --max-rank must be at least 1"));
            }
            if a.input_leg == Some(0) || a.cores == Some(0) {
                return Err(CliError::usage(
                    "--input-leg and --cores must be at least 1",
                ));
            }
            train_config(a).validate()?;
            if a.method == TrainMethod::Dmrg {
                dmrg_config(a).validate()?;
            }
        }
        Command::Bench(a) => {
            if a.repetitions == 0 {
                return Err(CliError::usage("--repetitions must be at least 1"));
            }
        }
        Command::Diag(a) => {
            if a.kind == DiagKind::Growth && a.trials < ptn_core::diagnostics::MIN_TRIALS {
                return Err(CliError::usage(format!(
                    "--trials must be at least {}",
                    ptn_core::diagnostics::MIN_TRIALS
                )));
            }
        }
        Command::Eval(_) | Command::Sample(_) => {}
    }
    Ok(())
}

pub fn dispatch(command: &Command, dir: &Path) -> Result<Value, CliError> {
    let mut summary = match command {
        Command::Train(a) => run_train(a, dir)?,
        Command::Eval(a) => run_eval(a, dir)?,
        Command::Sample(a) => run_sample(a, dir)?,
        Command::Bench(a) => run_bench(a, dir)?,
        Command::Diag(a) => run_diag(a, dir)?,
    };
    summary["subcommand"] = json!(command.name());
    summary["run_dir"] = json!(dir.display().to_string());
    Ok(summary)
}

fn load(path: &Path, format: &DataArgs, split: Split) -> Result<DiscreteDataset, CliError> {
    let d = match format.format {
        DataFormat::Csv => load_csv01(path, Delimiter::Auto)?,
        DataFormat::Idx => load_mnist_binarized(path, None, format.threshold)?,
    };
    Ok(d.with_split(split))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        optimizer: a.optimizer,
        grad_clip: a.grad_clip,
        init_std: a.init_std,
    }
}

fn dmrg_config(a: &TrainArgs) -> DmrgConfig {
    DmrgConfig {
        learning_rate: a.lr,
        max_rank: a.max_rank.unwrap_or(a.rank),
        cutoff: a.cutoff,
        batch_size: a.batch,
        epochs: a.epochs,
        sweeps_per_epoch: None,
        seed: a.seed,
    }
}

/// Common per-variable cardinality for every split: `--input-leg` when
/// given, otherwise the largest observed symbol + 1 (at least 2, so a
/// binary column that happens to be constant in one split stays binary).
fn unify_dims(sets: &[&DiscreteDataset], input_leg: Option<usize>) -> Result<Vec<usize>, CliError> {
    let n = sets[0].num_vars();
    for s in sets {
        if s.num_vars() != n {
            return Err(PtnError::Data(format!(
                "{} split has {} columns, training data has {n}",
                s.split(),
                s.num_vars()
            ))
            .into());
        }
    }
    let observed = sets
        .iter()
        .flat_map(|s| s.dims().iter().copied())
        .max()
        .unwrap_or(1);
    let d = match input_leg {
        Some(d) if d < observed => {
            return Err(PtnError::Data(format!(
                "data uses {observed} symbols but --input-leg is {d}"
            ))
            .into())
        }
        Some(d) => d,
        None => observed.max(2),
    };
    Ok(vec![d; n])
}

fn run_train(a: &TrainArgs, dir: &Path) -> Result<Value, CliError> {
    let train = load(&a.data, &a.data_format, Split::Train)?;
    let valid = a
        .valid
        .as_deref()
        .map(|p| load(p, &a.data_format, Split::Valid))
        .transpose()?;
    let test = a
        .test
        .as_deref()
        .map(|p| load(p, &a.data_format, Split::Test))
        .transpose()?;
    if let Some(c) = a.cores {
        if c != train.num_vars() {
            return Err(CliError::usage(format!(
                "--cores {c} contradicts the training data, which has {} columns",
                train.num_vars()
            )));
        }
    }
    let mut sets = vec![&train];
    sets.extend(valid.iter());
    sets.extend(test.iter());
    let dims = unify_dims(&sets, a.input_leg)?;
    let train = train.with_dims(&dims)?;
    let valid = valid.map(|v| v.with_dims(&dims)).transpose()?;
    let test = test.map(|t| t.with_dims(&dims)).transpose()?;

    let cfg = train_config(a);
    let mut model = MpsModel::random(
        &dims,
        a.rank,
        a.mode,
        cfg.init_std_for(a.rank),
        &mut Rng::new(a.seed),
    )?;
    let mut metrics = metrics_writer(dir)?;
    let mut write_error = None;
    let mut callback = |r: &EpochRecord| {
        if let Err(e) = metrics.write(r) {
            write_error.get_or_insert(e);
        }
    };

    let (saved, best_epoch, best_nll, iterations, failure) = match a.method {
        TrainMethod::Lsf | TrainMethod::Naive => {
            let method = if a.method == TrainMethod::Lsf {
                GradMethod::Lsf
            } else {
                GradMethod::Naive
            };
            let log = train_with_method(
                &mut model,
                &train,
                valid.as_ref(),
                &cfg,
                method,
                &mut callback,
            )?;
            (
                log.best_model,
                log.best_epoch,
                log.best_nll_per_variable,
                log.iterations,
                log.failure,
            )
        }
        TrainMethod::Dmrg => {
            let log = sweep(
                &mut model,
                &train,
                valid.as_ref(),
                &dmrg_config(a),
                &mut callback,
            )?;
            let last = log.records.last().map_or(f64::NAN, |r| r.nll_per_variable);
            let epoch = log.records.last().map_or(0, |r| r.epoch);
            (model, epoch, last, log.updates.len(), log.failure)
        }
    };
    if let Some(e) = write_error {
        return Err(e.into());
    }

    let ckpt = dir.join(CHECKPOINT_FILE);
    let meta = CheckpointMeta {
        seed: Some(a.seed),
        training: json!({
            "method": a.method,
            "best_epoch": best_epoch,
            "best_nll_per_variable": finite_or_null(best_nll),
            "iterations": iterations,
            "train_config": cfg,
        }),
    };
    save_checkpoint(&saved, &ckpt, &meta)?;

    let mut test_nll = None;
    if let Some(t) = &test {
        let start = Instant::now();
        let value = nll(&saved, t.rows())?.per_variable(saved.len());
        metrics.write(&EpochRecord {
            epoch: best_epoch,
            split: Split::Test,
            nll_per_variable: value,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            failures: 0,
        })?;
        test_nll = Some(value);
    }
    if let Some(f) = failure {
        return Err(CliError::numerical(format!(
            "training stopped at iteration {}: {} (best checkpoint saved to {})",
            f.iteration,
            f.message,
            ckpt.display()
        )));
    }
    Ok(json!({
        "checkpoint": ckpt.display().to_string(),
        "model": {"mode": saved.mode(), "dims": saved.dims(), "ranks": saved.ranks()},
        "best_epoch": best_epoch,
        "best_nll_per_variable": finite_or_null(best_nll),
        "test_nll_per_variable": test_nll,
        "iterations": iterations,
    }))
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn run_eval(a: &EvalArgs, dir: &Path) -> Result<Value, CliError> {
    let split: Split = a.split.parse()?;
    let model = load_checkpoint(&a.ckpt)?;
    let data = load(&a.data, &a.data_format, split)?;
    if data.num_vars() != model.len() {
        return Err(PtnError::Data(format!(
            "data has {} columns, the checkpoint has {} cores",
            data.num_vars(),
            model.len()
        ))
        .into());
    }
    let data = data.with_dims(&model.dims())?;
    let mut metrics = metrics_writer(dir)?;
    let start = Instant::now();
    let report = nll(&model, data.rows())?;
    let per_var = report.per_variable(model.len());
    metrics.write(&EpochRecord {
        epoch: 0,
        split,
        nll_per_variable: per_var,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        failures: 0,
    })?;
    Ok(json!({
        "rows": data.len(),
        "split": split,
        "nll_mean": report.mean,
        "nll_per_variable": per_var,
    }))
}

fn run_sample(a: &SampleArgs, dir: &Path) -> Result<Value, CliError> {
    let model = load_checkpoint(&a.ckpt)?;
    metrics_writer(dir)?;
    let mut rng = Rng::new(a.seed);
    let samples = if a.evidence.is_empty() {
        match a.order {
            SampleOrder::Forward => sample(&model, &mut rng, a.count)?,
            SampleOrder::Backward => sample_backward(&model, &mut rng, a.count)?,
        }
    } else {
        let conditioned: BTreeMap<usize, usize> = a.evidence.iter().copied().collect();
        let mut targets: Vec<usize> = (0..model.len())
            .filter(|n| !conditioned.contains_key(n))
            .collect();
        if a.order == SampleOrder::Backward {
            targets.reverse();
        }
        let spec = QuerySpec::new(conditioned.clone(), targets.clone());
        sample_query(&model, &mut rng, &spec, a.count)?
            .into_iter()
            .map(|drawn| {
                let mut full = vec![0; model.len()];
                for (&n, &v) in &conditioned {
                    full[n] = v;
                }
                for (&n, v) in targets.iter().zip(drawn) {
                    full[n] = v;
                }
                full
            })
            .collect()
    };
    let path = dir.join(SAMPLES_FILE);
    write_text(&path, &format_samples(&samples))?;
    Ok(json!({"samples": path.display().to_string(), "count": samples.len()}))
}

fn run_bench(a: &BenchArgs, dir: &Path) -> Result<Value, CliError> {
    let mut metrics = metrics_writer(dir)?;
    let mut rows: Vec<BenchStats> = Vec::new();
    for &method in &a.method {
        for &n in &a.cores {
            for &rank in &a.rank {
                for &dim in &a.input_leg {
                    let spec = BenchSpec {
                        method: match method {
                            BenchMethodArg::Lsf => BenchMethod::Lsf,
                            BenchMethodArg::Dmrg => BenchMethod::Dmrg,
                        },
                        n,
                        rank,
                        dim,
                        batch: a.batch,
                        repetitions: a.repetitions,
                        lsf_mode: a.mode,
                        learning_rate: a.lr,
                        seed: a.seed,
                    };
                    let row = bench_update(&spec)?;
                    metrics.write(&row)?;
                    rows.push(row);
                }
            }
        }
    }
    let path = dir.join(BENCH_FILE);
    write_csv(&rows, &path)?;
    Ok(json!({
        "csv": path.display().to_string(),
        "rows": rows,
        "dmrg_config": {"learning_rate": a.lr, "max_rank": "R", "cutoff": ptn_core::diagnostics::BENCH_DMRG_CUTOFF},
    }))
}

fn run_diag(a: &DiagArgs, dir: &Path) -> Result<Value, CliError> {
    let mut metrics = metrics_writer(dir)?;
    match a.kind {
        DiagKind::Growth => {
            let statistic = a
                .statistic
                .map(GrowthStatistic::from)
                .unwrap_or(if a.mode.is_born() {
                    GrowthStatistic::MeanLogPsiSq
                } else {
                    GrowthStatistic::MeanLogZ
                });
            let curve = mc_growth(
                a.mode,
                statistic,
                &a.cores,
                a.rank,
                a.input_leg,
                a.trials,
                a.seed,
            )?;
            let mut text = String::from("N,value\n");
            for (n, v) in &curve.points {
                text.push_str(&format!("{n},{v}\n"));
                metrics.write(&json!({"N": n, "statistic": statistic, "value": v}))?;
            }
            let path = dir.join(GROWTH_FILE);
            write_text(&path, &text)?;
            let reference = match (a.mode, statistic) {
                (ptn_core::PositivityMode::SigmaAbs, GrowthStatistic::MeanLogZ) => {
                    Some(abs_log_z_slope(a.rank, a.input_leg))
                }
                (ptn_core::PositivityMode::Born, _) => Some((a.rank as f64).ln()),
                _ => None,
            };
            Ok(json!({
                "csv": path.display().to_string(),
                "statistic": statistic,
                "slope": curve.slope(),
                "reference_slope": reference,
            }))
        }
        DiagKind::Onset => {
            let cfg = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch,
                seed: a.seed,
                init_std: Some(a.init_std),
                ..TrainConfig::default()
            };
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for &m in &a.method {
                let method = match m {
                    OnsetMethod::Lsf => GradMethod::Lsf,
                    OnsetMethod::Naive => GradMethod::Naive,
                };
                for r in overflow_onset(
                    method,
                    a.mode,
                    &a.cores,
                    a.rank,
                    a.input_leg,
                    a.budget,
                    &cfg,
                    a.seed,
                )? {
                    metrics.write(&r)?;
                    rows.push(BenchStats::from(&r));
                    reports.push(json!({
                        "method": r.method,
                        "N": r.n_cores,
                        "max_iterations_reached": r.max_iterations_reached,
                        "instability_value": r.instability_value,
                    }));
                }
            }
            let path = dir.join(ONSET_FILE);
            write_csv(&rows, &path)?;
            Ok(json!({"csv": path.display().to_string(), "reports": reports}))
        }
    }
}
