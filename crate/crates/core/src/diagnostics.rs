//! Instability measurements and performance comparisons.
//!
//! * [`mc_growth`]: Monte-Carlo growth of `log Z` / `log Ψ²` with chain
//!   length for random models, computed in log space so the instrument never
//!   overflows.
//! * [`overflow_onset`]: iterations survived by naive and scaled training.
//! * [`bench_update`]: latency and peak transient bytes of one full-parameter
//!   update for the scaled gradient and for a DMRG sweep.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmrg::{prepare, timed_sweep};
use crate::error::{PtnError, Result};
use crate::kernel::Rng;
use crate::mem::MemTracker;
use crate::model::{MpsModel, PositivityMode};
use crate::stable::{log_mass, log_z};
use crate::training::{
    grad_nll_tracked, sgd_step, train_iterations, GradMethod, OptimizerState, TrainConfig,
};

/// Iteration budget of the instability metric.
pub const DEFAULT_BUDGET: usize = 10_000;

/// `reached − budget + 0.1`: `0.1` when the budget was exhausted, negative
/// when training died early.
pub fn instability_value(reached: usize, budget: usize) -> f64 {
    reached as f64 - budget as f64 + 0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub method: GradMethod,
    pub n_cores: usize,
    pub rank: usize,
    pub dim: usize,
    pub budget: usize,
    pub max_iterations_reached: usize,
    pub instability_value: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthStatistic {
    /// Mean over models of `log Z`.
    MeanLogZ,
    /// Mean over models of `log Ψ(y)²` at a random assignment.
    MeanLogPsiSq,
    /// `log` of the mean of `Ψ(y)²` (the log of the second moment, i.e. of
    /// the variance since `E[Ψ] = 0` for Gaussian Born cores).
    LogMeanPsiSq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub statistic: GrowthStatistic,
    pub points: Vec<(usize, f64)>,
}

impl GrowthCurve {
    /// Least-squares slope of the statistic against `N`.
    pub fn slope(&self) -> f64 {
        let k = self.points.len() as f64;
        let mx = self.points.iter().map(|p| p.0 as f64).sum::<f64>() / k;
        let my = self.points.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = self
            .points
            .iter()
            .map(|p| (p.0 as f64 - mx) * (p.1 - my))
            .sum();
        let sxx: f64 = self.points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// Minimum number of Monte-Carlo trials per point.
pub const MIN_TRIALS: usize = 100;

/// Growth of `statistic` with `N` over `trials` random models with
/// unit-variance Gaussian cores. `MeanLogZ` is the natural statistic for
/// σ-modes and `MeanLogPsiSq` for Born machines.
pub fn mc_growth(
    mode: PositivityMode,
    statistic: GrowthStatistic,
    ns: &[usize],
    rank: usize,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<GrowthCurve> {
    if trials < MIN_TRIALS {
        return Err(PtnError::Argument(format!(
            "at least {MIN_TRIALS} trials required, got {trials}"
        )));
    }
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(PtnError::Argument(
            "N values must be positive and strictly increasing".into(),
        ));
    }
    let base = Rng::new(seed);
    let mut points = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let values: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = base.fork(((i as u64) << 32) | t as u64);
                let m = MpsModel::random(&vec![dim; n], rank, mode, 1.0, &mut rng)?;
                match statistic {
                    GrowthStatistic::MeanLogZ => log_z(&m),
                    GrowthStatistic::MeanLogPsiSq | GrowthStatistic::LogMeanPsiSq => {
                        let y: Vec<usize> = (0..n).map(|_| rng.below(dim)).collect();
                        let lm = log_mass(&m, &y)?;
                        Ok(if mode.is_born() { lm } else { 2.0 * lm })
                    }
                }
            })
            .collect::<Result<_>>()?;
        let v = match statistic {
            GrowthStatistic::LogMeanPsiSq => {
                crate::kernel::log_sum_exp(&values) - (trials as f64).ln()
            }
            _ => values.iter().sum::<f64>() / trials as f64,
        };
        if !v.is_finite() {
            return Err(PtnError::NonFinite(format!("growth statistic at N={n}")));
        }
        points.push((n, v));
    }
    Ok(GrowthCurve { statistic, points })
}

/// Per-step growth of `log E[Z]` for σ=abs with unit Gaussian cores:
/// `log R + log D + ½ log(2/π)`.
pub fn abs_log_z_slope(rank: usize, dim: usize) -> f64 {
    (rank as f64).ln() + (dim as f64).ln() + 0.5 * (2.0 / std::f64::consts::PI).ln()
}

/// Uniform random binary rows used as training data in the instability runs.
pub fn random_binary_rows(n: usize, dim: usize, rows: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Rng::new(seed);
    (0..rows)
        .map(|_| (0..n).map(|_| rng.below(dim)).collect())
        .collect()
}

/// Benchmark sweeps keep every singular value up to rank R, so the
/// DMRG update does the same amount of work as the scaled-gradient one.
pub const BENCH_DMRG_CUTOFF: f64 = 0.0;

/// Rows of synthetic data per instability run.
pub const ONSET_ROWS: usize = 256;

/// For each `N`, trains a fresh unit-variance model with `method` for at most
/// `budget` iterations and records how far it got.
#[allow(clippy::too_many_arguments)]
pub fn overflow_onset(
    method: GradMethod,
    mode: PositivityMode,
    ns: &[usize],
    rank: usize,
    dim: usize,
    budget: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<InstabilityReport>> {
    ns.iter()
        .map(|&n| {
            let mut rng = Rng::new(seed ^ (n as u64).wrapping_mul(0x9E37_79B9));
            let init = config.init_std.unwrap_or(1.0);
            let mut model = MpsModel::random(&vec![dim; n], rank, mode, init, &mut rng)?;
            let data = random_binary_rows(n, dim, ONSET_ROWS, seed.wrapping_add(n as u64));
            let out = train_iterations(&mut model, &data, config, method, budget)?;
            Ok(InstabilityReport {
                method,
                n_cores: n,
                rank,
                dim,
                budget,
                max_iterations_reached: out.iterations_reached,
                instability_value: instability_value(out.iterations_reached, budget),
                failure: out.failure.map(|f| f.message),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Lsf,
    Dmrg,
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMethod::Lsf => "lsf",
            BenchMethod::Dmrg => "dmrg",
        })
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = PtnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsf" => Ok(BenchMethod::Lsf),
            "dmrg" => Ok(BenchMethod::Dmrg),
            other => Err(PtnError::Argument(format!(
                "unknown method '{other}' (expected lsf or dmrg)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub method: BenchMethod,
    pub n: usize,
    pub rank: usize,
    pub dim: usize,
    pub batch: usize,
    pub repetitions: usize,
    /// Positivity mode of the scaled-gradient run (DMRG is always Born).
    pub lsf_mode: PositivityMode,
    pub learning_rate: f64,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(
        method: BenchMethod,
        n: usize,
        rank: usize,
        dim: usize,
        batch: usize,
        repetitions: usize,
    ) -> Self {
        Self {
            method,
            n,
            rank,
            dim,
            batch,
            repetitions,
            lsf_mode: PositivityMode::Born,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// One CSV row of diagnostics output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R")]
    pub rank: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub latency_ms_p50: f64,
    pub latency_ms_p90: f64,
    pub peak_bytes: usize,
    pub iterations_reached: usize,
}

impl From<&InstabilityReport> for BenchStats {
    fn from(r: &InstabilityReport) -> Self {
        Self {
            method: match r.method {
                GradMethod::Lsf => "lsf".into(),
                GradMethod::Naive => "naive".into(),
            },
            n: r.n_cores,
            rank: r.rank,
            dim: r.dim,
            latency_ms_p50: f64::NAN,
            latency_ms_p90: f64::NAN,
            peak_bytes: 0,
            iterations_reached: r.max_iterations_reached,
        }
    }
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Times `repetitions` full-parameter updates on one thread. For `Lsf` one
/// update is a batch gradient plus parameter step over all cores; for `Dmrg`
/// it is one left-to-right half-sweep including environment setup.
pub fn bench_update(spec: &BenchSpec) -> Result<BenchStats> {
    if spec.repetitions == 0 {
        return Err(PtnError::Argument("repetitions must be at least 1".into()));
    }
    if spec.n < 2 || spec.batch == 0 {
        return Err(PtnError::Argument(
            "benchmarks need N ≥ 2 and a non-empty batch".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| PtnError::Argument(format!("thread pool: {e}")))?;
    pool.install(|| bench_inner(spec))
}

fn bench_inner(spec: &BenchSpec) -> Result<BenchStats> {
    let mut rng = Rng::new(spec.seed);
    let batch = random_binary_rows(spec.n, spec.dim, spec.batch, spec.seed ^ 0xBEEF);
    let std = MpsModel::default_init_std(spec.rank);
    let mem = MemTracker::new();
    let mut latencies = Vec::with_capacity(spec.repetitions);
    match spec.method {
        BenchMethod::Lsf => {
            let mut model = MpsModel::random(
                &vec![spec.dim; spec.n],
                spec.rank,
                spec.lsf_mode,
                std,
                &mut rng,
            )?;
            let cfg = TrainConfig {
                learning_rate: spec.learning_rate,
                ..TrainConfig::default()
            };
            let mut state = OptimizerState::new();
            for _ in 0..spec.repetitions {
                let t = Instant::now();
                let (_, g) = grad_nll_tracked(&model, &batch, &mem)?;
                mem.alloc(g.bytes());
                sgd_step(&mut model, &g, &cfg, &mut state)?;
                mem.free(g.bytes());
                latencies.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        BenchMethod::Dmrg => {
            let model = MpsModel::random(
                &vec![spec.dim; spec.n],
                spec.rank,
                PositivityMode::Born,
                std,
                &mut rng,
            )?;
            let mut model = prepare(&model)?;
            for _ in 0..spec.repetitions {
                let t = Instant::now();
                timed_sweep(
                    &mut model,
                    batch.clone(),
                    spec.learning_rate,
                    spec.rank,
                    BENCH_DMRG_CUTOFF,
                    &mem,
                )?;
                latencies.push(t.elapsed().as_secs_f64() * 1e3);
                // Return to right-canonical form for the next left-to-right pass.
                model = prepare(&model)?;
            }
        }
    }
    Ok(BenchStats {
        method: spec.method.to_string(),
        n: spec.n,
        rank: spec.rank,
        dim: spec.dim,
        latency_ms_p50: percentile(&latencies, 50.0),
        latency_ms_p90: percentile(&latencies, 90.0),
        peak_bytes: mem.peak(),
        iterations_reached: spec.repetitions,
    })
}

/// Writes rows with a header line.
pub fn write_csv(rows: &[BenchStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| PtnError::Data(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        w.write_record([
            "method",
            "N",
            "R",
            "D",
            "latency_ms_p50",
            "latency_ms_p90",
            "peak_bytes",
            "iterations_reached",
        ])
        .map_err(|e| PtnError::Data(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| PtnError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| PtnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instability_metric_definition() {
        assert!((instability_value(10_000, 10_000) - 0.1).abs() < 1e-12);
        assert!((instability_value(2, 10_000) + 9997.9).abs() < 1e-9);
    }

    #[test]
    fn scalar_abs_chain_decreases() {
        let c = mc_growth(
            PositivityMode::SigmaAbs,
            GrowthStatistic::MeanLogZ,
            &[1, 5, 10, 20],
            1,
            1,
            400,
            3,
        )
        .unwrap();
        // E[log|g|] = −(γ + log 2)/2 ≈ −0.635
        let want = -(0.577_215_664_9 + 2f64.ln()) / 2.0;
        assert!((c.slope() - want).abs() < 0.1, "{}", c.slope());
        assert!(c.points.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn argument_checks() {
        assert!(mc_growth(
            PositivityMode::SigmaAbs,
            GrowthStatistic::MeanLogZ,
            &[1, 2],
            1,
            1,
            10,
            0
        )
        .is_err());
        assert!(mc_growth(
            PositivityMode::SigmaAbs,
            GrowthStatistic::MeanLogZ,
            &[2, 2],
            1,
            1,
            100,
            0
        )
        .is_err());
        let spec = BenchSpec::new(BenchMethod::Lsf, 4, 2, 2, 4, 0);
        assert!(matches!(bench_update(&spec), Err(PtnError::Argument(_))));
    }

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 90.0), 5.0);
    }

    #[test]
    fn onset_is_deterministic() {
        let cfg = TrainConfig::default();
        let a = overflow_onset(
            GradMethod::Naive,
            PositivityMode::SigmaExp,
            &[8, 600],
            2,
            2,
            5,
            &cfg,
            1,
        )
        .unwrap();
        let b = overflow_onset(
            GradMethod::Naive,
            PositivityMode::SigmaExp,
            &[8, 600],
            2,
            2,
            5,
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].max_iterations_reached, 5);
        assert_eq!(a[1].max_iterations_reached, 0);
    }

    #[test]
    fn bench_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            bench_update(&BenchSpec::new(BenchMethod::Lsf, 6, 2, 2, 4, 3)).unwrap(),
            bench_update(&BenchSpec::new(BenchMethod::Dmrg, 6, 2, 2, 4, 3)).unwrap(),
        ];
        assert!(rows
            .iter()
            .all(|r| r.peak_bytes > 0 && r.latency_ms_p90 >= r.latency_ms_p50));
        let p = dir.path().join("bench.csv");
        write_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "method,N,R,D,latency_ms_p50,latency_ms_p90,peak_bytes,iterations_reached\n"
        ));
        assert_eq!(text.lines().count(), 3);
    }
}
