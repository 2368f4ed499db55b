//! Probabilistic matrix product states.
//!
//! Exact likelihoods, gradients and samples for tensor-train models of
//! discrete joint distributions, computed with running scale factors so that
//! nothing overflows regardless of chain length. Also contains a two-site
//! DMRG trainer for Born machines, brute-force enumeration oracles and
//! instability/performance diagnostics.

pub mod data;
pub mod diagnostics;
pub mod dmrg;
pub mod error;
pub mod kernel;
pub mod mem;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod stable;
pub mod training;

pub use data::{
    load_checkpoint, load_csv01, load_mnist_binarized, read_checkpoint, save_checkpoint,
    synth_teacher, write_metrics, CheckpointHeader, CheckpointMeta, Delimiter, DiscreteDataset,
    MetricsWriter, Split,
};
pub use diagnostics::{
    bench_update, mc_growth, overflow_onset, BenchMethod, BenchSpec, BenchStats, GrowthCurve,
    GrowthStatistic, InstabilityReport,
};
pub use dmrg::{prepare, sweep, two_site_update, DmrgConfig, DmrgLog, SweepState, UpdateStats};
pub use error::{PtnError, Result};
pub use kernel::{Matrix, Rng};
pub use mem::MemTracker;
pub use model::{Core, MpsModel, PositivityMode};
pub use oracle::{enumerate, tv_distance, EnumeratedJoint};
pub use sampling::{conditional_dist, sample, sample_query, QuerySpec, Sampler};
pub use stable::{log_mass, log_prob, log_z, nll, EvalResult, NllReport, ScaledVector};
pub use training::{
    grad_check, grad_nll, train, train_iterations, train_with_method, EpochRecord, GradMethod,
    GradientSet, OptimizerKind, TrainConfig, TrainingLog,
};
