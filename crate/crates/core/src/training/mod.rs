//! Gradient-based training of the full model.

pub mod grad;
pub mod naive;
pub mod optim;
pub mod train;

pub use grad::{
    grad_check, grad_nll, grad_nll_tracked, GradCheckReport, GradientSet, ParamAddress,
    GRAD_CHECK_FLOOR,
};
pub use naive::naive_grad_nll;
pub use optim::{sgd_step, OptimizerKind, OptimizerState, TrainConfig};
pub use train::{
    train, train_iterations, train_with_method, EpochRecord, Failure, GradMethod, IterationOutcome,
    TrainingLog,
};
