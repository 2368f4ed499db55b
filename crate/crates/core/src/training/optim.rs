//! Training configuration and parameter updates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::model::{Core, MpsModel};
use crate::training::grad::GradientSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = PtnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(PtnError::Argument(format!(
                "unknown optimizer '{other}' (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global L2 norm above which gradients are rescaled.
    pub grad_clip: Option<f64>,
    /// Initialization std; `None` means `1/√R`.
    pub init_std: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            grad_clip: None,
            init_std: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PtnError::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(PtnError::Argument("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(PtnError::Argument("epochs must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(PtnError::Argument(format!(
                    "gradient clip must be positive, got {c}"
                )));
            }
        }
        if let Some(s) = self.init_std {
            if !(s > 0.0) || !s.is_finite() {
                return Err(PtnError::Argument(format!(
                    "init std must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn init_std_for(&self, rank: usize) -> f64 {
        self.init_std
            .unwrap_or_else(|| MpsModel::default_init_std(rank))
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-run optimizer memory (Adam moments; empty for plain SGD).
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    step: u64,
    first: Vec<Core>,
    second: Vec<Core>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Applies one update `θ ← θ − α·g` (or the Adam equivalent) in place.
pub fn sgd_step(
    model: &mut MpsModel,
    grads: &GradientSet,
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.cores().len() != model.len()
        || grads
            .cores()
            .iter()
            .zip(model.cores())
            .any(|(g, c)| g.shape() != c.shape())
    {
        return Err(PtnError::DimensionMismatch(
            "gradient shapes do not match the model".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(PtnError::NonFinite("gradient".into()));
    }
    let mut scale = config.learning_rate;
    if let Some(clip) = config.grad_clip {
        let norm = grads.l2_norm();
        if norm > clip {
            scale *= clip / norm;
        }
    }
    state.step += 1;
    match config.optimizer {
        OptimizerKind::Sgd => {
            for (core, g) in model.cores_mut().iter_mut().zip(grads.cores()) {
                for (x, d) in core.data_mut().iter_mut().zip(g.data()) {
                    *x -= scale * d;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.first.is_empty() {
                state.first = grads
                    .cores()
                    .iter()
                    .map(|g| Core::zeros(g.left(), g.dim(), g.right()))
                    .collect();
                state.second = state.first.clone();
            }
            let clip_factor = scale / config.learning_rate;
            let t = state.step as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for (((core, g), m), v) in model
                .cores_mut()
                .iter_mut()
                .zip(grads.cores())
                .zip(state.first.iter_mut())
                .zip(state.second.iter_mut())
            {
                for (((x, d), mk), vk) in core
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut())
                    .zip(v.data_mut().iter_mut())
                {
                    let d = d * clip_factor;
                    *mk = ADAM_BETA1 * *mk + (1.0 - ADAM_BETA1) * d;
                    *vk = ADAM_BETA2 * *vk + (1.0 - ADAM_BETA2) * d * d;
                    let mhat = *mk / bc1;
                    let vhat = *vk / bc2;
                    *x -= config.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
    if !model.is_finite() {
        return Err(PtnError::NonFinite("parameters after update".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;
    use crate::model::PositivityMode;
    use crate::training::grad::grad_nll;

    fn model() -> MpsModel {
        let mut rng = Rng::new(1);
        MpsModel::random(&[2, 3, 2], 2, PositivityMode::SigmaExp, 0.5, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut m = model();
            let before = m.clone();
            let cfg = TrainConfig {
                optimizer,
                ..TrainConfig::default()
            };
            let zero = GradientSet::zeros_like(&m);
            sgd_step(&mut m, &zero, &cfg, &mut OptimizerState::new()).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn unit_rate_with_parameters_as_gradient_zeroes_cores() {
        let mut m = model();
        let g = GradientSet::from_cores(m.cores().to_vec());
        let cfg = TrainConfig {
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut m, &g, &cfg, &mut OptimizerState::new()).unwrap();
        assert!(m.cores().iter().all(|c| c.data().iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut m = model();
        let mut g = GradientSet::zeros_like(&m);
        g.cores_mut()[1].data_mut()[0] = f64::NAN;
        let before = m.clone();
        let err = sgd_step(
            &mut m,
            &g,
            &TrainConfig::default(),
            &mut OptimizerState::new(),
        )
        .unwrap_err();
        assert!(err.is_numerical());
        assert_eq!(m, before);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut m = model();
        let before = m.clone();
        let mut g = GradientSet::zeros_like(&m);
        g.cores_mut()[0].data_mut()[0] = 1e6;
        let cfg = TrainConfig {
            learning_rate: 1.0,
            grad_clip: Some(0.5),
            ..TrainConfig::default()
        };
        sgd_step(&mut m, &g, &cfg, &mut OptimizerState::new()).unwrap();
        let moved = before.cores()[0].data()[0] - m.cores()[0].data()[0];
        assert!((moved - 0.5).abs() < 1e-12);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = |optimizer| {
            let mut m = model();
            let cfg = TrainConfig {
                optimizer,
                learning_rate: 0.05,
                ..TrainConfig::default()
            };
            let mut state = OptimizerState::new();
            let batch = vec![vec![0usize, 2, 1], vec![1, 0, 0], vec![1, 1, 1]];
            for _ in 0..10 {
                let (_, g) = grad_nll(&m, &batch).unwrap();
                sgd_step(&mut m, &g, &cfg, &mut state).unwrap();
            }
            m
        };
        for opt in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            assert_eq!(run(opt), run(opt));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                grad_clip: Some(-1.0),
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(
            "Adam".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
