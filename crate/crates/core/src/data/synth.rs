//! Synthetic teacher models and data drawn from them.

use crate::data::dataset::{DiscreteDataset, Split};
use crate::error::Result;
use crate::kernel::Rng;
use crate::model::{MpsModel, PositivityMode};
use crate::sampling::sample;

/// Initialization std of teacher cores.
pub const TEACHER_INIT_STD: f64 = 1.0;

/// A random teacher (`N(0, 1)` cores) and `samples` exact draws from it.
pub fn synth_teacher(
    seed: u64,
    n: usize,
    d: usize,
    r: usize,
    mode: PositivityMode,
    samples: usize,
) -> Result<(MpsModel, DiscreteDataset)> {
    let mut rng = Rng::new(seed);
    let teacher = MpsModel::random(&vec![d; n], r, mode, TEACHER_INIT_STD, &mut rng)?;
    let rows = sample(&teacher, &mut rng, samples)?;
    let data = DiscreteDataset::new(rows, vec![d; n], Split::Train)?;
    Ok((teacher, data))
}
