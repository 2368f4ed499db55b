#![allow(dead_code)]

use ptn_core::{MpsModel, PositivityMode, Rng};

/// A random model drawn from `seed` with shape parameters chosen by the
/// caller; `init_std` alternates between two scales so both flat and peaked
/// distributions are exercised.
pub fn random_model(mode: PositivityMode, n: usize, d: usize, r: usize, seed: u64) -> MpsModel {
    let mut rng = Rng::new(seed);
    let std = if seed % 2 == 0 { 0.6 } else { 1.0 };
    MpsModel::random(&vec![d; n], r, mode, std, &mut rng).unwrap()
}

/// Random rows over `dims`.
pub fn random_rows(dims: &[usize], count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| dims.iter().map(|&d| rng.below(d)).collect())
        .collect()
}

/// `|a − b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

pub fn mode_from_index(i: usize) -> PositivityMode {
    PositivityMode::ALL[i % PositivityMode::ALL.len()]
}
