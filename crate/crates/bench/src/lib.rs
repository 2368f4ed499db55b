//! Shared fixtures for the benchmarks: a random model and a fixed batch of
//! binary rows for a given chain shape.

use ptn_core::diagnostics::random_binary_rows;
use ptn_core::{prepare, MpsModel, PositivityMode, Rng};

/// Chain shape of one benchmark case.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub n: usize,
    pub rank: usize,
    pub dim: usize,
    pub batch: usize,
}

impl Shape {
    pub const fn new(n: usize, rank: usize, dim: usize, batch: usize) -> Self {
        Self {
            n,
            rank,
            dim,
            batch,
        }
    }

    pub fn label(&self) -> String {
        format!("N{}_R{}_D{}", self.n, self.rank, self.dim)
    }
}

/// Random model with the default initialization for `shape`.
pub fn model(shape: Shape, mode: PositivityMode, seed: u64) -> MpsModel {
    let dims = vec![shape.dim; shape.n];
    MpsModel::random(
        &dims,
        shape.rank,
        mode,
        MpsModel::default_init_std(shape.rank),
        &mut Rng::new(seed),
    )
    .expect("valid shape")
}

/// Born machine in the right-canonical form a sweep starts from.
pub fn prepared_born(shape: Shape, seed: u64) -> MpsModel {
    prepare(&model(shape, PositivityMode::Born, seed)).expect("born model")
}

/// Fixed batch of uniformly random rows.
pub fn batch(shape: Shape, seed: u64) -> Vec<Vec<usize>> {
    random_binary_rows(shape.n, shape.dim, shape.batch, seed)
}
