//! Brute-force enumeration of the full joint for small models.
//!
//! This is the ground truth the stable routines are checked against. It
//! touches every assignment through the naive contraction and is only usable
//! when `Π D_n` is small.

use crate::error::{PtnError, Result};
use crate::model::MpsModel;

/// Largest table `enumerate` will build.
pub const MAX_ENUMERATION: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct EnumeratedJoint {
    dims: Vec<usize>,
    /// Unnormalized masses in row-major assignment order (last variable
    /// fastest).
    masses: Vec<f64>,
    z: f64,
}

impl EnumeratedJoint {
    pub fn from_masses(dims: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        let size: usize = dims.iter().product();
        if size != masses.len() {
            return Err(PtnError::DimensionMismatch(format!(
                "{} masses for a table of size {size}",
                masses.len()
            )));
        }
        if masses.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(PtnError::Argument(
                "masses must be finite and non-negative".into(),
            ));
        }
        let z = kahan_sum(masses.iter().copied());
        Ok(Self { dims, masses, z })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, y: &[usize]) -> f64 {
        self.masses[self.flat_index(y)]
    }

    pub fn prob(&self, y: &[usize]) -> f64 {
        self.mass(y) / self.z
    }

    /// Normalized probabilities in table order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.masses.iter().map(|m| m / self.z).collect()
    }

    pub fn flat_index(&self, y: &[usize]) -> usize {
        y.iter().zip(&self.dims).fold(0, |acc, (v, d)| acc * d + v)
    }

    pub fn assignment(&self, mut index: usize) -> Vec<usize> {
        let mut y = vec![0; self.dims.len()];
        for (slot, d) in y.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        y
    }

    /// Iterates `(assignment, mass)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .map(|(k, &m)| (self.assignment(k), m))
    }

    /// Normalized marginal probability of a partial assignment.
    pub fn marginal(&self, partial: &[Option<usize>]) -> f64 {
        let s = kahan_sum(
            self.iter()
                .filter(|(y, _)| matches(y, partial))
                .map(|(_, m)| m),
        );
        s / self.z
    }
}

fn matches(y: &[usize], partial: &[Option<usize>]) -> bool {
    y.iter()
        .zip(partial)
        .all(|(v, p)| p.is_none_or(|p| p == *v))
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Exact table of unnormalized masses (`Ψ_σ(y)` or `Ψ(y)²`).
pub fn enumerate(model: &MpsModel) -> Result<EnumeratedJoint> {
    let dims = model.dims();
    let size = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .filter(|s| *s <= MAX_ENUMERATION)
        .ok_or_else(|| {
            PtnError::Argument(format!(
                "joint over dims {dims:?} exceeds the enumeration guard of {MAX_ENUMERATION}"
            ))
        })?;
    let born = model.mode().is_born();
    let mut masses = Vec::with_capacity(size);
    let mut y = vec![0usize; dims.len()];
    for _ in 0..size {
        let psi = model.psi_raw(&y)?;
        let m = if born { psi * psi } else { psi };
        if !m.is_finite() {
            return Err(PtnError::NonFinite(format!("mass at {y:?}")));
        }
        masses.push(m);
        // Row-major increment: last variable fastest.
        for k in (0..y.len()).rev() {
            y[k] += 1;
            if y[k] < dims[k] {
                break;
            }
            y[k] = 0;
        }
    }
    EnumeratedJoint::from_masses(dims, masses)
}

/// Exact `p(y_n | y_1..y_{n-1})` by summation; `prefix` holds positions
/// `0..n`.
pub fn oracle_conditional(joint: &EnumeratedJoint, prefix: &[usize], n: usize) -> Result<Vec<f64>> {
    if prefix.len() != n || n >= joint.dims.len() {
        return Err(PtnError::Argument(format!(
            "prefix of length {} does not precede position {n}",
            prefix.len()
        )));
    }
    let mut partial: Vec<Option<usize>> = vec![None; joint.dims.len()];
    for (slot, v) in partial.iter_mut().zip(prefix) {
        *slot = Some(*v);
    }
    oracle_conditional_given(joint, &partial, n)
}

/// Exact `p(y_n | evidence)` for arbitrary evidence not involving `n`.
pub fn oracle_conditional_given(
    joint: &EnumeratedJoint,
    evidence: &[Option<usize>],
    n: usize,
) -> Result<Vec<f64>> {
    let d = joint.dims[n];
    let mut num = vec![0.0; d];
    let mut comp = vec![0.0; d];
    for (y, m) in joint.iter() {
        if matches(&y, evidence) {
            // Kahan per bucket.
            let k = y[n];
            let t = num[k] + (m - comp[k]);
            comp[k] = (t - num[k]) - (m - comp[k]);
            num[k] = t;
        }
    }
    let total = kahan_sum(num.iter().copied());
    if total <= 0.0 {
        return Err(PtnError::ZeroAmplitude {
            position: n,
            sample: None,
        });
    }
    Ok(num.into_iter().map(|x| x / total).collect())
}

/// Total variation distance between two tables of the same size.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
