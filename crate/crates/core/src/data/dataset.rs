//! In-memory categorical datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::model::MpsModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = PtnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(PtnError::Argument(format!("unknown split '{other}'"))),
        }
    }
}

/// Rows of categorical observations with per-column cardinalities.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDataset {
    rows: Vec<Vec<usize>>,
    dims: Vec<usize>,
    split: Split,
}

impl DiscreteDataset {
    /// Validates every entry against `dims`.
    pub fn new(rows: Vec<Vec<usize>>, dims: Vec<usize>, split: Split) -> Result<Self> {
        if dims.contains(&0) {
            return Err(PtnError::Data("cardinalities must be at least 1".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dims.len() {
                return Err(PtnError::Data(format!(
                    "row {r} has {} values, expected {}",
                    row.len(),
                    dims.len()
                )));
            }
            if let Some((c, v)) = row.iter().enumerate().find(|(c, v)| **v >= dims[*c]) {
                return Err(PtnError::Data(format!(
                    "row {r} column {c}: value {v} outside cardinality {}",
                    dims[c]
                )));
            }
        }
        Ok(Self { rows, dims, split })
    }

    pub fn empty(dims: Vec<usize>, split: Split) -> Self {
        Self {
            rows: Vec::new(),
            dims,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Widens cardinalities (never narrows them).
    pub fn with_dims(mut self, dims: &[usize]) -> Result<Self> {
        if dims.len() != self.dims.len() {
            return Err(PtnError::Data(format!(
                "{} cardinalities for {} columns",
                dims.len(),
                self.dims.len()
            )));
        }
        for (have, want) in self.dims.iter_mut().zip(dims) {
            if want < have {
                return Err(PtnError::Data(format!(
                    "cardinality {want} is smaller than observed {have}"
                )));
            }
            *have = *want;
        }
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dims: self.dims.clone(),
            split: self.split,
        }
    }

    /// Errors unless the dataset's columns fit the model's free legs.
    pub fn check_model(&self, model: &MpsModel) -> Result<()> {
        let md = model.dims();
        if md.len() != self.dims.len() {
            return Err(PtnError::Data(format!(
                "dataset has {} columns but the model has {} cores",
                self.dims.len(),
                md.len()
            )));
        }
        if let Some(n) = (0..md.len()).find(|&n| self.dims[n] > md[n]) {
            return Err(PtnError::Data(format!(
                "column {n} has cardinality {} but the model leg has dimension {}",
                self.dims[n], md[n]
            )));
        }
        Ok(())
    }

    /// Per-column marginal frequencies with additive smoothing `alpha`.
    pub fn marginals(&self, alpha: f64) -> Vec<Vec<f64>> {
        let mut counts: Vec<Vec<f64>> = self.dims.iter().map(|&d| vec![alpha; d]).collect();
        for row in &self.rows {
            for (c, &v) in counts.iter_mut().zip(row) {
                c[v] += 1.0;
            }
        }
        for c in &mut counts {
            let total: f64 = c.iter().sum();
            c.iter_mut().for_each(|x| *x /= total);
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(DiscreteDataset::new(vec![vec![0, 2]], vec![2, 2], Split::Train).is_err());
        assert!(DiscreteDataset::new(vec![vec![0]], vec![2, 2], Split::Train).is_err());
    }

    #[test]
    fn dims_widen_but_never_shrink() {
        let d = DiscreteDataset::new(vec![vec![0, 1]], vec![2, 2], Split::Train).unwrap();
        let wide = d.clone().with_dims(&[3, 2]).unwrap();
        assert_eq!(wide.dims(), &[3, 2]);
        assert!(d.with_dims(&[1, 2]).is_err());
    }

    #[test]
    fn marginals_sum_to_one() {
        let d =
            DiscreteDataset::new(vec![vec![0, 1], vec![1, 1]], vec![2, 3], Split::Train).unwrap();
        let m = d.marginals(0.0);
        assert_eq!(m[0], vec![0.5, 0.5]);
        assert_eq!(m[1], vec![0.0, 1.0, 0.0]);
    }
}
