//! Matrix product state parameterization of a discrete joint distribution.
//!
//! A model over `N` categorical variables is a chain of third-order cores
//! `G⁽ⁿ⁾` of shape `(R_n, D_n, R_{n+1})` with `R_1 = R_{N+1} = 1`. Two
//! families turn the chain into a probability:
//!
//! * Born machines: `p(y) ∝ Ψ(y)²` with `Ψ(y) = G⁽¹⁾[y₁]⋯G⁽ᴺ⁾[y_N]`.
//! * σ-positive chains: `p(y) ∝ σ(G⁽¹⁾)[y₁]⋯σ(G⁽ᴺ⁾)[y_N]` for a pointwise
//!   non-negative map `σ`.
//!
//! Parameters are always stored raw; `σ` is applied when a contraction needs
//! it, so optimizers work on unconstrained values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::kernel::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityMode {
    Born,
    SigmaExp,
    SigmaAbs,
    SigmaSq,
    SigmaSoftplus,
    /// Logistic sigmoid.
    SigmaSigmoid,
}

impl PositivityMode {
    pub const ALL: [PositivityMode; 6] = [
        PositivityMode::Born,
        PositivityMode::SigmaExp,
        PositivityMode::SigmaAbs,
        PositivityMode::SigmaSq,
        PositivityMode::SigmaSoftplus,
        PositivityMode::SigmaSigmoid,
    ];

    pub fn is_born(self) -> bool {
        self == PositivityMode::Born
    }

    /// Pointwise map applied to raw parameters. Identity for Born machines.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            PositivityMode::Born => x,
            PositivityMode::SigmaExp => x.exp(),
            PositivityMode::SigmaAbs => x.abs(),
            PositivityMode::SigmaSq => x * x,
            PositivityMode::SigmaSoftplus => softplus(x),
            PositivityMode::SigmaSigmoid => sigmoid(x),
        }
    }

    /// Derivative of [`apply`](Self::apply). `|x|` uses `sign(0) = 0`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            PositivityMode::Born => 1.0,
            PositivityMode::SigmaExp => x.exp(),
            PositivityMode::SigmaAbs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PositivityMode::SigmaSq => 2.0 * x,
            PositivityMode::SigmaSoftplus => sigmoid(x),
            PositivityMode::SigmaSigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PositivityMode::Born => "born",
            PositivityMode::SigmaExp => "sigma_exp",
            PositivityMode::SigmaAbs => "sigma_abs",
            PositivityMode::SigmaSq => "sigma_sq",
            PositivityMode::SigmaSoftplus => "sigma_softplus",
            PositivityMode::SigmaSigmoid => "sigma_sigmoid",
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for PositivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PositivityMode {
    type Err = PtnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "born" => Ok(PositivityMode::Born),
            "sigma_exp" | "exp" => Ok(PositivityMode::SigmaExp),
            "sigma_abs" | "abs" => Ok(PositivityMode::SigmaAbs),
            "sigma_sq" | "sq" => Ok(PositivityMode::SigmaSq),
            "sigma_softplus" | "softplus" => Ok(PositivityMode::SigmaSoftplus),
            "sigma_sigmoid" | "sigmoid" | "sig" => Ok(PositivityMode::SigmaSigmoid),
            other => Err(PtnError::Argument(format!(
                "unknown positivity mode `{other}`"
            ))),
        }
    }
}

/// One third-order core, stored row-major over `(left, symbol, right)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Core {
    left: usize,
    dim: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn zeros(left: usize, dim: usize, right: usize) -> Self {
        Self {
            left,
            dim,
            right,
            data: vec![0.0; left * dim * right],
        }
    }

    pub fn from_vec(left: usize, dim: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != left * dim * right {
            return Err(PtnError::DimensionMismatch(format!(
                "core of shape ({left}, {dim}, {right}) needs {} values, got {}",
                left * dim * right,
                data.len()
            )));
        }
        Ok(Self {
            left,
            dim,
            right,
            data,
        })
    }

    /// Stacks `D` slices of shape `(left, right)` back into a core.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let dim = slices.len();
        let (left, right) = slices
            .first()
            .map(|m| (m.rows(), m.cols()))
            .ok_or_else(|| PtnError::Argument("no slices".into()))?;
        let mut core = Core::zeros(left, dim, right);
        for (y, s) in slices.iter().enumerate() {
            if (s.rows(), s.cols()) != (left, right) {
                return Err(PtnError::DimensionMismatch("slice shapes differ".into()));
            }
            for i in 0..left {
                for j in 0..right {
                    core.set(i, y, j, s.get(i, j));
                }
            }
        }
        Ok(core)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.dim, self.right)
    }

    #[inline]
    pub fn left(&self) -> usize {
        self.left
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.right
    }

    #[inline]
    pub fn index(&self, i: usize, y: usize, j: usize) -> usize {
        (i * self.dim + y) * self.right + j
    }

    #[inline]
    pub fn get(&self, i: usize, y: usize, j: usize) -> f64 {
        self.data[self.index(i, y, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, y: usize, j: usize, v: f64) {
        let k = self.index(i, y, j);
        self.data[k] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `i` of slice `y`, i.e. the `right`-length run `G[i, y, :]`.
    #[inline]
    pub fn row(&self, i: usize, y: usize) -> &[f64] {
        let start = (i * self.dim + y) * self.right;
        &self.data[start..start + self.right]
    }

    pub fn slice(&self, y: usize) -> Matrix {
        let mut m = Matrix::zeros(self.left, self.right);
        for i in 0..self.left {
            for j in 0..self.right {
                m.set(i, j, self.get(i, y, j));
            }
        }
        m
    }

    /// Copy with `σ` applied to every entry.
    pub fn activated(&self, mode: PositivityMode) -> Core {
        let mut out = self.clone();
        if !mode.is_born() {
            out.data.iter_mut().for_each(|x| *x = mode.apply(*x));
        }
        out
    }

    /// Left unfolding `(left·dim) × right`.
    pub fn left_unfolding(&self) -> Matrix {
        Matrix::from_vec(self.left * self.dim, self.right, self.data.clone())
            .expect("core data matches its shape")
    }

    /// Right unfolding `left × (dim·right)`.
    pub fn right_unfolding(&self) -> Matrix {
        Matrix::from_vec(self.left, self.dim * self.right, self.data.clone())
            .expect("core data matches its shape")
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsModel {
    cores: Vec<Core>,
    mode: PositivityMode,
}

impl MpsModel {
    /// Builds a model from explicit cores, checking boundary and bond
    /// consistency.
    pub fn new(cores: Vec<Core>, mode: PositivityMode) -> Result<Self> {
        if cores.is_empty() {
            return Err(PtnError::Argument("a model needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(PtnError::DimensionMismatch(
                "boundary bond dimensions must be 1".into(),
            ));
        }
        for (n, w) in cores.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(PtnError::DimensionMismatch(format!(
                    "bond between cores {n} and {} disagrees: {} vs {}",
                    n + 1,
                    w[0].right,
                    w[1].left
                )));
            }
        }
        for (n, c) in cores.iter().enumerate() {
            if c.dim == 0 {
                return Err(PtnError::DimensionMismatch(format!(
                    "core {n} has zero input dimension"
                )));
            }
            if c.data.iter().any(|x| !x.is_finite()) {
                return Err(PtnError::NonFinite(format!(
                    "core {n} has non-finite parameters"
                )));
            }
        }
        Ok(Self { cores, mode })
    }

    /// Random model with interior bond dimension `rank` and entries drawn
    /// from `N(0, init_std²)`.
    pub fn random(
        dims: &[usize],
        rank: usize,
        mode: PositivityMode,
        init_std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.is_empty() || rank == 0 {
            return Err(PtnError::Argument(
                "need at least one variable and rank ≥ 1".into(),
            ));
        }
        if !(init_std > 0.0) {
            return Err(PtnError::Argument(format!(
                "init_std must be positive, got {init_std}"
            )));
        }
        let n = dims.len();
        let cores = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let left = if k == 0 { 1 } else { rank };
                let right = if k + 1 == n { 1 } else { rank };
                let data = (0..left * d * right)
                    .map(|_| init_std * rng.gaussian())
                    .collect();
                Core::from_vec(left, d, right, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores, mode)
    }

    /// Default initialization scale `1/√R`.
    pub fn default_init_std(rank: usize) -> f64 {
        1.0 / (rank as f64).sqrt()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn mode(&self) -> PositivityMode {
        self.mode
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.cores
    }

    pub fn core(&self, n: usize) -> &Core {
        &self.cores[n]
    }

    pub(crate) fn set_core(&mut self, n: usize, core: Core) {
        self.cores[n] = core;
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim).collect()
    }

    /// Bond dimensions `R_1..R_{N+1}`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.left).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.cores.iter().map(|c| c.right).max().unwrap_or(1)
    }

    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.cores
            .iter()
            .all(|c| c.data.iter().all(|x| x.is_finite()))
    }

    /// Cores with `σ` applied (a plain copy for Born machines).
    pub fn activated_cores(&self) -> Vec<Core> {
        self.cores.iter().map(|c| c.activated(self.mode)).collect()
    }

    pub(crate) fn check_assignment(&self, y: &[usize]) -> Result<()> {
        if y.len() != self.len() {
            return Err(PtnError::DimensionMismatch(format!(
                "assignment has {} symbols, model has {} variables",
                y.len(),
                self.len()
            )));
        }
        for (n, (&v, c)) in y.iter().zip(&self.cores).enumerate() {
            if v >= c.dim {
                return Err(PtnError::Index(format!(
                    "symbol {v} at position {n} is outside 0..{}",
                    c.dim
                )));
            }
        }
        Ok(())
    }

    /// Raw slice `G⁽ⁿ⁾[y]` (0-based `n`), without `σ`.
    pub fn core_slice(&self, n: usize, y: usize) -> Result<Matrix> {
        let core = self
            .cores
            .get(n)
            .ok_or_else(|| PtnError::Index(format!("position {n} outside 0..{}", self.len())))?;
        if y >= core.dim {
            return Err(PtnError::Index(format!(
                "symbol {y} outside 0..{} at position {n}",
                core.dim
            )));
        }
        Ok(core.slice(y))
    }

    /// Unscaled chain product `Ψ(y)`; σ-modes apply `σ` to each slice first.
    ///
    /// This is the numerically naive contraction: it overflows for long
    /// chains and is kept for oracle comparisons and overflow experiments.
    pub fn psi_raw(&self, y: &[usize]) -> Result<f64> {
        self.check_assignment(y)?;
        let mut v = vec![1.0];
        for (core, &sym) in self.cores.iter().zip(y) {
            let mut w = vec![0.0; core.right];
            for (i, vi) in v.iter().enumerate() {
                for (j, g) in core.row(i, sym).iter().enumerate() {
                    w[j] += vi * self.mode.apply(*g);
                }
            }
            v = w;
        }
        Ok(v[0])
    }

    /// `Ġ⁽ⁿ⁾ = Σ_y σ(G⁽ⁿ⁾[y])`; a plain sum of slices for Born machines.
    pub fn marginalized_core(&self, n: usize) -> Result<Matrix> {
        let core = self
            .cores
            .get(n)
            .ok_or_else(|| PtnError::Index(format!("position {n} outside 0..{}", self.len())))?;
        Ok(marginalize(core, self.mode))
    }
}

pub(crate) fn marginalize(core: &Core, mode: PositivityMode) -> Matrix {
    let mut m = Matrix::zeros(core.left, core.right);
    for i in 0..core.left {
        for y in 0..core.dim {
            for (j, g) in core.row(i, y).iter().enumerate() {
                let cur = m.get(i, j);
                m.set(i, j, cur + mode.apply(*g));
            }
        }
    }
    m
}
