//! Log-domain contraction with running scale factors.
//!
//! Every chain product is carried as a unit-norm working vector together
//! with the accumulated `Σ log γ` of the norms that were divided out. Log
//! masses, the log normalizer and the negative log-likelihood are assembled
//! from those pieces, so no intermediate ever leaves the floating point
//! range regardless of chain length.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::kernel::{norm2, Matrix};
use crate::model::{Core, MpsModel, PositivityMode};

/// Working vector paired with the log of the scale that was factored out of
/// it. The represented value is `exp(log_scale) · v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledVector {
    v: Vec<f64>,
    log_scale: f64,
}

impl ScaledVector {
    /// The one-dimensional boundary vector `[1]`.
    pub fn boundary() -> Self {
        Self {
            v: vec![1.0],
            log_scale: 0.0,
        }
    }

    pub fn new(v: Vec<f64>, log_scale: f64) -> Self {
        Self { v, log_scale }
    }

    pub fn vector(&self) -> &[f64] {
        &self.v
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Sign of a one-dimensional vector (the closed chain).
    pub fn sign(&self) -> f64 {
        self.v[0].signum()
    }

    /// `log |value|` for a closed (one-dimensional) chain.
    pub fn log_abs(&self) -> f64 {
        self.log_scale + self.v[0].abs().ln()
    }

    /// The represented vector with the scale multiplied back in. Only
    /// meaningful when that value is representable.
    pub fn to_dense(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.v.iter().map(|x| x * s).collect()
    }

    /// Replaces the state with `normalize(v · m)` and accumulates the log of
    /// the removed norm. `position` is reported if the product vanishes.
    pub fn absorb(&mut self, m: &Matrix, position: usize) -> Result<()> {
        if self.v.len() != m.rows() {
            return Err(PtnError::DimensionMismatch(format!(
                "state of length {} cannot absorb a {}x{} matrix",
                self.v.len(),
                m.rows(),
                m.cols()
            )));
        }
        let mut w = vec![0.0; m.cols()];
        for (i, vi) in self.v.iter().enumerate() {
            for (o, mij) in w.iter_mut().zip(m.row(i)) {
                *o += vi * mij;
            }
        }
        self.log_scale += normalize(&mut w, position)?;
        self.v = w;
        Ok(())
    }
}

/// Functional form of [`ScaledVector::absorb`].
pub fn scaled_absorb(state: &ScaledVector, m: &Matrix, position: usize) -> Result<ScaledVector> {
    let mut next = state.clone();
    next.absorb(m, position)?;
    Ok(next)
}

/// Divides `w` by its L2 norm and returns `log ‖w‖`.
#[inline]
pub(crate) fn normalize(w: &mut [f64], position: usize) -> Result<f64> {
    let g = norm2(w);
    if g == 0.0 {
        return Err(PtnError::ZeroAmplitude {
            position,
            sample: None,
        });
    }
    if !g.is_finite() {
        return Err(PtnError::NonFinite(format!(
            "scale factor at position {position}"
        )));
    }
    let inv = 1.0 / g;
    w.iter_mut().for_each(|x| *x *= inv);
    Ok(g.ln())
}

/// `out = v · G[y]` for an (already activated) core.
#[inline]
pub(crate) fn row_times_slice(v: &[f64], core: &Core, y: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, vi) in v.iter().enumerate() {
        if *vi == 0.0 {
            continue;
        }
        for (o, g) in out.iter_mut().zip(core.row(i, y)) {
            *o += vi * g;
        }
    }
}

/// `out = G[y] · r` for an (already activated) core.
#[inline]
pub(crate) fn slice_times_col(core: &Core, y: usize, r: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = core.row(i, y).iter().zip(r).map(|(g, x)| g * x).sum();
    }
}

/// Per-sample evaluation. `log_p` is the log of the unnormalized mass
/// (`log Ψ_σ(y)` or `log Ψ(y)²`), so that `nll = log_z − log_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub log_p: f64,
    pub log_z: f64,
    pub nll: f64,
}

#[derive(Clone, Debug)]
pub struct NllReport {
    /// Mean negative log-likelihood over the batch (nats, whole sample).
    pub mean: f64,
    pub per_sample: Vec<EvalResult>,
}

impl NllReport {
    pub fn per_variable(&self, num_vars: usize) -> f64 {
        self.mean / num_vars as f64
    }
}

/// Activated view of a model: `σ(G)` for σ-modes, the raw cores otherwise.
pub(crate) struct Prepared<'a> {
    pub cores: Cow<'a, [Core]>,
    pub mode: PositivityMode,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a MpsModel) -> Self {
        let cores = if model.mode().is_born() {
            Cow::Borrowed(model.cores())
        } else {
            Cow::Owned(model.activated_cores())
        };
        Self {
            cores,
            mode: model.mode(),
        }
    }

    /// Log of the unnormalized mass of `y` together with the sign of the
    /// amplitude (always `+1` for σ-modes).
    pub fn log_mass(&self, y: &[usize]) -> Result<f64> {
        let (log_abs, _) = self.log_amplitude(y)?;
        Ok(if self.mode.is_born() {
            2.0 * log_abs
        } else {
            log_abs
        })
    }

    /// `(log |Ψ(y)|, sign Ψ(y))` by a scaled left-to-right pass.
    pub fn log_amplitude(&self, y: &[usize]) -> Result<(f64, f64)> {
        let maxr = self.cores.iter().map(|c| c.right()).max().unwrap_or(1);
        let mut v = Vec::with_capacity(maxr);
        v.push(1.0);
        let mut w = vec![0.0; maxr];
        let mut log_scale = 0.0;
        for (n, (core, &sym)) in self.cores.iter().zip(y).enumerate() {
            let out = &mut w[..core.right()];
            row_times_slice(&v, core, sym, out);
            log_scale += normalize(out, n)?;
            v.clear();
            v.extend_from_slice(out);
        }
        Ok((log_scale + v[0].abs().ln(), v[0].signum()))
    }
}

/// Left and right environments of the normalizer.
///
/// For σ-modes the environments are row/column vectors built from the
/// marginalized cores `Ġ`. For Born machines they are the `R×R` matrices
/// `E ← Σ_y G[y]ᵀ E G[y]` and `F ← Σ_y G[y] F G[y]ᵀ` (flattened row-major),
/// i.e. the doubled chain contracted two rank-`R` products at a time.
///
/// `left[n]` covers cores `0..n` and `right[n]` covers cores `n..N`, so
/// `Z = ⟨left[n], right[n]⟩` for every `n`.
#[derive(Clone, Debug)]
pub struct NormEnvs {
    pub left: Vec<ScaledVector>,
    pub right: Vec<ScaledVector>,
    pub log_z: f64,
    pub mode: PositivityMode,
}

impl NormEnvs {
    pub fn compute(model: &MpsModel) -> Result<Self> {
        Self::from_prepared(&Prepared::new(model))
    }

    pub(crate) fn from_prepared(p: &Prepared<'_>) -> Result<Self> {
        let n = p.cores.len();
        let mut left = Vec::with_capacity(n + 1);
        left.push(ScaledVector::boundary());
        for (k, core) in p.cores.iter().enumerate() {
            let next = if p.mode.is_born() {
                born_left_step(&left[k], core, k)?
            } else {
                sigma_left_step(&left[k], core, k)?
            };
            left.push(next);
        }
        let mut right = vec![ScaledVector::boundary(); n + 1];
        for k in (0..n).rev() {
            right[k] = if p.mode.is_born() {
                born_right_step(&right[k + 1], &p.cores[k], k)?
            } else {
                sigma_right_step(&right[k + 1], &p.cores[k], k)?
            };
        }
        let log_z = left[n].log_abs();
        Ok(Self {
            left,
            right,
            log_z,
            mode: p.mode,
        })
    }
}

pub(crate) fn sigma_left_step(
    env: &ScaledVector,
    act: &Core,
    position: usize,
) -> Result<ScaledVector> {
    let mut w = vec![0.0; act.right()];
    for (i, vi) in env.v.iter().enumerate() {
        for y in 0..act.dim() {
            for (o, g) in w.iter_mut().zip(act.row(i, y)) {
                *o += vi * g;
            }
        }
    }
    let ls = normalize(&mut w, position)?;
    Ok(ScaledVector::new(w, env.log_scale + ls))
}

pub(crate) fn sigma_right_step(
    env: &ScaledVector,
    act: &Core,
    position: usize,
) -> Result<ScaledVector> {
    let mut w = vec![0.0; act.left()];
    for (i, o) in w.iter_mut().enumerate() {
        for y in 0..act.dim() {
            *o += act
                .row(i, y)
                .iter()
                .zip(&env.v)
                .map(|(g, x)| g * x)
                .sum::<f64>();
        }
    }
    let ls = normalize(&mut w, position)?;
    Ok(ScaledVector::new(w, env.log_scale + ls))
}

/// `E' = Σ_y G[y]ᵀ E G[y]` with `E` of size `left×left`.
pub(crate) fn born_left_step(
    env: &ScaledVector,
    core: &Core,
    position: usize,
) -> Result<ScaledVector> {
    let mut w = born_left_apply(&env.v, core, None);
    let ls = normalize(&mut w, position)?;
    Ok(ScaledVector::new(w, env.log_scale + ls))
}

/// `F' = Σ_y G[y] F G[y]ᵀ` with `F` of size `right×right`.
pub(crate) fn born_right_step(
    env: &ScaledVector,
    core: &Core,
    position: usize,
) -> Result<ScaledVector> {
    let mut w = born_right_apply(&env.v, core, None);
    let ls = normalize(&mut w, position)?;
    Ok(ScaledVector::new(w, env.log_scale + ls))
}

/// `Σ_{y ∈ symbols} G[y]ᵀ E G[y]`, summing over all symbols when `symbol` is
/// `None`.
pub(crate) fn born_left_apply(e: &[f64], core: &Core, symbol: Option<usize>) -> Vec<f64> {
    let (l, r) = (core.left(), core.right());
    let mut out = vec![0.0; r * r];
    let mut eg = vec![0.0; l * r];
    let ys: Vec<usize> = match symbol {
        Some(y) => vec![y],
        None => (0..core.dim()).collect(),
    };
    for y in ys {
        // eg = E · G[y]   (l×r)
        eg.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..l {
            for b in 0..l {
                let eab = e[a * l + b];
                if eab == 0.0 {
                    continue;
                }
                for (o, g) in eg[a * r..(a + 1) * r].iter_mut().zip(core.row(b, y)) {
                    *o += eab * g;
                }
            }
        }
        // out += G[y]ᵀ · eg
        for a in 0..l {
            let ga = core.row(a, y);
            let ega = &eg[a * r..(a + 1) * r];
            for (c, gac) in ga.iter().enumerate() {
                if *gac == 0.0 {
                    continue;
                }
                for (o, x) in out[c * r..(c + 1) * r].iter_mut().zip(ega) {
                    *o += gac * x;
                }
            }
        }
    }
    out
}

/// `Σ_{y ∈ symbols} G[y] F G[y]ᵀ`.
pub(crate) fn born_right_apply(f: &[f64], core: &Core, symbol: Option<usize>) -> Vec<f64> {
    let (l, r) = (core.left(), core.right());
    let mut out = vec![0.0; l * l];
    let mut gf = vec![0.0; l * r];
    let ys: Vec<usize> = match symbol {
        Some(y) => vec![y],
        None => (0..core.dim()).collect(),
    };
    for y in ys {
        // gf = G[y] · F   (l×r)
        gf.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..l {
            let row = &mut gf[a * r..(a + 1) * r];
            for (c, g) in core.row(a, y).iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                for (o, fv) in row.iter_mut().zip(&f[c * r..(c + 1) * r]) {
                    *o += g * fv;
                }
            }
        }
        // out += gf · G[y]ᵀ
        for a in 0..l {
            for b in 0..l {
                out[a * l + b] += gf[a * r..(a + 1) * r]
                    .iter()
                    .zip(core.row(b, y))
                    .map(|(x, g)| x * g)
                    .sum::<f64>();
            }
        }
    }
    out
}

fn require_sigma(model: &MpsModel) -> Result<()> {
    if model.mode().is_born() {
        return Err(PtnError::Unsupported("expected a σ-mode model".into()));
    }
    Ok(())
}

fn require_born(model: &MpsModel) -> Result<()> {
    if !model.mode().is_born() {
        return Err(PtnError::Unsupported("expected a Born machine".into()));
    }
    Ok(())
}

/// `log Ψ_σ(y)` (unnormalized).
pub fn log_p_sigma(model: &MpsModel, y: &[usize]) -> Result<f64> {
    require_sigma(model)?;
    model.check_assignment(y)?;
    Prepared::new(model).log_mass(y)
}

/// `log Z_σ` via scaled absorption of the marginalized cores.
pub fn log_z_sigma(model: &MpsModel) -> Result<f64> {
    require_sigma(model)?;
    log_z_forward(&Prepared::new(model))
}

/// `log Ψ(y)²` for a Born machine (unnormalized).
pub fn log_p_born(model: &MpsModel, y: &[usize]) -> Result<f64> {
    require_born(model)?;
    model.check_assignment(y)?;
    Prepared::new(model).log_mass(y)
}

/// `log Σ_y Ψ(y)²` via the doubled-chain transfer environments.
pub fn log_z_born(model: &MpsModel) -> Result<f64> {
    require_born(model)?;
    log_z_forward(&Prepared::new(model))
}

fn log_z_forward(p: &Prepared<'_>) -> Result<f64> {
    let mut env = ScaledVector::boundary();
    for (k, core) in p.cores.iter().enumerate() {
        env = if p.mode.is_born() {
            born_left_step(&env, core, k)?
        } else {
            sigma_left_step(&env, core, k)?
        };
    }
    Ok(env.log_abs())
}

/// Unnormalized log mass for either family.
pub fn log_mass(model: &MpsModel, y: &[usize]) -> Result<f64> {
    model.check_assignment(y)?;
    Prepared::new(model).log_mass(y)
}

/// Log normalizer for either family.
pub fn log_z(model: &MpsModel) -> Result<f64> {
    log_z_forward(&Prepared::new(model))
}

/// Normalized `log p(y)`.
pub fn log_prob(model: &MpsModel, y: &[usize]) -> Result<f64> {
    Ok(log_mass(model, y)? - log_z(model)?)
}

/// Mean negative log-likelihood of a batch. `log Z` is computed once and
/// shared by every sample.
pub fn nll<S: AsRef<[usize]> + Sync>(model: &MpsModel, batch: &[S]) -> Result<NllReport> {
    if batch.is_empty() {
        return Err(PtnError::Argument("empty batch".into()));
    }
    for s in batch {
        model.check_assignment(s.as_ref())?;
    }
    let p = Prepared::new(model);
    let log_z = log_z_forward(&p)?;
    let per_sample = batch
        .par_iter()
        .enumerate()
        .map(|(k, y)| {
            let log_p = p.log_mass(y.as_ref()).map_err(|e| e.with_sample(k))?;
            Ok(EvalResult {
                log_p,
                log_z,
                nll: log_z - log_p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_sample.iter().map(|r| r.nll).sum::<f64>() / per_sample.len() as f64;
    if !mean.is_finite() {
        return Err(PtnError::NonFinite("batch negative log-likelihood".into()));
    }
    Ok(NllReport { mean, per_sample })
}
