//! Exact sampling, conditionals and marginals.
//!
//! Positions are zero-based throughout. A [`Sampler`] caches the normalizer
//! environments once per model version, after which each conditional costs
//! `O(D·R²)` (`O(D·R³)` for Born machines) and a full ancestral sample costs
//! `N` of those.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::kernel::{log_sum_exp, Rng};
use crate::model::{Core, MpsModel};
use crate::stable::{
    born_left_apply, normalize, row_times_slice, slice_times_col, NormEnvs, Prepared, ScaledVector,
};

/// Evidence and the positions to be sampled (in the listed order).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub conditioned: BTreeMap<usize, usize>,
    pub targets: Vec<usize>,
}

impl QuerySpec {
    pub fn new(conditioned: BTreeMap<usize, usize>, targets: Vec<usize>) -> Self {
        Self {
            conditioned,
            targets,
        }
    }

    pub fn validate(&self, model: &MpsModel) -> Result<()> {
        let dims = model.dims();
        for (&n, &y) in &self.conditioned {
            if n >= dims.len() || y >= dims[n] {
                return Err(PtnError::Index(format!(
                    "evidence {n}={y} outside the model"
                )));
            }
        }
        let mut seen = vec![false; dims.len()];
        for &t in &self.targets {
            if t >= dims.len() {
                return Err(PtnError::Index(format!(
                    "target {t} outside 0..{}",
                    dims.len()
                )));
            }
            if self.conditioned.contains_key(&t) || std::mem::replace(&mut seen[t], true) {
                return Err(PtnError::Argument(format!(
                    "position {t} appears twice in the query"
                )));
            }
        }
        Ok(())
    }

    fn partial(&self, n: usize) -> Vec<Option<usize>> {
        let mut p = vec![None; n];
        for (&k, &v) in &self.conditioned {
            p[k] = Some(v);
        }
        p
    }
}

/// Cached environments for repeated conditionals and sampling.
pub struct Sampler {
    cores: Vec<Core>,
    envs: NormEnvs,
    born: bool,
}

impl Sampler {
    pub fn new(model: &MpsModel) -> Result<Self> {
        let p = Prepared::new(model);
        let envs = NormEnvs::from_prepared(&p)?;
        Ok(Self {
            cores: p.cores.into_owned(),
            envs,
            born: model.mode().is_born(),
        })
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn log_z(&self) -> f64 {
        self.envs.log_z
    }

    /// Unit left state after absorbing `prefix` (positions `0..prefix.len()`).
    fn left_state(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut v = vec![1.0];
        for (n, &y) in prefix.iter().enumerate() {
            let core = &self.cores[n];
            check_symbol(core, n, y)?;
            let mut w = vec![0.0; core.right()];
            row_times_slice(&v, core, y, &mut w);
            normalize(&mut w, n)?;
            v = w;
        }
        Ok(v)
    }

    /// Distribution of `y_n` given a unit left state over `0..n`; returns the
    /// probabilities and, per symbol, the normalized next state.
    fn forward_step(&self, l: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let core = &self.cores[n];
        let r = self.envs.right[n + 1].vector();
        let mut logs = Vec::with_capacity(core.dim());
        let mut states = Vec::with_capacity(core.dim());
        for y in 0..core.dim() {
            let mut v = vec![0.0; core.right()];
            row_times_slice(l, core, y, &mut v);
            let u = if self.born {
                quadratic_form(&v, r)
            } else {
                v.iter().zip(r).map(|(a, b)| a * b).sum()
            };
            logs.push(u.max(0.0).ln());
            states.push(v);
        }
        Ok((normalize_logs(&logs, n)?, states))
    }

    /// Distribution of `y_n` given a unit right state over `n+1..N`.
    fn backward_step(&self, r: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let core = &self.cores[n];
        let e = self.envs.left[n].vector();
        let mut logs = Vec::with_capacity(core.dim());
        let mut states = Vec::with_capacity(core.dim());
        for y in 0..core.dim() {
            let mut w = vec![0.0; core.left()];
            slice_times_col(core, y, r, &mut w);
            let u = if self.born {
                quadratic_form(&w, e)
            } else {
                w.iter().zip(e).map(|(a, b)| a * b).sum()
            };
            logs.push(u.max(0.0).ln());
            states.push(w);
        }
        Ok((normalize_logs(&logs, n)?, states))
    }

    /// `p(y_n | y_0..y_{n-1})`.
    pub fn conditional(&self, prefix: &[usize], n: usize) -> Result<Vec<f64>> {
        if n >= self.len() || prefix.len() != n {
            return Err(PtnError::Argument(format!(
                "prefix of length {} does not precede position {n}",
                prefix.len()
            )));
        }
        let l = self.left_state(prefix)?;
        Ok(self.forward_step(&l, n)?.0)
    }

    /// One ancestral sample from position `0` to `N−1`.
    pub fn draw_forward(&self, rng: &mut Rng) -> Result<Vec<usize>> {
        let mut y = Vec::with_capacity(self.len());
        let mut l = vec![1.0];
        for n in 0..self.len() {
            let (probs, mut states) = self.forward_step(&l, n)?;
            let k = inverse_cdf(&probs, rng.uniform());
            l = std::mem::take(&mut states[k]);
            normalize(&mut l, n)?;
            y.push(k);
        }
        Ok(y)
    }

    /// One ancestral sample from position `N−1` down to `0`.
    pub fn draw_backward(&self, rng: &mut Rng) -> Result<Vec<usize>> {
        let mut y = vec![0; self.len()];
        let mut r = vec![1.0];
        for n in (0..self.len()).rev() {
            let (probs, mut states) = self.backward_step(&r, n)?;
            let k = inverse_cdf(&probs, rng.uniform());
            r = std::mem::take(&mut states[k]);
            normalize(&mut r, n)?;
            y[n] = k;
        }
        Ok(y)
    }

    /// Normalized `log p` of a partial assignment (`None` = summed out).
    pub fn log_marginal(&self, partial: &[Option<usize>]) -> Result<f64> {
        if partial.len() != self.len() {
            return Err(PtnError::DimensionMismatch(format!(
                "partial assignment of length {} for {} positions",
                partial.len(),
                self.len()
            )));
        }
        let mut env = ScaledVector::boundary();
        for (n, (core, sym)) in self.cores.iter().zip(partial).enumerate() {
            if let Some(y) = sym {
                check_symbol(core, n, *y)?;
            }
            let mut w = if self.born {
                born_left_apply(env.vector(), core, *sym)
            } else {
                let mut acc = vec![0.0; core.right()];
                let mut tmp = vec![0.0; core.right()];
                let ys: Vec<usize> = match sym {
                    Some(y) => vec![*y],
                    None => (0..core.dim()).collect(),
                };
                for y in ys {
                    row_times_slice(env.vector(), core, y, &mut tmp);
                    acc.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
                }
                acc
            };
            match normalize(&mut w, n) {
                Ok(ls) => env = ScaledVector::new(w, env.log_scale() + ls),
                Err(PtnError::ZeroAmplitude { .. }) => return Ok(f64::NEG_INFINITY),
                Err(e) => return Err(e),
            }
        }
        Ok(env.log_abs() - self.envs.log_z)
    }

    /// `p(y_n | evidence)` for evidence at arbitrary positions.
    pub fn conditional_given(&self, evidence: &[Option<usize>], n: usize) -> Result<Vec<f64>> {
        if n >= self.len() || evidence.len() != self.len() || evidence[n].is_some() {
            return Err(PtnError::Argument(format!(
                "cannot condition position {n} on this evidence"
            )));
        }
        let mut partial = evidence.to_vec();
        let mut logs = Vec::with_capacity(self.cores[n].dim());
        for y in 0..self.cores[n].dim() {
            partial[n] = Some(y);
            logs.push(self.log_marginal(&partial)?);
        }
        normalize_logs(&logs, n)
    }
}

fn check_symbol(core: &Core, n: usize, y: usize) -> Result<()> {
    if y >= core.dim() {
        return Err(PtnError::Index(format!(
            "symbol {y} at position {n} outside 0..{}",
            core.dim()
        )));
    }
    Ok(())
}

/// `v F vᵀ` with `F` a flattened square matrix.
fn quadratic_form(v: &[f64], f: &[f64]) -> f64 {
    let r = v.len();
    let mut s = 0.0;
    for (a, va) in v.iter().enumerate() {
        s += va
            * f[a * r..(a + 1) * r]
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum::<f64>();
    }
    s
}

/// Normalizes candidate log-numerators with log-sum-exp.
fn normalize_logs(logs: &[f64], n: usize) -> Result<Vec<f64>> {
    let lse = log_sum_exp(logs);
    if lse == f64::NEG_INFINITY {
        return Err(PtnError::ZeroAmplitude {
            position: n,
            sample: None,
        });
    }
    if !lse.is_finite() {
        return Err(PtnError::NonFinite(format!("conditional at position {n}")));
    }
    Ok(logs.iter().map(|l| (l - lse).exp()).collect())
}

/// Index of the first cumulative probability exceeding `u`.
fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// `p(y_n | y_0..y_{n-1})`.
pub fn conditional_dist(model: &MpsModel, prefix: &[usize], n: usize) -> Result<Vec<f64>> {
    Sampler::new(model)?.conditional(prefix, n)
}

fn draw_many(
    model: &MpsModel,
    rng: &mut Rng,
    count: usize,
    backward: bool,
) -> Result<Vec<Vec<usize>>> {
    let sampler = Sampler::new(model)?;
    let base = Rng::new(rng.next_u64());
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = base.fork(k as u64);
            if backward {
                sampler.draw_backward(&mut r)
            } else {
                sampler.draw_forward(&mut r)
            }
        })
        .collect()
}

/// `count` i.i.d. exact samples, drawn position `0 → N−1`. Each sample uses
/// its own stream derived from one draw of `rng`, so the output does not
/// depend on the thread count.
pub fn sample(model: &MpsModel, rng: &mut Rng, count: usize) -> Result<Vec<Vec<usize>>> {
    draw_many(model, rng, count, false)
}

/// As [`sample`], drawn position `N−1 → 0`.
pub fn sample_backward(model: &MpsModel, rng: &mut Rng, count: usize) -> Result<Vec<Vec<usize>>> {
    draw_many(model, rng, count, true)
}

/// Normalized log marginal of a partial assignment.
pub fn log_marginal(model: &MpsModel, partial: &[Option<usize>]) -> Result<f64> {
    Sampler::new(model)?.log_marginal(partial)
}

/// Samples `spec.targets` in order, conditioned on `spec.conditioned`.
/// Each returned row lists the sampled symbols in target order.
pub fn sample_query(
    model: &MpsModel,
    rng: &mut Rng,
    spec: &QuerySpec,
    count: usize,
) -> Result<Vec<Vec<usize>>> {
    spec.validate(model)?;
    let sampler = Sampler::new(model)?;
    let base = Rng::new(rng.next_u64());
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = base.fork(k as u64);
            let mut evidence = spec.partial(model.len());
            let mut out = Vec::with_capacity(spec.targets.len());
            for &t in &spec.targets {
                let probs = sampler.conditional_given(&evidence, t)?;
                let y = inverse_cdf(&probs, r.uniform());
                evidence[t] = Some(y);
                out.push(y);
            }
            Ok(out)
        })
        .collect()
}

/// One assignment per line, comma-separated.
pub fn format_samples(samples: &[Vec<usize>]) -> String {
    let mut s = String::new();
    for row in samples {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
