//! Exact gradients of the negative log-likelihood.
//!
//! The forward passes factor a norm out of the running vector at every step.
//! In reverse accumulation those norms are held constant: `log p̃ + Σ log γ`
//! equals `log p` identically, so the derivative flowing through the `γ`
//! terms cancels against the one flowing through the normalized vector, and
//! treating them as constants yields the exact gradient. The backward pass
//! then costs the same as the forward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};
use crate::mem::{f64_bytes, MemTracker};
use crate::model::{Core, MpsModel};
use crate::stable::{normalize, row_times_slice, slice_times_col, NormEnvs, Prepared};

/// Gradient with one array per core, shaped like the model cores.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    grads: Vec<Core>,
}

impl GradientSet {
    pub fn zeros_like(model: &MpsModel) -> Self {
        Self {
            grads: model
                .cores()
                .iter()
                .map(|c| Core::zeros(c.left(), c.dim(), c.right()))
                .collect(),
        }
    }

    pub fn cores(&self) -> &[Core] {
        &self.grads
    }

    pub fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.grads
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|c| c.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|c| c.data().iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .all(|c| c.data().iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    fn add_scaled(&mut self, other: &GradientSet, c: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, y)| *x += c * y);
        }
    }

    pub fn bytes(&self) -> usize {
        self.grads.iter().map(|c| c.bytes()).sum()
    }

    pub fn from_cores(grads: Vec<Core>) -> Self {
        Self { grads }
    }
}

/// Samples per parallel work item. Fixed so the reduction order, and hence
/// the floating point result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Mean NLL of `batch` and its exact gradient with respect to the raw core
/// parameters.
pub fn grad_nll<S: AsRef<[usize]> + Sync>(
    model: &MpsModel,
    batch: &[S],
) -> Result<(f64, GradientSet)> {
    grad_nll_tracked(model, batch, &MemTracker::new())
}

/// [`grad_nll`] reporting its transient buffers to `mem`.
pub fn grad_nll_tracked<S: AsRef<[usize]> + Sync>(
    model: &MpsModel,
    batch: &[S],
    mem: &MemTracker,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(PtnError::Argument("empty batch".into()));
    }
    for s in batch {
        model.check_assignment(s.as_ref())?;
    }
    let n = model.len();
    let born = model.mode().is_born();
    let mult = if born { 2.0 } else { 1.0 };

    let prepared = Prepared::new(model);
    let act_bytes = if born {
        0
    } else {
        model.cores().iter().map(|c| c.bytes()).sum()
    };
    mem.alloc(act_bytes);

    let envs = NormEnvs::from_prepared(&prepared)?;
    let env_bytes: usize = envs
        .left
        .iter()
        .chain(&envs.right)
        .map(|e| f64_bytes(e.len()))
        .sum();
    mem.alloc(env_bytes);

    // Gradient with respect to the activated entries σ(G); the chain rule
    // through σ is applied once at the end.
    let mut grad = GradientSet::zeros_like(model);
    mem.alloc(grad.bytes());
    add_log_z_gradient(&prepared, &envs, &mut grad);

    let maxr = model.max_rank();
    let partial_bytes = grad.bytes() + f64_bytes(n * maxr + n + 1 + 3 * maxr);
    let chunks: Vec<Result<(f64, GradientSet)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            mem.alloc(partial_bytes);
            let mut partial = GradientSet::zeros_like(model);
            let mut scratch = SampleScratch::new(n, maxr);
            let mut sum_log_mass = 0.0;
            for (k, y) in chunk.iter().enumerate() {
                let lm = accumulate_sample(&prepared, y.as_ref(), mult, &mut scratch, &mut partial)
                    .map_err(|e| e.with_sample(c * CHUNK + k))?;
                sum_log_mass += lm;
            }
            Ok((sum_log_mass, partial))
        })
        .collect();

    let inv_k = 1.0 / batch.len() as f64;
    let mut sum_log_mass = 0.0;
    for part in chunks {
        let (s, partial) = part?;
        sum_log_mass += s;
        grad.add_scaled(&partial, -inv_k);
        mem.free(partial_bytes);
    }

    if !born {
        for (g, raw) in grad.grads.iter_mut().zip(model.cores()) {
            for (gv, x) in g.data_mut().iter_mut().zip(raw.data()) {
                *gv *= model.mode().derivative(*x);
            }
        }
    }
    mem.free(env_bytes);
    mem.free(act_bytes);

    let loss = envs.log_z - sum_log_mass * inv_k;
    if !loss.is_finite() {
        return Err(PtnError::NonFinite("loss".into()));
    }
    if !grad.is_finite() {
        return Err(PtnError::NonFinite("gradient".into()));
    }
    let out_bytes = grad.bytes();
    mem.free(out_bytes);
    Ok((loss, grad))
}

/// Adds `∂ log Z / ∂σ(G)` into `grad`.
fn add_log_z_gradient(p: &Prepared<'_>, envs: &NormEnvs, grad: &mut GradientSet) {
    for (n, (core, g)) in p.cores.iter().zip(grad.grads.iter_mut()).enumerate() {
        let left = &envs.left[n];
        let right = &envs.right[n + 1];
        let coef = (left.log_scale() + right.log_scale() - envs.log_z).exp();
        let (l, d, r) = core.shape();
        if p.mode.is_born() {
            // ∂Z/∂G[y] = 2 E G[y] F  with E, F symmetric.
            let e = left.vector();
            let f = right.vector();
            let mut gf = vec![0.0; l * r];
            for y in 0..d {
                gf.iter_mut().for_each(|x| *x = 0.0);
                for a in 0..l {
                    for (c, gv) in core.row(a, y).iter().enumerate() {
                        for (o, fv) in gf[a * r..(a + 1) * r]
                            .iter_mut()
                            .zip(&f[c * r..(c + 1) * r])
                        {
                            *o += gv * fv;
                        }
                    }
                }
                for a in 0..l {
                    for b in 0..l {
                        let eab = 2.0 * coef * e[a * l + b];
                        if eab == 0.0 {
                            continue;
                        }
                        for j in 0..r {
                            let idx = g.index(a, y, j);
                            g.data_mut()[idx] += eab * gf[b * r + j];
                        }
                    }
                }
            }
        } else {
            let lv = left.vector();
            let rv = right.vector();
            for i in 0..l {
                let li = coef * lv[i];
                for y in 0..d {
                    let start = g.index(i, y, 0);
                    for (o, rj) in g.data_mut()[start..start + r].iter_mut().zip(rv) {
                        *o += li * rj;
                    }
                }
            }
        }
    }
}

struct SampleScratch {
    /// Unit left vectors before each core, packed with stride `maxr`.
    lefts: Vec<f64>,
    log_scales: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    maxr: usize,
}

impl SampleScratch {
    fn new(n: usize, maxr: usize) -> Self {
        Self {
            lefts: vec![0.0; n * maxr],
            log_scales: vec![0.0; n + 1],
            r: vec![0.0; maxr],
            w: vec![0.0; maxr],
            maxr,
        }
    }
}

/// Adds `∂ log mass(y) / ∂σ(G)` into `grad` and returns `log mass(y)`.
fn accumulate_sample(
    p: &Prepared<'_>,
    y: &[usize],
    mult: f64,
    s: &mut SampleScratch,
    grad: &mut GradientSet,
) -> Result<f64> {
    let maxr = s.maxr;
    // Forward: store the unit left vector that enters each core.
    s.lefts[0] = 1.0;
    s.log_scales[0] = 0.0;
    let mut cur_len = 1;
    let mut last = [0.0f64; 1];
    for (n, (core, &sym)) in p.cores.iter().zip(y).enumerate() {
        let out_len = core.right();
        let (before, after) = s.lefts.split_at_mut((n + 1) * maxr);
        let v = &before[n * maxr..n * maxr + cur_len];
        let out: &mut [f64] = if n + 1 < p.cores.len() {
            &mut after[..out_len]
        } else {
            &mut last[..]
        };
        row_times_slice(v, core, sym, out);
        let ls = normalize(out, n)?;
        s.log_scales[n + 1] = s.log_scales[n] + ls;
        cur_len = out_len;
    }
    let sign = last[0].signum();
    let log_abs = s.log_scales[p.cores.len()] + last[0].abs().ln();

    // Backward: right vector r (unit) with log scale rho.
    let mut r_len = 1;
    s.r[0] = 1.0;
    let mut rho = 0.0;
    for n in (0..p.cores.len()).rev() {
        let core = &p.cores[n];
        let sym = y[n];
        let (l, _, rr) = core.shape();
        debug_assert_eq!(rr, r_len);
        let coef = mult * sign * (s.log_scales[n] + rho - log_abs).exp();
        let lv = &s.lefts[n * maxr..n * maxr + l];
        let g = &mut grad.grads[n];
        for (i, li) in lv.iter().enumerate() {
            let c = coef * li;
            if c == 0.0 {
                continue;
            }
            let start = g.index(i, sym, 0);
            for (o, rj) in g.data_mut()[start..start + rr].iter_mut().zip(&s.r[..rr]) {
                *o += c * rj;
            }
        }
        if n > 0 {
            let out = &mut s.w[..l];
            slice_times_col(core, sym, &s.r[..rr], out);
            rho += normalize(out, n)?;
            s.r[..l].copy_from_slice(&s.w[..l]);
            r_len = l;
        }
    }
    Ok(mult * log_abs)
}

/// Location of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamAddress {
    pub core: usize,
    pub left: usize,
    pub symbol: usize,
    pub right: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: ParamAddress,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor of the relative error in [`grad_check`]: coordinates
/// whose gradient is smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Compares [`grad_nll`] against central differences on every coordinate.
///
/// The relative error of a coordinate is
/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<S: AsRef<[usize]> + Sync>(
    model: &MpsModel,
    batch: &[S],
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(PtnError::Argument(format!(
            "step h must be positive, got {h}"
        )));
    }
    let (_, grad) = grad_nll(model, batch)?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: ParamAddress {
            core: 0,
            left: 0,
            symbol: 0,
            right: 0,
        },
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = model.clone();
    for (n, core) in model.cores().iter().enumerate() {
        let (l, d, r) = core.shape();
        for i in 0..l {
            for y in 0..d {
                for j in 0..r {
                    let idx = core.index(i, y, j);
                    let x0 = core.data()[idx];
                    probe.cores_mut()[n].data_mut()[idx] = x0 + h;
                    let fp = crate::stable::nll(&probe, batch)?.mean;
                    probe.cores_mut()[n].data_mut()[idx] = x0 - h;
                    let fm = crate::stable::nll(&probe, batch)?.mean;
                    probe.cores_mut()[n].data_mut()[idx] = x0;
                    let numeric = (fp - fm) / (2.0 * h);
                    let analytic = grad.grads[n].data()[idx];
                    let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
                    let rel = (analytic - numeric).abs() / denom;
                    report.checked += 1;
                    if rel > report.max_rel_err || report.checked == 1 {
                        report.max_rel_err = rel;
                        report.worst = ParamAddress {
                            core: n,
                            left: i,
                            symbol: y,
                            right: j,
                        };
                        report.analytic = analytic;
                        report.numeric = numeric;
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;
    use crate::model::PositivityMode;

    #[test]
    fn single_core_exp_gradient_is_softmax_minus_onehot() {
        let g = [0.3, -1.1];
        let core = Core::from_vec(1, 2, 1, g.to_vec()).unwrap();
        let m = MpsModel::new(vec![core], PositivityMode::SigmaExp).unwrap();
        let (loss, grad) = grad_nll(&m, &[vec![1usize]]).unwrap();
        let z = g[0].exp() + g[1].exp();
        assert!((loss - (z.ln() - g[1])).abs() < 1e-14);
        let want = [g[0].exp() / z, g[1].exp() / z - 1.0];
        for (a, b) in grad.cores()[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_finite_differences_all_modes() {
        let mut rng = Rng::new(77);
        for mode in PositivityMode::ALL {
            let m = MpsModel::random(&[2, 3, 2, 2, 3, 2], 3, mode, 0.8, &mut rng).unwrap();
            let batch: Vec<Vec<usize>> = (0..5)
                .map(|_| m.dims().iter().map(|&d| rng.below(d)).collect())
                .collect();
            let rep = grad_check(&m, &batch, 1e-5).unwrap();
            assert!(rep.max_rel_err <= 1e-5, "{mode}: {rep:?}");
        }
    }

    #[test]
    fn grad_check_rejects_zero_step() {
        let m = MpsModel::new(vec![Core::zeros(1, 2, 1)], PositivityMode::SigmaExp).unwrap();
        assert!(matches!(
            grad_check(&m, &[vec![0usize]], 0.0),
            Err(PtnError::Argument(_))
        ));
    }

    #[test]
    fn zero_amplitude_names_sample() {
        let core = Core::from_vec(1, 2, 1, vec![1.0, 0.0]).unwrap();
        let m = MpsModel::new(vec![core], PositivityMode::Born).unwrap();
        let err = grad_nll(&m, &[vec![0usize], vec![1]]).unwrap_err();
        assert!(
            matches!(
                err,
                PtnError::ZeroAmplitude {
                    sample: Some(1),
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn result_independent_of_thread_count() {
        let mut rng = Rng::new(5);
        let m = MpsModel::random(&[2; 12], 4, PositivityMode::SigmaExp, 0.5, &mut rng).unwrap();
        let batch: Vec<Vec<usize>> = (0..37)
            .map(|_| (0..12).map(|_| rng.below(2)).collect())
            .collect();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| grad_nll(&m, &batch)).unwrap();
        let b = four.install(|| grad_nll(&m, &batch)).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }
}
