//! Two-site DMRG training for Born machines (the comparison baseline).
//!
//! The model is kept in mixed canonical form. Cores to the left of the
//! active pair are left-isometric and cores to the right are
//! right-isometric, so the normalizer of the whole chain equals the squared
//! Frobenius norm of the merged pair tensor `A`. Each visit to a pair
//! performs one gradient step on `A` and splits it back with a truncated
//! SVD. Per-sample left/right environments of the current batch are cached
//! and advanced incrementally as the active window moves.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{DiscreteDataset, Split};
use crate::error::{PtnError, Result};
use crate::kernel::{svd, svd_low_rank, Matrix, Rng, Svd};
use crate::mem::{f64_bytes, MemTracker};
use crate::model::{Core, MpsModel};
use crate::stable::{nll, normalize, row_times_slice, slice_times_col, ScaledVector};
use crate::training::{EpochRecord, Failure};

/// Why σ-positive models are rejected here.
pub const SIGMA_MODE_REJECTION: &str =
    "two-site DMRG applies to Born machines only; for σ-positive models \
a different optimization problem must be solved, because σ(G) does not split into cores by an SVD";

/// Matrices whose smaller side exceeds this use the randomized low-rank SVD.
const LOW_RANK_SVD_THRESHOLD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }
}

/// The contraction of cores `n` and `n+1`, shape `(R_n, D_n, D_{n+1}, R_{n+2})`.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedTensor {
    pub left: usize,
    pub d1: usize,
    pub d2: usize,
    pub right: usize,
    data: Vec<f64>,
}

impl MergedTensor {
    #[inline]
    pub fn index(&self, a: usize, s: usize, t: usize, b: usize) -> usize {
        ((a * self.d1 + s) * self.d2 + t) * self.right + b
    }

    pub fn get(&self, a: usize, s: usize, t: usize, b: usize) -> f64 {
        self.data[self.index(a, s, t, b)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.left, self.d1, self.d2, self.right)
    }

    pub fn bytes(&self) -> usize {
        f64_bytes(self.data.len())
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::kernel::norm2(&self.data)
    }

    /// The `(R_n·D_n) × (D_{n+1}·R_{n+2})` matricization.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.left * self.d1, self.d2 * self.right, self.data.clone())
            .expect("consistent shape")
    }

    fn into_matrix(self) -> Matrix {
        Matrix::from_vec(self.left * self.d1, self.d2 * self.right, self.data)
            .expect("consistent shape")
    }
}

fn merge_cores(a: &Core, b: &Core) -> MergedTensor {
    let (l, d1, k) = a.shape();
    let (_, d2, r) = b.shape();
    let mut data = vec![0.0; l * d1 * d2 * r];
    for i in 0..l {
        for s in 0..d1 {
            for (c, g) in a.row(i, s).iter().enumerate() {
                if *g == 0.0 || c >= k {
                    continue;
                }
                for t in 0..d2 {
                    let base = ((i * d1 + s) * d2 + t) * r;
                    for (o, h) in data[base..base + r].iter_mut().zip(b.row(c, t)) {
                        *o += g * h;
                    }
                }
            }
        }
    }
    MergedTensor {
        left: l,
        d1,
        d2,
        right: r,
        data,
    }
}

/// Contracts cores `n` and `n+1` (zero-based) over their shared bond.
pub fn merge(model: &MpsModel, n: usize) -> Result<MergedTensor> {
    if n + 1 >= model.len() {
        return Err(PtnError::Index(format!(
            "pair ({n}, {}) outside a chain of {} cores",
            n + 1,
            model.len()
        )));
    }
    Ok(merge_cores(model.core(n), model.core(n + 1)))
}

fn decompose(m: &Matrix, rank_hint: usize) -> Result<Svd> {
    if m.rows().min(m.cols()) > LOW_RANK_SVD_THRESHOLD {
        svd_low_rank(m, rank_hint)
    } else {
        svd(m)
    }
}

/// Number of singular values kept: those `≥ cutoff·s_max`, at most
/// `max_rank`, at least one.
pub fn kept_rank(s: &[f64], max_rank: usize, cutoff: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    let k = s.iter().take_while(|&&v| v >= cutoff * smax).count();
    k.min(max_rank).max(1).min(s.len())
}

fn scale_rows(m: &mut Matrix, s: &[f64]) {
    let cols = m.cols();
    for (i, si) in s.iter().enumerate() {
        m.data_mut()[i * cols..(i + 1) * cols]
            .iter_mut()
            .for_each(|x| *x *= si);
    }
}

fn scale_cols(m: &mut Matrix, s: &[f64]) {
    let cols = m.cols();
    for row in m.data_mut().chunks_mut(cols) {
        row.iter_mut().zip(s).for_each(|(x, si)| *x *= si);
    }
}

fn unit_core(core: &mut Core) -> f64 {
    let n = crate::kernel::norm2(core.data());
    if n > 0.0 && n.is_finite() {
        core.data_mut().iter_mut().for_each(|x| *x /= n);
        n.ln()
    } else {
        0.0
    }
}

/// Moves the gauge so that cores `1..N` are right-isometric, normalizing the
/// remainder at every step. Returns the model with a unit-norm core 0 and the
/// removed `log ‖·‖`, so `Z(original) = exp(2·log_norm)·Z(returned)`.
fn right_canonical_scaled(model: &MpsModel) -> Result<(MpsModel, f64)> {
    let mut cores = model.cores().to_vec();
    let mut log_norm = 0.0;
    for k in (1..cores.len()).rev() {
        let (l, d, r) = cores[k].shape();
        let f = svd(&cores[k].right_unfolding())?;
        let kk = f.s.len();
        cores[k] = Core::from_vec(kk, d, r, f.vt.data().to_vec())?;
        let mut us = f.u.clone();
        scale_cols(&mut us, &f.s);
        // core[k-1] · (U S): (l_{k-1}·d_{k-1} × l) · (l × kk)
        let prev = &cores[k - 1];
        let (pl, pd, _) = prev.shape();
        let m = crate::kernel::matmul(&prev.left_unfolding(), &us)?;
        debug_assert_eq!(us.rows(), l);
        cores[k - 1] = Core::from_vec(pl, pd, kk, m.into_vec())?;
        log_norm += unit_core(&mut cores[k - 1]);
    }
    if let Some(c0) = cores.first_mut() {
        log_norm += unit_core(c0);
    }
    Ok((MpsModel::new(cores, model.mode())?, log_norm))
}

/// Mirror of [`right_canonical_scaled`]: cores `0..N−1` left-isometric and
/// the last core carries the (unit) norm.
#[cfg(test)]
fn left_canonical_scaled(model: &MpsModel) -> Result<(MpsModel, f64)> {
    let mut cores = model.cores().to_vec();
    let n = cores.len();
    let mut log_norm = 0.0;
    for k in 0..n.saturating_sub(1) {
        let (l, d, _) = cores[k].shape();
        let f = svd(&cores[k].left_unfolding())?;
        let kk = f.s.len();
        cores[k] = Core::from_vec(l, d, kk, f.u.data().to_vec())?;
        let mut sv = f.vt.clone();
        scale_rows(&mut sv, &f.s);
        let next = &cores[k + 1];
        let (_, nd, nr) = next.shape();
        let m = crate::kernel::matmul(&sv, &next.right_unfolding())?;
        cores[k + 1] = Core::from_vec(kk, nd, nr, m.into_vec())?;
        log_norm += unit_core(&mut cores[k + 1]);
    }
    if let Some(last) = cores.last_mut() {
        log_norm += unit_core(last);
    }
    Ok((MpsModel::new(cores, model.mode())?, log_norm))
}

/// Pure gauge transformation to right-canonical form (cores `1..N`
/// right-isometric). The represented tensor, and hence `Z` and every `Ψ(y)`,
/// is unchanged.
pub fn canonicalize(model: &MpsModel) -> Result<MpsModel> {
    require_born(model)?;
    let (mut m, log_norm) = right_canonical_scaled(model)?;
    let s = log_norm.exp();
    m.cores_mut()[0].data_mut().iter_mut().for_each(|x| *x *= s);
    Ok(m)
}

/// Deviation of a core's unfolding Gram matrix from the identity: `GᵀG`
/// over the left unfolding for [`Direction::LeftToRight`] (left isometry),
/// `GGᵀ` over the right unfolding otherwise.
pub fn isometry_error(core: &Core, side: Direction) -> f64 {
    let (l, d, r) = core.shape();
    let mut worst: f64 = 0.0;
    match side {
        Direction::LeftToRight => {
            for a in 0..r {
                for b in 0..r {
                    let mut s = 0.0;
                    for i in 0..l {
                        for y in 0..d {
                            s += core.get(i, y, a) * core.get(i, y, b);
                        }
                    }
                    worst = worst.max((s - f64::from(a == b)).abs());
                }
            }
        }
        Direction::RightToLeft => {
            for a in 0..l {
                for b in 0..l {
                    let mut s = 0.0;
                    for y in 0..d {
                        s += core
                            .row(a, y)
                            .iter()
                            .zip(core.row(b, y))
                            .map(|(x, z)| x * z)
                            .sum::<f64>();
                    }
                    worst = worst.max((s - f64::from(a == b)).abs());
                }
            }
        }
    }
    worst
}

fn require_born(model: &MpsModel) -> Result<()> {
    if model.mode().is_born() {
        Ok(())
    } else {
        Err(PtnError::Unsupported(SIGMA_MODE_REJECTION.into()))
    }
}

/// Position, direction and cached environments of an ongoing half-sweep.
pub struct SweepState {
    direction: Direction,
    /// Left index of the active pair.
    position: usize,
    num_cores: usize,
    batch: Vec<Vec<usize>>,
    /// `left[n][k]`: unit row vector of cores `0..n` at sample `k`.
    left: Vec<Vec<ScaledVector>>,
    /// `right[n][k]`: unit column vector of cores `n..N` at sample `k`.
    right: Vec<Vec<ScaledVector>>,
    env_bytes: usize,
    done: bool,
}

impl SweepState {
    /// Starts a half-sweep over `batch`. For `LeftToRight` the cores
    /// `2..N` must be right-isometric; for `RightToLeft` the cores `0..N−2`
    /// must be left-isometric.
    pub fn start(model: &MpsModel, batch: Vec<Vec<usize>>, direction: Direction) -> Result<Self> {
        require_born(model)?;
        let n = model.len();
        if n < 2 {
            return Err(PtnError::Argument(
                "two-site updates need at least two cores".into(),
            ));
        }
        if batch.is_empty() {
            return Err(PtnError::Argument("empty batch".into()));
        }
        for y in &batch {
            model.check_assignment(y)?;
        }
        let b = batch.len();
        let mut left = vec![Vec::new(); n + 1];
        let mut right = vec![Vec::new(); n + 1];
        left[0] = vec![ScaledVector::boundary(); b];
        right[n] = vec![ScaledVector::boundary(); b];
        let mut env_bytes = 2 * b * f64_bytes(1);
        match direction {
            Direction::LeftToRight => {
                for k in (2..n).rev() {
                    right[k] = advance_right(model.core(k), &right[k + 1], &batch, k)?;
                    env_bytes += env_size(&right[k]);
                }
            }
            Direction::RightToLeft => {
                for k in 0..n - 2 {
                    left[k + 1] = advance_left(model.core(k), &left[k], &batch, k)?;
                    env_bytes += env_size(&left[k + 1]);
                }
            }
        }
        Ok(Self {
            direction,
            position: match direction {
                Direction::LeftToRight => 0,
                Direction::RightToLeft => n - 2,
            },
            num_cores: n,
            batch,
            left,
            right,
            env_bytes,
            done: false,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn batch(&self) -> &[Vec<usize>] {
        &self.batch
    }

    /// Bytes held by the cached environments.
    pub fn env_bytes(&self) -> usize {
        self.env_bytes
    }
}

fn env_size(envs: &[ScaledVector]) -> usize {
    envs.iter().map(|e| f64_bytes(e.len() + 1)).sum()
}

fn advance_left(
    core: &Core,
    prev: &[ScaledVector],
    batch: &[Vec<usize>],
    n: usize,
) -> Result<Vec<ScaledVector>> {
    prev.iter()
        .zip(batch)
        .enumerate()
        .map(|(k, (e, y))| {
            let mut w = vec![0.0; core.right()];
            row_times_slice(e.vector(), core, y[n], &mut w);
            let ls = normalize(&mut w, n).map_err(|e| e.with_sample(k))?;
            Ok(ScaledVector::new(w, e.log_scale() + ls))
        })
        .collect()
}

fn advance_right(
    core: &Core,
    next: &[ScaledVector],
    batch: &[Vec<usize>],
    n: usize,
) -> Result<Vec<ScaledVector>> {
    next.iter()
        .zip(batch)
        .enumerate()
        .map(|(k, (e, y))| {
            let mut w = vec![0.0; core.left()];
            slice_times_col(core, y[n], e.vector(), &mut w);
            let ls = normalize(&mut w, n).map_err(|e| e.with_sample(k))?;
            Ok(ScaledVector::new(w, e.log_scale() + ls))
        })
        .collect()
}

/// What one pair update did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub position: usize,
    pub direction: Direction,
    /// Batch NLL (whole sample, nats) before the step.
    pub loss: f64,
    pub bond_dim: usize,
    pub discarded_mass: f64,
    pub latency_ms: f64,
    pub peak_merged_bytes: usize,
}

/// One gradient step on the active merged pair, SVD split, and window move.
pub fn two_site_update(
    model: &mut MpsModel,
    state: &mut SweepState,
    learning_rate: f64,
    max_rank: usize,
    cutoff: f64,
    mem: &MemTracker,
) -> Result<UpdateStats> {
    require_born(model)?;
    if state.done {
        return Err(PtnError::Argument("half-sweep already finished".into()));
    }
    if model.len() != state.num_cores {
        return Err(PtnError::DimensionMismatch(
            "model changed length during a sweep".into(),
        ));
    }
    if max_rank == 0 || !(0.0..1.0).contains(&cutoff) || !(learning_rate >= 0.0) {
        return Err(PtnError::Argument(format!(
            "invalid update hyperparameters (rate {learning_rate}, max rank {max_rank}, cutoff {cutoff})"
        )));
    }
    let start = Instant::now();
    let n = state.position;
    let mut a = merge(model, n)?;
    let merged_bytes = a.bytes();
    mem.alloc(merged_bytes);

    // Loss and gradient. Outer cores are isometric, so Z = ‖A‖².
    let z = a.data.iter().map(|x| x * x).sum::<f64>();
    if !(z > 0.0) || !z.is_finite() {
        mem.free(merged_bytes);
        return Err(PtnError::NonFinite(format!(
            "merged tensor norm at pair {n}"
        )));
    }
    let bsz = state.batch.len() as f64;
    let lefts = &state.left[n];
    let rights = &state.right[n + 2];
    let mut grad = a.data.iter().map(|x| 2.0 * x / z).collect::<Vec<f64>>();
    mem.alloc(f64_bytes(grad.len()));
    let mut sum_log_psi2 = 0.0;
    for (k, y) in state.batch.iter().enumerate() {
        let (s, t) = (y[n], y[n + 1]);
        let l = lefts[k].vector();
        let r = rights[k].vector();
        let mut phi = 0.0;
        for (ai, la) in l.iter().enumerate() {
            let base = a.index(ai, s, t, 0);
            phi += la
                * a.data[base..base + a.right]
                    .iter()
                    .zip(r)
                    .map(|(x, rb)| x * rb)
                    .sum::<f64>();
        }
        if phi == 0.0 || !phi.is_finite() {
            mem.free(merged_bytes + f64_bytes(grad.len()));
            return Err(PtnError::ZeroAmplitude {
                position: n,
                sample: Some(k),
            });
        }
        sum_log_psi2 += 2.0 * (lefts[k].log_scale() + rights[k].log_scale() + phi.abs().ln());
        let c = 2.0 / (bsz * phi);
        for (ai, la) in l.iter().enumerate() {
            let base = a.index(ai, s, t, 0);
            for (g, rb) in grad[base..base + a.right].iter_mut().zip(r) {
                *g -= c * la * rb;
            }
        }
    }
    let loss = z.ln() - sum_log_psi2 / bsz;
    if grad.iter().any(|g| !g.is_finite()) {
        mem.free(merged_bytes + f64_bytes(grad.len()));
        return Err(PtnError::NonFinite(format!("merged gradient at pair {n}")));
    }
    if learning_rate > 0.0 {
        a.data
            .iter_mut()
            .zip(&grad)
            .for_each(|(x, g)| *x -= learning_rate * g);
    }
    mem.free(f64_bytes(grad.len()));
    drop(grad);

    // Split.
    let (l, d1, d2, r) = a.shape();
    let m = a.into_matrix();
    let hint = max_rank.min(l * d1).min(d2 * r) + state.batch.len() + 2;
    let mut f = decompose(&m, hint)?;
    let svd_bytes = f.u.bytes() + f.vt.bytes() + f64_bytes(f.s.len());
    mem.alloc(svd_bytes);
    drop(m);
    mem.free(merged_bytes);
    let keep = kept_rank(&f.s, max_rank, cutoff);
    let discarded = f.truncate(keep);
    match state.direction {
        Direction::LeftToRight => {
            let mut sv = f.vt;
            scale_rows(&mut sv, &f.s);
            model.set_core(n, Core::from_vec(l, d1, keep, f.u.into_vec())?);
            model.set_core(n + 1, Core::from_vec(keep, d2, r, sv.into_vec())?);
        }
        Direction::RightToLeft => {
            let mut us = f.u;
            scale_cols(&mut us, &f.s);
            model.set_core(n, Core::from_vec(l, d1, keep, us.into_vec())?);
            model.set_core(n + 1, Core::from_vec(keep, d2, r, f.vt.into_vec())?);
        }
    }
    mem.free(svd_bytes);
    if !model
        .core(n)
        .data()
        .iter()
        .chain(model.core(n + 1).data())
        .all(|x| x.is_finite())
    {
        return Err(PtnError::NonFinite(format!("split at pair {n}")));
    }

    // Move the window and refresh the environment that crossed it.
    let last = state.num_cores - 2;
    match state.direction {
        Direction::LeftToRight => {
            if n == last {
                state.done = true;
            } else {
                state.left[n + 1] = advance_left(model.core(n), &state.left[n], &state.batch, n)?;
                state.env_bytes += env_size(&state.left[n + 1]);
                state.env_bytes -= env_size(&state.right[n + 2]);
                state.right[n + 2] = Vec::new();
                state.position = n + 1;
            }
        }
        Direction::RightToLeft => {
            if n == 0 {
                state.done = true;
            } else {
                state.right[n + 1] =
                    advance_right(model.core(n + 1), &state.right[n + 2], &state.batch, n + 1)?;
                state.env_bytes += env_size(&state.right[n + 1]);
                state.env_bytes -= env_size(&state.left[n]);
                state.left[n] = Vec::new();
                state.position = n - 1;
            }
        }
    }
    Ok(UpdateStats {
        position: n,
        direction: state.direction,
        loss,
        bond_dim: keep,
        discarded_mass: discarded,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        peak_merged_bytes: merged_bytes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmrgConfig {
    pub learning_rate: f64,
    pub max_rank: usize,
    pub cutoff: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Half-sweeps per epoch; `None` means one per mini-batch of the data.
    pub sweeps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for DmrgConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_rank: 32,
            cutoff: 1e-10,
            batch_size: 32,
            epochs: 1,
            sweeps_per_epoch: None,
            seed: 0,
        }
    }
}

impl DmrgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(PtnError::Argument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.max_rank == 0
            || self.batch_size == 0
            || self.epochs == 0
            || self.sweeps_per_epoch == Some(0)
        {
            return Err(PtnError::Argument(
                "max rank, batch size, epochs and sweeps must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.cutoff) {
            return Err(PtnError::Argument(format!(
                "cutoff must lie in [0, 1), got {}",
                self.cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DmrgLog {
    pub records: Vec<EpochRecord>,
    pub updates: Vec<UpdateStats>,
    /// Largest merged tensor materialized during the run.
    pub peak_merged_bytes: usize,
    pub failure: Option<Failure>,
}

/// Prepares a model for sweeping: right-canonical with unit norm. The
/// distribution is unchanged.
pub fn prepare(model: &MpsModel) -> Result<MpsModel> {
    require_born(model)?;
    Ok(right_canonical_scaled(model)?.0)
}

/// Alternating half-sweeps over shuffled mini-batches.
pub fn sweep(
    model: &mut MpsModel,
    data: &DiscreteDataset,
    valid: Option<&DiscreteDataset>,
    config: &DmrgConfig,
    callback: &mut dyn FnMut(&EpochRecord),
) -> Result<DmrgLog> {
    require_born(model)?;
    config.validate()?;
    data.check_model(model)?;
    if data.is_empty() {
        return Err(PtnError::Data("training set is empty".into()));
    }
    if let Some(v) = valid {
        v.check_model(model)?;
    }
    *model = prepare(model)?;
    let n_vars = model.len() as f64;
    let mem = MemTracker::new();
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let sweeps = config
        .sweeps_per_epoch
        .unwrap_or_else(|| data.len().div_ceil(config.batch_size));
    let mut direction = Direction::LeftToRight;
    let mut log = DmrgLog {
        records: Vec::new(),
        updates: Vec::new(),
        peak_merged_bytes: 0,
        failure: None,
    };
    let mut iteration = 0;
    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        for _ in 0..sweeps {
            if cursor + config.batch_size > order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let end = (cursor + config.batch_size).min(order.len());
            let batch: Vec<Vec<usize>> = order[cursor..end]
                .iter()
                .map(|&i| data.row(i).to_vec())
                .collect();
            cursor = end;
            let outcome = (|| -> Result<()> {
                let mut state = SweepState::start(model, batch, direction)?;
                while !state.is_done() {
                    let stats = two_site_update(
                        model,
                        &mut state,
                        config.learning_rate,
                        config.max_rank,
                        config.cutoff,
                        &mem,
                    )?;
                    log.peak_merged_bytes = log.peak_merged_bytes.max(stats.peak_merged_bytes);
                    log.updates.push(stats);
                    iteration += 1;
                }
                Ok(())
            })();
            match outcome {
                Ok(()) => direction = direction.reverse(),
                Err(e) if e.is_numerical() => {
                    let record = EpochRecord {
                        epoch,
                        split: Split::Train,
                        nll_per_variable: f64::NAN,
                        wall_ms: started.elapsed().as_secs_f64() * 1e3,
                        failures: 1,
                    };
                    callback(&record);
                    log.records.push(record);
                    log.failure = Some(Failure {
                        iteration,
                        message: e.to_string(),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train = nll(model, data.rows())?.mean / n_vars;
        let record = EpochRecord {
            epoch,
            split: Split::Train,
            nll_per_variable: train,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            failures: 0,
        };
        callback(&record);
        log.records.push(record);
        if let Some(v) = valid {
            let vs = Instant::now();
            let value = nll(model, v.rows())?.mean / n_vars;
            let record = EpochRecord {
                epoch,
                split: Split::Valid,
                nll_per_variable: value,
                wall_ms: vs.elapsed().as_secs_f64() * 1e3,
                failures: 0,
            };
            callback(&record);
            log.records.push(record);
        }
    }
    Ok(log)
}

/// Runs one left-to-right half-sweep (environment setup plus `N−1` pair
/// updates) over `batch` on a prepared model, reporting bytes to `mem`.
pub fn timed_sweep(
    model: &mut MpsModel,
    batch: Vec<Vec<usize>>,
    learning_rate: f64,
    max_rank: usize,
    cutoff: f64,
    mem: &MemTracker,
) -> Result<Vec<UpdateStats>> {
    let mut state = SweepState::start(model, batch, Direction::LeftToRight)?;
    mem.alloc(state.env_bytes());
    let mut env_seen = state.env_bytes();
    let mut out = Vec::with_capacity(model.len() - 1);
    while !state.is_done() {
        out.push(two_site_update(
            model,
            &mut state,
            learning_rate,
            max_rank,
            cutoff,
            mem,
        )?);
        let now = state.env_bytes();
        if now >= env_seen {
            mem.alloc(now - env_seen);
        } else {
            mem.free(env_seen - now);
        }
        env_seen = now;
    }
    mem.free(env_seen);
    Ok(out)
}
