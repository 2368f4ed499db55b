//! Dense linear algebra and seeded random numbers.
//!
//! Everything here is plain row-major `f64`. Bond dimensions in this crate
//! stay small (tens), so straightforward loops are fast enough and keep the
//! numerics easy to audit.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PtnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PtnError::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PtnError::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(PtnError::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    let ss: f64 = v.iter().map(|x| x * x).sum();
    if ss.is_finite() && ss > 1e-280 {
        return ss.sqrt();
    }
    // Rescaled accumulation when the plain sum of squares would overflow or
    // underflow.
    let amax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if amax == 0.0 || !amax.is_finite() {
        return amax;
    }
    let s: f64 = v.iter().map(|x| (x / amax) * (x / amax)).sum();
    amax * s.sqrt()
}

/// `out = v · m` for a row vector `v`.
pub fn vecmat(v: &[f64], m: &Matrix) -> Vec<f64> {
    assert_eq!(v.len(), m.rows);
    let mut out = vec![0.0; m.cols];
    for (i, vi) in v.iter().enumerate() {
        for (o, mij) in out.iter_mut().zip(m.row(i)) {
            *o += vi * mij;
        }
    }
    out
}

/// `out = m · v` for a column vector `v`.
pub fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), m.cols);
    (0..m.rows).map(|i| dot(m.row(i), v)).collect()
}

/// Thin singular value decomposition `m = U · diag(S) · Vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows {
            for (j, s) in self.s.iter().enumerate() {
                us.data[i * us.cols + j] *= s;
            }
        }
        matmul(&us, &self.vt).expect("svd factors are conformant")
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `k` triplets and returns the discarded squared mass.
    pub fn truncate(&mut self, k: usize) -> f64 {
        let k = k.min(self.s.len());
        let discarded = self.s[k..].iter().map(|s| s * s).sum();
        self.s.truncate(k);
        self.u = take_cols(&self.u, k);
        self.vt = take_rows(&self.vt, k);
        discarded
    }
}

fn take_cols(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, k);
    for i in 0..m.rows {
        out.data[i * k..(i + 1) * k].copy_from_slice(&m.data[i * m.cols..i * m.cols + k]);
    }
    out
}

fn take_rows(m: &Matrix, k: usize) -> Matrix {
    Matrix {
        rows: k,
        cols: m.cols,
        data: m.data[..k * m.cols].to_vec(),
    }
}

const SVD_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. Singular values are non-negative and sorted in
/// descending order; `U` has orthonormal columns even when `m` is rank
/// deficient.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(PtnError::NonFinite(format!(
            "svd input of size {}x{}",
            m.rows, m.cols
        )));
    }
    if m.rows >= m.cols {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

fn jacobi_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = (a.rows, a.cols);
    // Column-major working copies: column j of A lives at w[j*m..(j+1)*m].
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a.data[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let eps = f64::EPSILON;
    let mut converged = n < 2;
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = &w[p * m..(p + 1) * m];
                    let cq = &w[q * m..(q + 1) * m];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, m, p, q, c, s);
                rotate_pair(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PtnError::SvdNonConvergence {
            rows: m,
            cols: n,
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| norm2(&w[j * m..(j + 1) * m])).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let smax = norms.iter().fold(0.0f64, |acc, x| acc.max(*x));
    let tiny = smax * (m.max(n) as f64) * eps;
    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let sj = norms[j];
        if sj > tiny && sj > 0.0 {
            for i in 0..m {
                u.data[i * n + k] = w[j * m + i] / sj;
            }
            s.push(sj);
        } else {
            missing.push(k);
            s.push(if sj > tiny { sj } else { 0.0 });
        }
        for i in 0..n {
            vt.data[k * n + i] = v[j * n + i];
        }
    }
    complete_orthonormal_columns(&mut u, &missing);
    Ok(Svd { u, s, vt })
}

fn rotate_pair(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all other
/// columns (Gram-Schmidt against the canonical basis).
fn complete_orthonormal_columns(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, n) = (u.rows, u.cols);
    let col = |u: &Matrix, j: usize| -> Vec<f64> { (0..m).map(|i| u.data[i * n + j]).collect() };
    let mut filled: Vec<usize> = (0..n).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0;
    for &k in missing {
        loop {
            assert!(basis < m, "cannot complete an orthonormal basis");
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let cj = col(u, j);
                    let proj = dot(&cand, &cj);
                    cand.iter_mut().zip(&cj).for_each(|(c, x)| *c -= proj * x);
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-6 {
                for i in 0..m {
                    u.data[i * n + k] = cand[i] / nrm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

/// Singular value decomposition of a matrix that is known to have low rank
/// relative to its size.
///
/// A randomized range finder grows a sketch until `‖A − QQᵀA‖_F` falls below
/// `1e-12·‖A‖_F`, then the small projected matrix is decomposed exactly. The
/// result is an exact thin SVD of the captured range; triplets whose singular
/// values vanish are not returned. Falls back to [`svd`] when the sketch would
/// not be smaller than the matrix.
pub fn svd_low_rank(a: &Matrix, initial_rank: usize) -> Result<Svd> {
    let small = a.rows.min(a.cols);
    let anorm = a.frobenius_norm();
    if anorm == 0.0 {
        let mut u = Matrix::zeros(a.rows, 1);
        let mut vt = Matrix::zeros(1, a.cols);
        u.data[0] = 1.0;
        vt.data[0] = 1.0;
        return Ok(Svd {
            u,
            s: vec![0.0],
            vt,
        });
    }
    let mut rng = Rng::new(0x5eed_0000 ^ ((a.rows as u64) << 32) ^ a.cols as u64);
    let mut k = initial_rank.max(4);
    loop {
        if 2 * k >= small {
            return svd(a);
        }
        let omega = gaussian_fill(&mut rng, a.cols, k, 1.0)?;
        let y = matmul(a, &omega)?;
        let q = orthonormal_columns(&y);
        let qt = q.transpose();
        let b = matmul(&qt, a)?;
        let resid = {
            let qb = matmul(&q, &b)?;
            let mut r = a.clone();
            r.data.iter_mut().zip(&qb.data).for_each(|(x, y)| *x -= y);
            r.frobenius_norm()
        };
        if resid <= 1e-12 * anorm {
            let inner = svd(&b)?;
            let keep = inner.s.iter().take_while(|&&s| s > 0.0).count().max(1);
            let mut inner = inner;
            inner.truncate(keep);
            let u = matmul(&q, &inner.u)?;
            return Ok(Svd {
                u,
                s: inner.s,
                vt: inner.vt,
            });
        }
        k *= 2;
    }
}

/// Modified Gram-Schmidt (applied twice); columns that vanish are dropped.
fn orthonormal_columns(y: &Matrix) -> Matrix {
    let (m, n) = (y.rows, y.cols);
    let scale = y.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut c: Vec<f64> = (0..m).map(|i| y.data[i * n + j]).collect();
        let orig = norm2(&c);
        for _ in 0..2 {
            for q in &cols {
                let p = dot(&c, q);
                c.iter_mut().zip(q).for_each(|(x, qv)| *x -= p * qv);
            }
        }
        let nrm = norm2(&c);
        if nrm > 1e-10 * orig.max(1e-300) && nrm > 1e-14 * scale {
            c.iter_mut().for_each(|x| *x /= nrm);
            cols.push(c);
        }
    }
    let k = cols.len();
    let mut q = Matrix::zeros(m, k);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            q.data[i * k + j] = c[i];
        }
    }
    q
}

/// Seeded random source. Identical seeds give identical streams on every
/// platform (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for worker `index`, derived from the run seed.
    pub fn fork(&self, index: u64) -> Rng {
        Rng::new(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
                ^ 0x94D0_49BB_1331_11EB,
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn gaussian_fill(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Result<Matrix> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(PtnError::Argument(format!(
            "std must be positive, got {std}"
        )));
    }
    let data = (0..rows * cols).map(|_| std * rng.gaussian()).collect();
    Ok(Matrix { rows, cols, data })
}

/// Numerically stable `log Σ exp(x_i)`; returns `-inf` for an empty or
/// all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
