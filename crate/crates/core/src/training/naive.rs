//! The unstable baseline: loss and gradient from raw chain products.
//!
//! Every quantity here is the plain product of (activated) core slices with
//! no scale factors, so `Z`, `Ψ` and their partial products overflow or
//! underflow once the chain is long enough. It exists to measure where that
//! happens; any non-finite intermediate is reported as a numerical error.

use crate::error::{PtnError, Result};
use crate::model::MpsModel;
use crate::stable::{
    born_left_apply, born_right_apply, row_times_slice, slice_times_col, Prepared,
};
use crate::training::grad::GradientSet;

fn check(values: &[f64], what: &str, position: usize) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(PtnError::NonFinite(format!(
            "{what} at position {position} (raw contraction)"
        )))
    }
}

fn check_scalar(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(PtnError::NonFinite(format!(
            "{what} = {x} (raw contraction)"
        )))
    }
}

/// Mean NLL and gradient computed without scale factors.
pub fn naive_grad_nll<S: AsRef<[usize]> + Sync>(
    model: &MpsModel,
    batch: &[S],
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(PtnError::Argument("empty batch".into()));
    }
    for s in batch {
        model.check_assignment(s.as_ref())?;
    }
    let p = Prepared::new(model);
    let cores = &p.cores;
    let n = cores.len();
    let born = model.mode().is_born();
    let mut grad = GradientSet::zeros_like(model);

    // Normalizer environments, unscaled.
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    left.push(vec![1.0]);
    for (k, core) in cores.iter().enumerate() {
        let next = if born {
            born_left_apply(&left[k], core, None)
        } else {
            let mut w = vec![0.0; core.right()];
            let mut tmp = vec![0.0; core.right()];
            for y in 0..core.dim() {
                row_times_slice(&left[k], core, y, &mut tmp);
                w.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            }
            w
        };
        check(&next, "normalizer prefix", k)?;
        left.push(next);
    }
    let mut right: Vec<Vec<f64>> = vec![vec![1.0]; n + 1];
    for k in (0..n).rev() {
        let core = &cores[k];
        right[k] = if born {
            born_right_apply(&right[k + 1], core, None)
        } else {
            let mut w = vec![0.0; core.left()];
            let mut tmp = vec![0.0; core.left()];
            for y in 0..core.dim() {
                slice_times_col(core, y, &right[k + 1], &mut tmp);
                w.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            }
            w
        };
        check(&right[k], "normalizer suffix", k)?;
    }
    let z = check_scalar(left[n][0], "Z")?;

    for (k, (core, g)) in cores.iter().zip(grad.cores_mut()).enumerate() {
        let (l, d, r) = core.shape();
        for i in 0..l {
            for y in 0..d {
                for j in 0..r {
                    let v = if born {
                        // 2 (E G[y] F)_{ij}
                        let mut s = 0.0;
                        for b in 0..l {
                            for c in 0..r {
                                s += left[k][i * l + b]
                                    * core.get(b, y, c)
                                    * right[k + 1][c * r + j];
                            }
                        }
                        2.0 * s
                    } else {
                        left[k][i] * right[k + 1][j]
                    };
                    let idx = g.index(i, y, j);
                    g.data_mut()[idx] += v / z;
                }
            }
        }
        check(g.data(), "normalizer gradient", k)?;
    }

    let inv_k = 1.0 / batch.len() as f64;
    let mut sum_log_mass = 0.0;
    let maxr = model.max_rank();
    for ys in batch {
        let y = ys.as_ref();
        let mut lp: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        lp.push(vec![1.0]);
        for (k, core) in cores.iter().enumerate() {
            let mut w = vec![0.0; core.right()];
            row_times_slice(&lp[k], core, y[k], &mut w);
            check(&w, "amplitude prefix", k)?;
            lp.push(w);
        }
        let psi = lp[n][0];
        if !psi.is_finite() || psi == 0.0 {
            return Err(PtnError::NonFinite(format!("Ψ = {psi} (raw contraction)")));
        }
        let mass = if born { psi * psi } else { psi };
        sum_log_mass += check_scalar(mass, "Ψ mass")?.ln();
        let mult = if born { 2.0 } else { 1.0 };
        let mut rp = vec![1.0];
        let mut tmp = vec![0.0; maxr];
        for k in (0..n).rev() {
            let core = &cores[k];
            let g = &mut grad.cores_mut()[k];
            for (i, li) in lp[k].iter().enumerate() {
                for (j, rj) in rp.iter().enumerate() {
                    let idx = g.index(i, y[k], j);
                    g.data_mut()[idx] -= inv_k * mult * li * rj / psi;
                }
            }
            let out = &mut tmp[..core.left()];
            slice_times_col(core, y[k], &rp, out);
            check(out, "amplitude suffix", k)?;
            rp = out.to_vec();
        }
    }
    if !born {
        for (g, raw) in grad.cores_mut().iter_mut().zip(model.cores()) {
            for (gv, x) in g.data_mut().iter_mut().zip(raw.data()) {
                *gv *= model.mode().derivative(*x);
            }
        }
    }
    let loss = z.ln() - sum_log_mass * inv_k;
    if !loss.is_finite() {
        return Err(PtnError::NonFinite("loss (raw contraction)".into()));
    }
    if !grad.is_finite() {
        return Err(PtnError::NonFinite("gradient (raw contraction)".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;
    use crate::model::PositivityMode;
    use crate::training::grad::grad_nll;

    #[test]
    fn agrees_with_stable_gradient_on_short_chains() {
        let mut rng = Rng::new(12);
        for mode in PositivityMode::ALL {
            let m = MpsModel::random(&[2, 3, 2, 2], 3, mode, 0.7, &mut rng).unwrap();
            let batch: Vec<Vec<usize>> = (0..6)
                .map(|_| m.dims().iter().map(|&d| rng.below(d)).collect())
                .collect();
            let (la, ga) = naive_grad_nll(&m, &batch).unwrap();
            let (lb, gb) = grad_nll(&m, &batch).unwrap();
            assert!((la - lb).abs() < 1e-10, "{mode}");
            for (a, b) in ga.cores().iter().zip(gb.cores()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{mode}");
                }
            }
        }
    }

    #[test]
    fn long_exp_chain_overflows() {
        let mut rng = Rng::new(3);
        let m = MpsModel::random(&[2; 1000], 2, PositivityMode::SigmaExp, 1.0, &mut rng).unwrap();
        let y = vec![vec![0usize; 1000]];
        assert!(naive_grad_nll(&m, &y).unwrap_err().is_numerical());
        assert!(grad_nll(&m, &y).is_ok());
    }
}
