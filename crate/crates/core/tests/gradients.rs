//! Gradient exactness: finite differences, a forward-mode derivative through
//! the complete scaled contraction (scale factors included), and
//! stationarity at a fitted optimum.

mod common;

use std::ops::{Add, Div, Mul, Sub};

use common::{random_model, random_rows};
use ptn_core::training::{grad_check, grad_nll, sgd_step, OptimizerState};
use ptn_core::{Core, MpsModel, PositivityMode, Rng, TrainConfig};

/// Central differences carry an `h²·f‴/6` truncation term. Under σ_sq a
/// parameter close to zero sits next to the pole of `log g²`, where that term
/// alone can exceed the tolerance; such a coordinate must then show the
/// `O(h²)` signature (error drops ~100× when `h` drops 10×).
#[test]
fn finite_differences_on_fifty_models() {
    let mut strict_failures = Vec::new();
    for k in 0..50u64 {
        let mode = PositivityMode::ALL[k as usize % PositivityMode::ALL.len()];
        let n = 2 + (k as usize % 5);
        let m = random_model(
            mode,
            n,
            2 + (k as usize % 2),
            1 + (k as usize % 3),
            1000 + k,
        );
        let batch = random_rows(&m.dims(), 6, k);
        let report = grad_check(&m, &batch, 1e-5).unwrap();
        if report.max_rel_err > 1e-5 {
            let finer = grad_check(&m, &batch, 1e-6).unwrap();
            assert!(
                finer.max_rel_err <= 1e-5 && report.max_rel_err / finer.max_rel_err > 50.0,
                "model {k} ({mode:?}): {} at {:?}, {} at h=1e-6",
                report.max_rel_err,
                report.worst,
                finer.max_rel_err
            );
            strict_failures.push(k);
        }
    }
    assert!(strict_failures.len() <= 2, "{strict_failures:?}");
}

#[test]
fn finite_differences_n6_r3() {
    for mode in PositivityMode::ALL {
        let m = random_model(mode, 6, 2, 3, 77);
        let batch = random_rows(&m.dims(), 8, 5);
        assert!(
            grad_check(&m, &batch, 1e-5).unwrap().max_rel_err <= 1e-5,
            "{mode:?}"
        );
    }
}

/// First-order dual number.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl Dual {
    fn c(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn ln(self) -> Self {
        Self {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Self {
            v: e,
            d: self.d * e,
        }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self {
            v: s,
            d: self.d / (2.0 * s),
        }
    }
    fn abs(self) -> Self {
        if self.v < 0.0 {
            Self {
                v: -self.v,
                d: -self.d,
            }
        } else {
            self
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

fn activate(mode: PositivityMode, x: Dual) -> Dual {
    match mode {
        PositivityMode::Born => x,
        PositivityMode::SigmaExp => x.exp(),
        PositivityMode::SigmaAbs => x.abs(),
        PositivityMode::SigmaSq => x * x,
        PositivityMode::SigmaSoftplus => (x.exp() + Dual::c(1.0)).ln(),
        PositivityMode::SigmaSigmoid => Dual::c(1.0) / (Dual::c(1.0) + (Dual::c(0.0) - x).exp()),
    }
}

/// Core entries lifted to duals, seeding direction 1 at `seed`.
type DualCore = (usize, usize, usize, Vec<Dual>);

fn lift(model: &MpsModel, seed: Option<(usize, usize)>) -> Vec<DualCore> {
    model
        .cores()
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let (l, d, r) = c.shape();
            let data = c
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| Dual {
                    v,
                    d: if seed == Some((n, k)) { 1.0 } else { 0.0 },
                })
                .collect();
            (l, d, r, data)
        })
        .collect()
}

fn l2_normalize(v: &mut [Dual]) -> Dual {
    let ss = v.iter().fold(Dual::c(0.0), |acc, x| acc + *x * *x);
    let g = ss.sqrt();
    for x in v.iter_mut() {
        *x = *x / g;
    }
    g.ln()
}

/// `log p(y)` with every scale factor kept inside the derivative.
fn full_graph_log_p(cores: &[DualCore], mode: PositivityMode, y: &[usize]) -> Dual {
    // Numerator: left-to-right row vector through the selected slices.
    let mut v = vec![Dual::c(1.0)];
    let mut log_num = Dual::c(0.0);
    for (n, (l, _, r, data)) in cores.iter().enumerate() {
        let d = cores[n].1;
        let mut w = vec![Dual::c(0.0); *r];
        for i in 0..*l {
            for (j, wj) in w.iter_mut().enumerate() {
                let g = activate(mode, data[(i * d + y[n]) * r + j]);
                *wj = *wj + v[i] * g;
            }
        }
        log_num = log_num + l2_normalize(&mut w);
        v = w;
    }
    let log_num = if mode.is_born() {
        // Ψ = ±exp(log_num); mass = Ψ².
        Dual::c(2.0) * log_num
    } else {
        log_num + v[0].ln()
    };

    // Normalizer.
    let log_z = if mode.is_born() {
        let mut e = vec![Dual::c(1.0)];
        let mut acc = Dual::c(0.0);
        let mut rank = 1;
        for (l, d, r, data) in cores {
            let mut next = vec![Dual::c(0.0); r * r];
            for s in 0..*d {
                for a in 0..*l {
                    for b in 0..*l {
                        let eab = e[a * rank + b];
                        for i in 0..*r {
                            let ga = data[(a * d + s) * r + i];
                            for j in 0..*r {
                                let gb = data[(b * d + s) * r + j];
                                next[i * r + j] = next[i * r + j] + eab * ga * gb;
                            }
                        }
                    }
                }
            }
            acc = acc + l2_normalize(&mut next);
            e = next;
            rank = *r;
        }
        acc + e[0].ln()
    } else {
        let mut v = vec![Dual::c(1.0)];
        let mut acc = Dual::c(0.0);
        for (l, d, r, data) in cores {
            let mut w = vec![Dual::c(0.0); *r];
            for i in 0..*l {
                for s in 0..*d {
                    for (j, wj) in w.iter_mut().enumerate() {
                        *wj = *wj + v[i] * activate(mode, data[(i * d + s) * r + j]);
                    }
                }
            }
            acc = acc + l2_normalize(&mut w);
            v = w;
        }
        acc + v[0].ln()
    };
    log_num - log_z
}

#[test]
fn detached_scale_gradient_equals_full_graph_gradient() {
    for (k, mode) in PositivityMode::ALL.iter().enumerate() {
        for n in [1usize, 3, 6] {
            let m = random_model(*mode, n, 2, 3, 40 + k as u64 * 7 + n as u64);
            let batch = random_rows(&m.dims(), 5, k as u64);
            let (loss, grads) = grad_nll(&m, &batch).unwrap();

            let plain = lift(&m, None);
            let mean_nll = batch
                .iter()
                .map(|y| -full_graph_log_p(&plain, *mode, y).v)
                .sum::<f64>()
                / batch.len() as f64;
            assert!((loss - mean_nll).abs() <= 1e-9 * mean_nll.abs().max(1.0));

            for (c, core) in m.cores().iter().enumerate() {
                for idx in 0..core.data().len() {
                    let lifted = lift(&m, Some((c, idx)));
                    let full = -batch
                        .iter()
                        .map(|y| full_graph_log_p(&lifted, *mode, y).d)
                        .sum::<f64>()
                        / batch.len() as f64;
                    let detached = grads.cores()[c].data()[idx];
                    assert!(
                        (full - detached).abs() <= 1e-9 * full.abs().max(1.0),
                        "{mode:?} N={n} core {c} entry {idx}: {detached} vs {full}"
                    );
                }
            }
        }
    }
}

#[test]
fn softmax_closed_form() {
    let g = [0.3, -1.2];
    let core = Core::from_vec(1, 2, 1, g.to_vec()).unwrap();
    let m = MpsModel::new(vec![core], PositivityMode::SigmaExp).unwrap();
    for y in 0..2 {
        let (_, grads) = grad_nll(&m, &[vec![y]]).unwrap();
        let z = g[0].exp() + g[1].exp();
        for k in 0..2 {
            let want = g[k].exp() / z - if k == y { 1.0 } else { 0.0 };
            assert!((grads.cores()[0].data()[k] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn gradient_vanishes_at_fitted_optimum() {
    // Empirical joint over two ternary variables; a rank-3 model represents
    // any such table exactly, so the MLE matches it and ∇ℓ = 0 there.
    let counts = [[9usize, 1, 4], [2, 7, 3], [5, 2, 6]];
    let mut rows = Vec::new();
    for (a, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            rows.extend(std::iter::repeat_n(vec![a, b], c));
        }
    }
    let mut rng = Rng::new(11);
    let mut m = MpsModel::random(&[3, 3], 3, PositivityMode::SigmaExp, 0.5, &mut rng).unwrap();
    let mut cfg = TrainConfig {
        learning_rate: 0.05,
        optimizer: ptn_core::OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let mut state = OptimizerState::new();
    for _ in 0..6000 {
        let (_, g) = grad_nll(&m, &rows).unwrap();
        sgd_step(&mut m, &g, &cfg, &mut state).unwrap();
    }
    // Plain full-batch gradient descent polishes to stationarity.
    cfg.optimizer = ptn_core::OptimizerKind::Sgd;
    cfg.learning_rate = 0.5;
    let mut state = OptimizerState::new();
    let mut norm = f64::INFINITY;
    for _ in 0..20_000 {
        let (_, g) = grad_nll(&m, &rows).unwrap();
        norm = g.l2_norm();
        if norm <= 1e-7 {
            break;
        }
        sgd_step(&mut m, &g, &cfg, &mut state).unwrap();
    }
    assert!(norm <= 1e-6, "gradient norm {norm}");

    let joint = ptn_core::enumerate(&m).unwrap();
    let total = rows.len() as f64;
    for (a, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            assert!((joint.prob(&[a, b]) - c as f64 / total).abs() < 1e-5);
        }
    }
}

#[test]
fn zero_step_size_rejected_and_h_checked() {
    let m = random_model(PositivityMode::Born, 3, 2, 2, 0);
    let batch = random_rows(&m.dims(), 2, 0);
    assert!(grad_check(&m, &batch, 0.0).is_err());
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
}
