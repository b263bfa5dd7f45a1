//! Independent reference computations for the test suites.
//!
//! Nothing here calls back into the code paths under test except to read
//! parameters: the network oracle forms dense matrix powers and loops over
//! samples, and the graphical-lasso oracle solves the dual problem with a
//! Cholesky-based projected gradient ascent.
#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use pnn_core::pnn::{grad_params, grad_shift, Activation, PnnConfig, PnnParams, Pooling, ReadoutConfig};
use pnn_core::SymMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(n: usize, scale: f64, rng: &mut impl Rng) -> SymMatrix {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::new((&m + m.transpose()) * (0.5 * scale)).unwrap()
}

pub fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => {
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
        Activation::Identity => v,
        Activation::Tanh => v.tanh(),
    }
}

/// Training-mode forward pass with dense `theta^k` and per-entry loops.
pub fn dense_forward(cfg: &PnnConfig, params: &PnnParams, theta: &SymMatrix, x: &DMatrix<f64>) -> Vec<f64> {
    let n = theta.n();
    let t = x.ncols();
    let th = theta.as_matrix();
    let mut powers = vec![DMatrix::<f64>::identity(n, n)];
    for k in 1..=cfg.filter_order {
        let next = th * &powers[k - 1];
        powers.push(next);
    }

    let mut feats: Vec<DMatrix<f64>> = vec![x.clone()];
    for (l, p) in params.layers.iter().enumerate() {
        let mut next = Vec::new();
        for f in 0..p.f_out {
            let mut u = DMatrix::<f64>::zeros(n, t);
            for (j, xj) in feats.iter().enumerate() {
                let mut h = DMatrix::<f64>::zeros(n, n);
                for k in 0..=p.order {
                    h += &powers[k] * p.coeffs[(k * p.f_in + j) * p.f_out + f];
                }
                u += h * xj;
            }
            if cfg.batch_norm {
                let m = (n * t) as f64;
                let mut mean = 0.0;
                for v in u.iter() {
                    mean += v;
                }
                mean /= m;
                let mut var = 0.0;
                for v in u.iter() {
                    var += (v - mean) * (v - mean);
                }
                var /= m;
                let sd = var.max(1e-5).sqrt();
                u = u.map(|v| p.bn_scale[f] * (v - mean) / sd + p.bn_shift[f]);
            }
            next.push(u.map(|v| act(cfg.activation, v)));
        }
        feats = next;
        let _ = l;
    }

    (0..t)
        .map(|s| {
            let mut h: Vec<f64> = match cfg.readout.pooling {
                Pooling::Flatten => feats
                    .iter()
                    .flat_map(|fm| (0..n).map(move |i| fm[(i, s)]))
                    .collect(),
                Pooling::MeanNodes => feats
                    .iter()
                    .map(|fm| (0..n).map(|i| fm[(i, s)]).sum::<f64>() / n as f64)
                    .collect(),
            };
            let last = params.readout.layers.len() - 1;
            for (li, d) in params.readout.layers.iter().enumerate() {
                let mut out = vec![0.0; d.rows];
                for r in 0..d.rows {
                    let mut acc = d.bias[r];
                    for c in 0..d.cols {
                        acc += d.weight[c * d.rows + r] * h[c];
                    }
                    out[r] = if li == last { acc } else { act(cfg.activation, acc) };
                }
                h = out;
            }
            h[0]
        })
        .collect()
}

fn mse(y: &DVector<f64>, yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// A randomized network configuration with parameters and data.
pub struct GradCase {
    pub cfg: PnnConfig,
    pub params: PnnParams,
    pub theta: SymMatrix,
    pub anchor: SymMatrix,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn grad_case(layers: usize, k: usize, batch_norm: bool, seed: u64) -> GradCase {
    let mut r = rng(seed);
    let n = r.random_range(3..6);
    let t = r.random_range(4..8);
    let widths: Vec<usize> = (0..layers).map(|_| r.random_range(1..4)).collect();
    let activation = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
    let pooling = if seed % 3 == 0 { Pooling::MeanNodes } else { Pooling::Flatten };
    let cfg = PnnConfig {
        filter_order: k,
        widths,
        activation,
        batch_norm,
        readout: ReadoutConfig {
            pooling,
            hidden: vec![r.random_range(2..5)],
        },
    };
    let mut params = PnnParams::init(&cfg, n, &mut r).unwrap();
    // Move batch-norm affine parameters away from their trivial start, and
    // the zero readout biases off the ReLU kink that dead inputs sit on.
    for l in &mut params.layers {
        for v in l.bn_scale.iter_mut().chain(l.bn_shift.iter_mut()) {
            *v += r.random_range(-0.3..0.3);
        }
    }
    for d in &mut params.readout.layers {
        for b in &mut d.bias {
            *b += r.random_range(-0.3..0.3);
        }
    }
    let theta = random_sym(n, 0.6, &mut r);
    let anchor = random_sym(n, 0.6, &mut r);
    let x = random_matrix(n, t, &mut r);
    let y = DVector::from_fn(t, |_, _| r.random_range(-1.0..1.0));
    GradCase {
        cfg,
        params,
        theta,
        anchor,
        x,
        y,
    }
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4)
}

const FD_STEP: f64 = 1e-5;

/// Largest relative error between `grad_params` and central differences of
/// `alpha * mse + beta * ||h||^2` over `coords` random coordinates.
pub fn fd_params_error(c: &GradCase, alpha: f64, beta: f64, coords: usize, seed: u64) -> f64 {
    let g = grad_params(&c.cfg, &c.params, &c.theta, &c.x, &c.y, alpha, beta).unwrap();
    let analytic = g.grads.flatten();
    let base = c.params.flatten();
    let objective = |flat: &[f64]| {
        let p = PnnParams::unflatten(&c.params, flat).unwrap();
        let coeff_sq: f64 = p.layers.iter().flat_map(|l| l.coeffs.iter()).map(|v| v * v).sum();
        alpha * mse(&c.y, &dense_forward(&c.cfg, &p, &c.theta, &c.x)) + beta * coeff_sq
    };
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = r.random_range(0..base.len());
        let mut plus = base.clone();
        plus[i] += FD_STEP;
        let mut minus = base.clone();
        minus[i] -= FD_STEP;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, analytic[i]));
    }
    worst
}

/// Largest relative error between `grad_shift` and central differences of
/// the shift objective under symmetric perturbations.
pub fn fd_shift_error(c: &GradCase, gamma: f64, alpha: f64, coords: usize, seed: u64) -> f64 {
    let (_, g) = grad_shift(&c.cfg, &c.params, &c.theta, &c.x, &c.y, &c.anchor, gamma, alpha).unwrap();
    let objective = |th: &SymMatrix| {
        let d = c.anchor.sub(th).as_matrix().norm_squared();
        alpha * mse(&c.y, &dense_forward(&c.cfg, &c.params, th, &c.x)) + 0.5 * gamma * d
    };
    let n = c.theta.n();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = r.random_range(0..n);
        let j = r.random_range(0..n);
        let mut e = DMatrix::zeros(n, n);
        e[(i, j)] = FD_STEP;
        e[(j, i)] = FD_STEP;
        let e = SymMatrix::new(e).unwrap();
        let fd = (objective(&c.theta.add(&e)) - objective(&c.theta.sub(&e))) / (2.0 * FD_STEP);
        let analytic = if i == j { g.get(i, i) } else { 2.0 * g.get(i, j) };
        worst = worst.max(rel_err(fd, analytic));
    }
    worst
}

/// Optimal value of
/// `min_T tr(C T) - logdet(T + eps I) + lambda ||offdiag(T)||_1`
/// through its dual
/// `max { logdet W : W_ii = C_ii, |W_ij - C_ij| <= lambda } + n - eps tr(C)`,
/// solved by projected gradient ascent with backtracking.
///
/// Valid when the primal solution leaves the PSD and spectral-norm
/// constraints inactive.
pub fn glasso_dual_value(c: &SymMatrix, lambda: f64, eps: f64) -> f64 {
    let n = c.n();
    let cm = c.as_matrix().clone();
    let project = |w: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                cm[(i, i)]
            } else {
                let v = 0.5 * (w[(i, j)] + w[(j, i)]);
                v.clamp(cm[(i, j)] - lambda, cm[(i, j)] + lambda)
            }
        })
    };
    let logdet = |w: &DMatrix<f64>| -> Option<f64> {
        Cholesky::new(w.clone()).map(|ch| 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    };
    let mut w = cm.clone();
    let mut f = logdet(&w).expect("covariance must be positive definite");
    let mut step = 1.0;
    for _ in 0..200_000 {
        let grad = Cholesky::new(w.clone()).unwrap().inverse();
        let mut accepted = false;
        while step > 1e-14 {
            let cand = project(&(&w + &grad * step));
            if let Some(fc) = logdet(&cand) {
                let d = &cand - &w;
                // Sufficient-ascent condition for projected gradient.
                if fc >= f + grad.dot(&d) - d.norm_squared() / (2.0 * step) {
                    let gain = fc - f;
                    w = cand;
                    f = fc;
                    accepted = true;
                    step *= 1.5;
                    if gain.abs() < 1e-15 * f.abs().max(1.0) {
                        return f + n as f64 - eps * cm.trace();
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    f + n as f64 - eps * cm.trace()
}
