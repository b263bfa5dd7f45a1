//! Penalized graphical lasso and its proximal-gradient solver.
//!
//! The solver minimizes
//!
//! ```text
//! (1 - alpha) [tr(C T) - logdet(T + eps I) + lambda ||offdiag(T)||_1]
//!     + gamma / 2 ||T - tether||_F^2
//! subject to T >= 0, ||T||_2 <= M
//! ```
//!
//! Each iteration takes a gradient step on the smooth part, soft-thresholds
//! the off-diagonal entries, projects onto the PSD cone and finally rescales
//! onto the spectral-norm ball, in that order. With `gamma = alpha = 0` this
//! is the plain graphical lasso.

use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};
use crate::linalg::{
    clip_by, l1_offdiag, logdet_reg, psd_project_with, soft_threshold_offdiag, sym_eig, EigPair,
    SymMatrix,
};

/// Default log-determinant regularizer.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Default proximal step size.
pub const DEFAULT_ETA: f64 = 0.01;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlassoProblem {
    /// Sample covariance.
    pub c: SymMatrix,
    pub lambda: f64,
    pub eps: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Anchor of the Frobenius tether; ignored when `gamma == 0`.
    pub tether: SymMatrix,
    pub m_bound: f64,
}

impl GlassoProblem {
    /// Plain graphical lasso: no tether, no task weight.
    pub fn graphical_lasso(c: SymMatrix, lambda: f64, eps: f64, m_bound: f64) -> Result<Self> {
        let n = c.n();
        let p = GlassoProblem {
            c,
            lambda,
            eps,
            gamma: 0.0,
            alpha: 0.0,
            tether: SymMatrix::zeros(n),
            m_bound,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(PnnError::arg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eps > 0.0) {
            return Err(PnnError::arg(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.gamma >= 0.0) {
            return Err(PnnError::arg(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PnnError::arg(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.m_bound > 0.0) {
            return Err(PnnError::arg(format!("M must be > 0, got {}", self.m_bound)));
        }
        if self.tether.n() != self.c.n() {
            return Err(PnnError::dim(format!(
                "tether is {}x{}, covariance is {}x{}",
                self.tether.n(),
                self.tether.n(),
                self.c.n(),
                self.c.n()
            )));
        }
        Ok(())
    }

    /// `lambda0 * sqrt(log n / t)`.
    pub fn scaled_lambda(lambda0: f64, n: usize, t: usize) -> f64 {
        lambda0 * ((n as f64).ln() / t as f64).sqrt()
    }

    fn check_dim(&self, theta: &SymMatrix) -> Result<()> {
        if theta.n() != self.c.n() {
            return Err(PnnError::dim(format!(
                "theta is {}x{}, covariance is {}x{}",
                theta.n(),
                theta.n(),
                self.c.n(),
                self.c.n()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GlassoSolution {
    pub theta: SymMatrix,
    /// Penalized objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// `tr(C T) - logdet(T + eps I) + lambda ||offdiag(T)||_1`.
pub fn gl_objective(theta: &SymMatrix, p: &GlassoProblem) -> Result<f64> {
    p.check_dim(theta)?;
    Ok(p.c.trace_product(theta) - logdet_reg(theta, p.eps)? + p.lambda * l1_offdiag(theta))
}

/// `(1 - alpha) gl_objective + gamma / 2 ||T - tether||_F^2`.
pub fn penalized_objective(theta: &SymMatrix, p: &GlassoProblem) -> Result<f64> {
    Ok((1.0 - p.alpha) * gl_objective(theta, p)? + tether_term(theta, p))
}

fn tether_term(theta: &SymMatrix, p: &GlassoProblem) -> f64 {
    if p.gamma == 0.0 {
        0.0
    } else {
        0.5 * p.gamma * theta.sub(&p.tether).as_matrix().norm_squared()
    }
}

/// Gradient of the smooth part of [`penalized_objective`]:
/// `(1 - alpha) (C - (T + eps I)^{-1}) + gamma (T - tether)`.
pub fn smooth_gradient(theta: &SymMatrix, p: &GlassoProblem) -> Result<SymMatrix> {
    p.check_dim(theta)?;
    let eig = sym_eig(theta)?;
    let inv = shifted_inverse(&eig, p.eps)?;
    Ok(gradient_with_inverse(theta, &inv, p))
}

fn shifted_inverse(eig: &EigPair, eps: f64) -> Result<SymMatrix> {
    let value = eig.min() + eps;
    if !(value > 0.0) {
        return Err(PnnError::Domain { index: 0, value });
    }
    Ok(eig.map(|w| 1.0 / (w + eps)))
}

fn gradient_with_inverse(theta: &SymMatrix, inv: &SymMatrix, p: &GlassoProblem) -> SymMatrix {
    let mut g = p.c.sub(inv).scaled(1.0 - p.alpha);
    if p.gamma != 0.0 {
        g = g.add(&theta.sub(&p.tether).scaled(p.gamma));
    }
    g
}

/// Projects onto `{T >= 0, ||T||_2 <= M}` and returns the iterate along with
/// the eigen-pair of the result (for the next gradient).
fn project(a: &SymMatrix, m_bound: f64) -> Result<(SymMatrix, EigPair)> {
    let mut eig = sym_eig(a)?;
    let psd = psd_project_with(a, &eig);
    eig.values.apply(|w| *w = w.max(0.0));
    let norm = eig.max();
    let theta = clip_by(&psd, norm, m_bound);
    if norm > m_bound {
        let s = m_bound / norm;
        eig.values.apply(|w| *w *= s);
    }
    Ok((theta, eig))
}

/// Maps `a` into `{T >= 0, ||T||_2 <= M}` by PSD projection followed by
/// spectral rescaling, as in each solver iteration.
pub fn project_feasible(a: &SymMatrix, m_bound: f64) -> Result<SymMatrix> {
    if !(m_bound > 0.0) {
        return Err(PnnError::arg(format!("M must be > 0, got {m_bound}")));
    }
    Ok(project(a, m_bound)?.0)
}

/// Runs `iters` proximal-gradient iterations from `init`.
///
/// `init` is first mapped onto the constraint set; a feasible start is left
/// untouched.
pub fn solve_step1(
    p: &GlassoProblem,
    init: &SymMatrix,
    eta: f64,
    iters: usize,
) -> Result<GlassoSolution> {
    solve_step1_observed(p, init, eta, iters, |_| {})
}

/// One proximal iteration as seen by an observer.
#[derive(Clone, Copy, Debug)]
pub struct Step1Iterate<'a> {
    pub iteration: usize,
    /// Soft-thresholded matrix before the projections.
    pub thresholded: &'a SymMatrix,
    /// The new feasible iterate.
    pub theta: &'a SymMatrix,
}

/// [`solve_step1`] that hands every iterate to `observe`.
pub fn solve_step1_observed(
    p: &GlassoProblem,
    init: &SymMatrix,
    eta: f64,
    iters: usize,
    mut observe: impl FnMut(Step1Iterate<'_>),
) -> Result<GlassoSolution> {
    p.validate()?;
    p.check_dim(init)?;
    if !(eta > 0.0) {
        return Err(PnnError::arg(format!("step size must be > 0, got {eta}")));
    }
    if iters == 0 {
        return Err(PnnError::arg("at least one iteration is required"));
    }
    let tau = eta * (1.0 - p.alpha) * p.lambda;

    let (mut theta, mut eig) = project(init, p.m_bound)?;
    let mut trace = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let inv = shifted_inverse(&eig, p.eps)?;
        let grad = gradient_with_inverse(&theta, &inv, p);
        let stepped = theta.sub(&grad.scaled(eta));
        if !stepped.is_finite() {
            return Err(PnnError::Divergence {
                iteration,
                value: f64::NAN,
            });
        }
        let thresholded = soft_threshold_offdiag(&stepped, tau)?;
        (theta, eig) = project(&thresholded, p.m_bound)?;
        observe(Step1Iterate {
            iteration,
            thresholded: &thresholded,
            theta: &theta,
        });

        let logdet: f64 = eig.values.iter().map(|w| (w + p.eps).ln()).sum();
        let gl = p.c.trace_product(&theta) - logdet + p.lambda * l1_offdiag(&theta);
        let value = (1.0 - p.alpha) * gl + tether_term(&theta, p);
        if !value.is_finite() {
            return Err(PnnError::Divergence { iteration, value });
        }
        trace.push(value);
    }
    Ok(GlassoSolution {
        theta,
        objective_trace: trace,
        iterations: iters,
    })
}
