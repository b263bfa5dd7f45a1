use nalgebra::DMatrix;

use super::{
    param_step, training_error, Batcher, EpochRecord, Mode, Predictor, Prepared, TrainEvent, TrainedModel,
    PARAM_STREAM,
};
use crate::datagen::stream;
use crate::error::{PnnError, Result};
use crate::glasso::{project_feasible, solve_step1_observed, GlassoProblem};
use crate::linalg::{soft_threshold_offdiag, sym_eig, SymMatrix};
use crate::optim::AdamMoments;
use crate::pnn::{grad_shift, PnnConfig, PnnParams};
use crate::stats::{default_spectral_bound, sample_precision, Dataset};

use super::JointConfig;

/// Iterates of the alternating scheme.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub theta: SymMatrix,
    pub theta_tilde: SymMatrix,
    pub params: PnnParams,
    pub adam: AdamMoments,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Starting point shared by the precision-learning variants: the inverse
/// sample covariance mapped into the constraint set.
fn initial_precision(p: &Prepared, cfg: &JointConfig) -> Result<(SymMatrix, f64)> {
    let m_bound = default_spectral_bound(&p.c, cfg.m_overshoot)?;
    let theta = project_feasible(&sample_precision(&p.c, cfg.ridge)?, m_bound)?;
    Ok((theta, m_bound))
}

fn initial_params(pnn: &PnnConfig, n: usize, cfg: &JointConfig) -> Result<PnnParams> {
    PnnParams::init(pnn, n, &mut stream(cfg.seed, PARAM_STREAM))
}

pub fn train_joint(d: &Dataset, cfg: &JointConfig, pnn: &PnnConfig) -> Result<TrainedModel> {
    train_joint_observed(d, cfg, pnn, |_| {})
}

/// Alternates, for each epoch, `inner_theta` proximal steps on the
/// precision, `inner_tilde` gradient steps on the auxiliary shift and
/// `inner_h` Adam steps on the network, which runs on the auxiliary shift.
pub fn train_joint_observed(
    d: &Dataset,
    cfg: &JointConfig,
    pnn: &PnnConfig,
    mut observe: impl FnMut(&TrainEvent<'_>),
) -> Result<TrainedModel> {
    let prep = Prepared::new(d, cfg)?;
    let (theta, m_bound) = initial_precision(&prep, cfg)?;
    let lambda = GlassoProblem::scaled_lambda(cfg.lambda0, prep.n(), prep.t());
    let params = initial_params(pnn, prep.n(), cfg)?;
    let mut state = TrainState {
        theta_tilde: theta.clone(),
        theta,
        adam: AdamMoments::new(params.len()),
        params,
        epoch: 0,
        history: Vec::with_capacity(cfg.epochs),
    };
    let mut batcher = Batcher::new(cfg, prep.t());
    let step = cfg.tethered_step();

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let problem = GlassoProblem {
            c: prep.c.clone(),
            lambda,
            eps: cfg.eps,
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            tether: state.theta_tilde.clone(),
            m_bound,
        };
        let sol = solve_step1_observed(&problem, &state.theta, step, cfg.inner_theta, |iterate| {
            observe(&TrainEvent::Step1 { epoch, iterate })
        })
        .map_err(training_error(epoch, "precision step"))?;
        state.theta = sol.theta;

        let mut step2 = 0.0;
        for _ in 0..cfg.inner_tilde {
            let (xb, yb) = batcher.draw(&prep.x, &prep.y);
            let (obj, g) = grad_shift(
                pnn,
                &state.params,
                &state.theta_tilde,
                &xb,
                &yb,
                &state.theta,
                cfg.gamma,
                cfg.alpha,
            )
            .map_err(training_error(epoch, "shift step"))?;
            let next = state.theta_tilde.sub(&g.scaled(step));
            if !obj.is_finite() || !next.is_finite() {
                return Err(training_error(epoch, "shift step")(PnnError::Divergence {
                    iteration: 0,
                    value: obj,
                }));
            }
            state.theta_tilde = next;
            step2 = obj;
        }

        let mut loss = 0.0;
        for _ in 0..cfg.inner_h {
            let (xb, yb) = batcher.draw(&prep.x, &prep.y);
            loss = param_step(
                pnn,
                &mut state.params,
                &mut state.adam,
                &state.theta_tilde,
                &xb,
                &yb,
                cfg.alpha,
                cfg,
            )
            .map_err(training_error(epoch, "parameter step"))?;
        }

        let record = EpochRecord {
            epoch,
            step1_objective: sol.objective_trace.last().copied(),
            step2_objective: Some(step2),
            task_loss: loss,
            gap: Some(state.theta.sub(&state.theta_tilde).as_matrix().norm()),
        };
        observe(&TrainEvent::Epoch(&record));
        state.history.push(record);
    }

    let TrainState {
        theta,
        theta_tilde,
        params,
        history,
        ..
    } = state;
    Ok(prep.finish(
        Mode::Joint,
        Predictor::Graph {
            shift: theta_tilde.clone(),
            params,
        },
        Some(theta),
        Some(theta_tilde),
        pnn,
        cfg,
        history,
    ))
}

/// `sign(a_ij)` off the diagonal, zero on it and at zero.
fn offdiag_sign(a: &SymMatrix) -> SymMatrix {
    let n = a.n();
    SymMatrix::symmetrized(DMatrix::from_fn(n, n, |i, j| {
        let v = a.get(i, j);
        if i == j || v == 0.0 {
            0.0
        } else {
            v.signum()
        }
    }))
}

/// Optimizes `alpha * task + (1 - alpha) * graphical lasso` over one shared
/// precision by projected subgradient steps, alternating with Adam on the
/// network, and soft-thresholds the final precision once.
pub fn train_naive(d: &Dataset, cfg: &JointConfig, pnn: &PnnConfig) -> Result<TrainedModel> {
    let prep = Prepared::new(d, cfg)?;
    let (mut theta, m_bound) = initial_precision(&prep, cfg)?;
    let lambda = GlassoProblem::scaled_lambda(cfg.lambda0, prep.n(), prep.t());
    let mut params = initial_params(pnn, prep.n(), cfg)?;
    let mut adam = AdamMoments::new(params.len());
    let mut batcher = Batcher::new(cfg, prep.t());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for iteration in 0..cfg.inner_theta {
            let (xb, yb) = batcher.draw(&prep.x, &prep.y);
            let (_, task) = grad_shift(pnn, &params, &theta, &xb, &yb, &theta, 0.0, cfg.alpha)
                .map_err(training_error(epoch, "precision step"))?;
            let eig = sym_eig(&theta).map_err(training_error(epoch, "precision step"))?;
            let inv = eig.map(|w| 1.0 / (w + cfg.eps));
            let gl = prep.c.sub(&inv).add(&offdiag_sign(&theta).scaled(lambda));
            let stepped = theta.sub(&task.add(&gl.scaled(1.0 - cfg.alpha)).scaled(cfg.eta));
            if !stepped.is_finite() {
                return Err(training_error(epoch, "precision step")(PnnError::Divergence {
                    iteration,
                    value: f64::NAN,
                }));
            }
            theta = project_feasible(&stepped, m_bound).map_err(training_error(epoch, "precision step"))?;
        }

        let mut loss = 0.0;
        for _ in 0..cfg.inner_h {
            let (xb, yb) = batcher.draw(&prep.x, &prep.y);
            loss = param_step(pnn, &mut params, &mut adam, &theta, &xb, &yb, cfg.alpha, cfg)
                .map_err(training_error(epoch, "parameter step"))?;
        }
        history.push(EpochRecord {
            epoch,
            step1_objective: None,
            step2_objective: None,
            task_loss: loss,
            gap: None,
        });
    }

    let theta = soft_threshold_offdiag(&theta, cfg.eta * (1.0 - cfg.alpha) * lambda)?;
    Ok(prep.finish(
        Mode::Naive,
        Predictor::Graph {
            shift: theta.clone(),
            params,
        },
        Some(theta),
        None,
        pnn,
        cfg,
        history,
    ))
}
