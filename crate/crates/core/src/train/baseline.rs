use nalgebra::{DMatrix, DVector};

use super::{
    param_step, training_error, Batcher, EpochRecord, JointConfig, Mode, Predictor, Prepared, TrainedModel,
    PARAM_STREAM,
};
use crate::datagen::stream;
use crate::error::{PnnError, Result};
use crate::glasso::{project_feasible, solve_step1, GlassoProblem};
use crate::linalg::{sym_eig, SymMatrix};
use crate::optim::{adam_update, AdamMoments};
use crate::pnn::{Mlp, PnnConfig, PnnParams};
use crate::stats::{default_spectral_bound, sample_precision, Dataset};

/// Fixes the shift first (inverse sample covariance, graphical lasso or
/// sample covariance), then trains the network for `epochs * inner_h`
/// Adam steps.
pub fn train_twostage(d: &Dataset, mode: Mode, cfg: &JointConfig, pnn: &PnnConfig) -> Result<TrainedModel> {
    let prep = Prepared::new(d, cfg)?;
    let (shift, precision) = match mode {
        Mode::Sample => {
            let p = sample_precision(&prep.c, cfg.ridge)?;
            (p.clone(), Some(p))
        }
        Mode::Gl => {
            let m_bound = default_spectral_bound(&prep.c, cfg.m_overshoot)?;
            let lambda = GlassoProblem::scaled_lambda(cfg.lambda0, prep.n(), prep.t());
            let problem = GlassoProblem::graphical_lasso(prep.c.clone(), lambda, cfg.eps, m_bound)?;
            let init = project_feasible(&sample_precision(&prep.c, cfg.ridge)?, m_bound)?;
            let theta = solve_step1(&problem, &init, cfg.eta, cfg.gl_iters)?.theta;
            (theta.clone(), Some(theta))
        }
        Mode::Vnn => (prep.c.clone(), None),
        other => {
            return Err(PnnError::arg(format!("'{other}' is not a two-stage mode")));
        }
    };

    let mut params = PnnParams::init(pnn, prep.n(), &mut stream(cfg.seed, PARAM_STREAM))?;
    let mut adam = AdamMoments::new(params.len());
    let mut batcher = Batcher::new(cfg, prep.t());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        for _ in 0..cfg.inner_h {
            let (xb, yb) = batcher.draw(&prep.x, &prep.y);
            loss = param_step(pnn, &mut params, &mut adam, &shift, &xb, &yb, 1.0, cfg)
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
    Ok(prep.finish(
        mode,
        Predictor::Graph { shift, params },
        precision,
        None,
        pnn,
        cfg,
        history,
    ))
}

/// Fewest leading components whose eigenvalues explain `share` of the trace.
pub fn components_for_share(c: &SymMatrix, share: f64) -> Result<usize> {
    let eig = sym_eig(c)?;
    let values: Vec<f64> = eig.values.iter().rev().map(|w| w.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Ok(1);
    }
    let mut acc = 0.0;
    for (i, w) in values.iter().enumerate() {
        acc += w;
        if acc >= share * total {
            return Ok(i + 1);
        }
    }
    Ok(values.len())
}

/// Projects each sample on the top `k` eigenvectors of the training
/// covariance and fits the readout MLP of `pnn` on the scores.
pub fn train_pca_baseline(d: &Dataset, k: usize, cfg: &JointConfig, pnn: &PnnConfig) -> Result<TrainedModel> {
    if k == 0 || k > d.n() {
        return Err(PnnError::arg(format!("component count must lie in 1..={}, got {k}", d.n())));
    }
    let prep = Prepared::new(d, cfg)?;
    let n = prep.n();
    let eig = sym_eig(&prep.c)?;
    let v = DMatrix::from_fn(n, k, |i, j| eig.vectors[(i, n - 1 - j)]);
    let scores = v.transpose() * &prep.x;

    let act = pnn.activation;
    let mut mlp = Mlp::init(k, &pnn.readout.hidden, &mut stream(cfg.seed, PARAM_STREAM));
    let mut adam = AdamMoments::new(mlp.len());
    let mut batcher = Batcher::new(cfg, prep.t());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss = 0.0;
        for _ in 0..cfg.inner_h {
            let (zb, yb) = batcher.draw(&scores, &prep.y);
            loss = mlp_step(&mut mlp, &mut adam, &zb, &yb, act, cfg).map_err(training_error(epoch, "parameter step"))?;
        }
        history.push(EpochRecord {
            epoch,
            step1_objective: None,
            step2_objective: None,
            task_loss: loss,
            gap: None,
        });
    }
    let predictor = Predictor::Pca {
        components: v.as_slice().to_vec(),
        k,
        mlp,
    };
    Ok(prep.finish(Mode::Pca, predictor, None, None, pnn, cfg, history))
}

fn mlp_step(
    mlp: &mut Mlp,
    adam: &mut AdamMoments,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    act: crate::pnn::Activation,
    cfg: &JointConfig,
) -> Result<f64> {
    let (out, tape) = mlp.forward(z, act)?;
    let t = y.len() as f64;
    let resid = DMatrix::from_fn(1, y.len(), |_, s| out[(0, s)] - y[s]);
    let loss = resid.norm_squared() / t;
    let mut grads = mlp.zeros_like();
    mlp.backward(&tape, resid * (2.0 / t), act, &mut grads);
    let mut flat = Vec::with_capacity(mlp.len());
    mlp.flatten_into(&mut flat);
    let mut gflat = Vec::with_capacity(mlp.len());
    grads.flatten_into(&mut gflat);
    let (next, moments) = adam_update(&flat, &gflat, adam, cfg.eta, &cfg.adam)?;
    mlp.assign_from(&mut next.into_iter())?;
    *adam = moments;
    Ok(loss)
}
