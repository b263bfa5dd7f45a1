//! Alternating joint estimation of the precision matrix and the network,
//! the naive single-variable variant, and the two-stage and PCA baselines.

mod baseline;
mod joint;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{components_for_share, train_pca_baseline, train_twostage};
pub use joint::{train_joint, train_joint_observed, train_naive, TrainState};

use crate::datagen::stream;
use crate::error::{PnnError, Result};
use crate::glasso::Step1Iterate;
use crate::linalg::SymMatrix;
use crate::optim::{adam_update, AdamConfig, AdamMoments};
use crate::pnn::{grad_params, pnn_forward, BnMode, Mlp, PnnConfig, PnnParams, DEFAULT_MOMENTUM};
use crate::stats::{sample_covariance, Dataset, FeatureScaler};

/// Tag written into every serialized model.
pub const MODEL_FORMAT: &str = "pnn-model-v1";

/// Estimator variants compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// PNN on the inverse sample covariance.
    Sample,
    /// PNN on a graphical-lasso estimate.
    Gl,
    /// Single shared precision optimized against the summed objective.
    Naive,
    /// Alternating estimation with a tethered auxiliary shift.
    Joint,
    /// Network on the sample covariance.
    Vnn,
    /// Principal-component projection followed by an MLP.
    Pca,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Sample, Mode::Gl, Mode::Naive, Mode::Joint, Mode::Vnn, Mode::Pca];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sample => "sample",
            Mode::Gl => "gl",
            Mode::Naive => "naive",
            Mode::Joint => "joint",
            Mode::Vnn => "vnn",
            Mode::Pca => "pca",
        }
    }

    /// Whether the model carries a precision estimate.
    pub fn estimates_precision(self) -> bool {
        matches!(self, Mode::Sample | Mode::Gl | Mode::Naive | Mode::Joint)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PnnError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PnnError::arg(format!("unknown mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    /// Weight of the task loss against the graphical-lasso term.
    pub alpha: f64,
    /// The sparsity weight is `lambda0 * sqrt(log n / t)`.
    pub lambda0: f64,
    /// Tether weight between the precision and the auxiliary shift.
    pub gamma: f64,
    /// Log-determinant regularizer.
    pub eps: f64,
    /// Step size of every update.
    pub eta: f64,
    /// Ridge penalty on the filter coefficients.
    pub beta: f64,
    /// The spectral cap is `m_overshoot / lambda_min(C)`.
    pub m_overshoot: f64,
    pub epochs: usize,
    pub inner_theta: usize,
    pub inner_tilde: usize,
    pub inner_h: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Diagonal loading used when inverting the sample covariance.
    pub ridge: f64,
    /// Proximal iterations of the graphical-lasso baseline.
    pub gl_iters: usize,
    /// Samples per update; the full training split when absent.
    pub batch_size: Option<usize>,
    /// Scale every feature to unit training variance (centering is always on).
    pub standardize: bool,
    /// Principal components kept by the PCA baseline; by default the fewest
    /// that explain 90% of the training variance.
    pub pca_components: Option<usize>,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            alpha: 0.5,
            lambda0: 1.0,
            gamma: 10.0,
            eps: crate::glasso::DEFAULT_EPS,
            eta: crate::glasso::DEFAULT_ETA,
            beta: 0.0,
            m_overshoot: 2.0,
            epochs: 10,
            inner_theta: 20,
            inner_tilde: 20,
            inner_h: 20,
            adam: AdamConfig::default(),
            seed: 0,
            ridge: 1e-4,
            gl_iters: 1000,
            batch_size: None,
            standardize: false,
            pca_components: None,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("eps", self.eps),
            ("eta", self.eta),
            ("m_overshoot", self.m_overshoot),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PnnError::arg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PnnError::arg(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) || !(self.beta >= 0.0) || !(self.ridge >= 0.0) {
            return Err(PnnError::arg("gamma, beta and ridge must be non-negative"));
        }
        let counts = [
            ("epochs", self.epochs),
            ("inner_theta", self.inner_theta),
            ("inner_tilde", self.inner_tilde),
            ("inner_h", self.inner_h),
            ("gl_iters", self.gl_iters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PnnError::arg(format!("{name} must be at least 1")));
            }
        }
        if self.batch_size.is_some_and(|b| b < 2) {
            return Err(PnnError::arg("batch size must be at least 2"));
        }
        self.adam.validate()
    }

    /// Step size for updates that include the tether. Plain gradient steps
    /// on `gamma / 2 ||.||^2` are unstable once `eta * gamma >= 1`, so the
    /// step shrinks to `1 / gamma` there.
    pub fn tethered_step(&self) -> f64 {
        if self.gamma > 0.0 {
            self.eta.min(1.0 / self.gamma)
        } else {
            self.eta
        }
    }
}

/// Summary of one training epoch. Fields a mode does not use stay empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Penalized graphical-lasso objective after Step 1.
    pub step1_objective: Option<f64>,
    /// Shift objective after Step 2.
    pub step2_objective: Option<f64>,
    /// Training task loss at the last parameter update (standardized targets).
    pub task_loss: f64,
    /// `||theta - theta_tilde||_F` at the end of the epoch.
    pub gap: Option<f64>,
}

/// Progress notifications from [`train_joint_observed`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step1 { epoch: usize, iterate: Step1Iterate<'a> },
    Epoch(&'a EpochRecord),
}

/// What maps (normalized) signals to predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Predictor {
    Graph {
        shift: SymMatrix,
        params: PnnParams,
    },
    Pca {
        /// `n x k` principal directions, column-major.
        components: Vec<f64>,
        k: usize,
        mlp: Mlp,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub mode: Mode,
    pub predictor: Predictor,
    /// Reported precision estimate (the constrained iterate for Joint).
    pub precision: Option<SymMatrix>,
    /// Auxiliary shift of the Joint variant.
    pub theta_tilde: Option<SymMatrix>,
    pub pnn: PnnConfig,
    pub config: JointConfig,
    pub scaler: FeatureScaler,
    pub target_mean: f64,
    pub target_scale: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn n(&self) -> usize {
        self.scaler.mean.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| PnnError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s).map_err(|e| PnnError::Format(e.to_string()))?;
        if m.format != MODEL_FORMAT {
            return Err(PnnError::Format(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| PnnError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Share of training variance the default PCA baseline keeps.
pub const PCA_VARIANCE_SHARE: f64 = 0.9;

/// Trains the estimator named by `mode`.
pub fn train(mode: Mode, d: &Dataset, cfg: &JointConfig, pnn: &PnnConfig) -> Result<TrainedModel> {
    match mode {
        Mode::Joint => train_joint(d, cfg, pnn),
        Mode::Naive => train_naive(d, cfg, pnn),
        Mode::Sample | Mode::Gl | Mode::Vnn => train_twostage(d, mode, cfg, pnn),
        Mode::Pca => {
            let k = match cfg.pca_components {
                Some(k) => k,
                None => components_for_share(&Prepared::new(d, cfg)?.c, PCA_VARIANCE_SHARE)?,
            };
            train_pca_baseline(d, k, cfg, pnn)
        }
    }
}

/// Evaluation-mode predictions for the columns of `x` in original units.
pub fn predict(m: &TrainedModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let z = m.scaler.apply(x)?;
    let raw = match &m.predictor {
        Predictor::Graph { shift, params } => pnn_forward(&m.pnn, params, shift, &z, BnMode::Eval)?.0,
        Predictor::Pca { components, k, mlp } => {
            let v = DMatrix::from_column_slice(m.n(), *k, components);
            let (out, _) = mlp.forward(&(v.transpose() * z), m.pnn.activation)?;
            DVector::from_iterator(out.len(), out.iter().copied())
        }
    };
    Ok(raw.map(|v| v * m.target_scale + m.target_mean))
}

/// Training split after normalization, with its covariance.
pub(crate) struct Prepared {
    pub scaler: FeatureScaler,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    pub c: SymMatrix,
}

impl Prepared {
    pub fn new(d: &Dataset, cfg: &JointConfig) -> Result<Self> {
        cfg.validate()?;
        if d.n() < 2 || d.t() < 2 {
            return Err(PnnError::arg(format!(
                "training needs n, t >= 2, got n = {}, t = {}",
                d.n(),
                d.t()
            )));
        }
        let scaler = FeatureScaler::fit(&d.x, cfg.standardize);
        let centered = scaler.apply_dataset(d)?;
        let c = sample_covariance(&centered)?;
        let t = d.t() as f64;
        let y_mean = d.y.sum() / t;
        let var = d.y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / t;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Prepared {
            scaler,
            y: d.y.map(|v| (v - y_mean) / y_scale),
            x: centered.x,
            y_mean,
            y_scale,
            c,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn t(&self) -> usize {
        self.x.ncols()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        self,
        mode: Mode,
        predictor: Predictor,
        precision: Option<SymMatrix>,
        theta_tilde: Option<SymMatrix>,
        pnn: &PnnConfig,
        cfg: &JointConfig,
        history: Vec<EpochRecord>,
    ) -> TrainedModel {
        TrainedModel {
            format: MODEL_FORMAT.to_string(),
            mode,
            predictor,
            precision,
            theta_tilde,
            pnn: pnn.clone(),
            config: cfg.clone(),
            scaler: self.scaler,
            target_mean: self.y_mean,
            target_scale: self.y_scale,
            history,
        }
    }
}

/// Random stream ids derived from the training seed.
pub(crate) const PARAM_STREAM: u64 = 10;
pub(crate) const BATCH_STREAM: u64 = 11;

/// Draws the samples used by each update.
pub(crate) struct Batcher {
    rng: ChaCha8Rng,
    size: Option<usize>,
}

impl Batcher {
    pub fn new(cfg: &JointConfig, t: usize) -> Self {
        Batcher {
            rng: stream(cfg.seed, BATCH_STREAM),
            size: cfg.batch_size.filter(|&b| b < t),
        }
    }

    pub fn draw(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        match self.size {
            None => (x.clone(), y.clone()),
            Some(b) => {
                let mut idx = index::sample(&mut self.rng, x.ncols(), b).into_vec();
                idx.sort_unstable();
                (x.select_columns(&idx), y.select_rows(&idx))
            }
        }
    }
}

/// One Adam update of the network parameters on `shift`; returns the task
/// loss before the update. Batch-norm running statistics follow the batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn param_step(
    pnn: &PnnConfig,
    params: &mut PnnParams,
    adam: &mut AdamMoments,
    shift: &SymMatrix,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weight: f64,
    cfg: &JointConfig,
) -> Result<f64> {
    let g = grad_params(pnn, params, shift, x, y, weight, cfg.beta)?;
    for (r, (mean, var)) in params.running.iter_mut().zip(g.tape.batch_moments()) {
        r.update(mean, var, DEFAULT_MOMENTUM);
    }
    let (next, moments) = adam_update(&params.flatten(), &g.grads.flatten(), adam, cfg.eta, &cfg.adam)?;
    params.assign_flat(&next)?;
    *adam = moments;
    Ok(g.loss)
}

pub(crate) fn training_error(epoch: usize, step: &'static str) -> impl FnOnce(PnnError) -> PnnError {
    move |e| PnnError::Training {
        epoch,
        step,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
        }
        assert!("GL".parse::<Mode>().is_ok());
        assert!("lasso".parse::<Mode>().is_err());
    }

    #[test]
    fn defaults_follow_the_experimental_protocol() {
        let c = JointConfig::default();
        assert_eq!((c.alpha, c.eta, c.gamma), (0.5, 0.01, 10.0));
        assert_eq!((c.epochs, c.inner_theta, c.inner_tilde, c.inner_h), (10, 20, 20, 20));
        assert_eq!(c.tethered_step(), 0.01);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = JointConfig::default();
        for bad in [
            JointConfig { alpha: 1.5, ..base.clone() },
            JointConfig { inner_h: 0, ..base.clone() },
            JointConfig { eta: 0.0, ..base.clone() },
            JointConfig { gamma: -1.0, ..base.clone() },
            JointConfig { batch_size: Some(1), ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn large_tether_weight_shrinks_the_step() {
        let c = JointConfig {
            gamma: 1e4,
            ..JointConfig::default()
        };
        assert_eq!(c.tethered_step(), 1e-4);
    }
}
