//! Precision neural networks: polynomial filter banks on a shift operator,
//! batch normalization, an MLP readout, and hand-written reverse-mode
//! gradients for the parameters and the shift itself.

mod batchnorm;
mod filter;
mod mlp;
mod model;

use serde::{Deserialize, Serialize};

pub use batchnorm::{batchnorm_forward, BnMode, RunningStats, DEFAULT_MOMENTUM, VAR_FLOOR};
pub use filter::{filter_apply, spectral_response};
pub use mlp::{Dense, Mlp, MlpTape};
pub use model::{
    grad_params, grad_shift, pnn_forward, task_loss, ForwardTape, LayerParams, ParamGradient,
    PnnConfig, PnnParams, Pooling, ReadoutConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative at pre-activation `v`; the rectifier uses 0 at the kink.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - v.tanh().powi(2),
        }
    }
}
