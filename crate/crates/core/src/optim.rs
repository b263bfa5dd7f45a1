//! Adam on flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(PnnError::arg("Adam decay rates must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(PnnError::arg("Adam epsilon must be > 0"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the number of updates taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        AdamMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(
    params: &[f64],
    grads: &[f64],
    moments: &AdamMoments,
    eta: f64,
    cfg: &AdamConfig,
) -> Result<(Vec<f64>, AdamMoments)> {
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(PnnError::dim(format!(
            "Adam got {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            moments.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(PnnError::Numerical(format!("gradient entry {i} is {}", grads[i])));
    }
    let step = moments.step + 1;
    let c1 = 1.0 - cfg.beta1.powf(step as f64);
    let c2 = 1.0 - cfg.beta2.powf(step as f64);
    let mut next = AdamMoments {
        m: Vec::with_capacity(params.len()),
        v: Vec::with_capacity(params.len()),
        step,
    };
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grads[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        out.push(params[i] - eta * (m / c1) / ((v / c2).sqrt() + cfg.eps));
        next.m.push(m);
        next.v.push(v);
    }
    Ok((out, next))
}
