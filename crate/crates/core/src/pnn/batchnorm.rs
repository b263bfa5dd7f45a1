use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};

/// Batch variance is floored here before taking the square root.
pub const VAR_FLOOR: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Running per-feature moments used in evaluation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// Mean and biased variance of a slice.
pub(crate) fn moments(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    (mean, var)
}

pub(crate) fn inv_std(var: f64) -> f64 {
    1.0 / var.max(VAR_FLOOR).sqrt()
}

/// Normalizes each row (feature) of `batch` across its columns (samples),
/// then applies `scale * xhat + shift`.
///
/// In training mode the batch statistics are used and folded into
/// `running` with the given momentum.
pub fn batchnorm_forward(
    batch: &DMatrix<f64>,
    scale: &[f64],
    shift: &[f64],
    running: &mut RunningStats,
    mode: BnMode,
    momentum: f64,
) -> Result<DMatrix<f64>> {
    let (features, size) = batch.shape();
    if scale.len() != features || shift.len() != features || running.mean.len() != features {
        return Err(PnnError::dim(format!(
            "batch has {features} features, parameters have {}",
            scale.len()
        )));
    }
    if mode == BnMode::Train && size < 2 {
        return Err(PnnError::arg("batch norm needs at least 2 samples in training mode"));
    }
    let mut out = batch.clone();
    let mut batch_mean = vec![0.0; features];
    let mut batch_var = vec![0.0; features];
    for f in 0..features {
        let (mean, var) = match mode {
            BnMode::Train => {
                let row: Vec<f64> = batch.row(f).iter().copied().collect();
                moments(&row)
            }
            BnMode::Eval => (running.mean[f], running.var[f]),
        };
        batch_mean[f] = mean;
        batch_var[f] = var;
        let s = inv_std(var);
        out.row_mut(f)
            .apply(|v| *v = scale[f] * (*v - mean) * s + shift[f]);
    }
    if mode == BnMode::Train {
        running.update(&batch_mean, &batch_var, momentum);
    }
    Ok(out)
}
