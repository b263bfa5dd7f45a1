//! Sample covariance and precision estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};
use crate::linalg::{sym_eig, SymMatrix};

/// Floor applied to the minimum covariance eigenvalue when choosing `M`.
pub const SPECTRAL_BOUND_FLOOR: f64 = 1e-6;

/// Observations as columns (`n` features by `t` samples) with one scalar
/// regression target per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Set once every feature row has zero mean.
    pub centered: bool,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.ncols() != y.len() {
            return Err(PnnError::dim(format!(
                "{} samples but {} targets",
                x.ncols(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(PnnError::arg("dataset needs at least one feature and one sample"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(PnnError::Numerical("dataset values".into()));
        }
        Ok(Dataset {
            x,
            y,
            centered: false,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn t(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            centered: false,
        }
    }
}

/// Per-feature affine normalization fitted on one split and applied to
/// the others, so held-out data never informs the statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Present only when standardizing to unit variance.
    pub scale: Option<Vec<f64>>,
}

impl FeatureScaler {
    pub fn fit(x: &DMatrix<f64>, standardize: bool) -> FeatureScaler {
        let t = x.ncols() as f64;
        let mean: Vec<f64> = x.row_iter().map(|r| r.sum() / t).collect();
        let scale = standardize.then(|| {
            x.row_iter()
                .zip(&mean)
                .map(|(r, m)| {
                    let var = r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t;
                    if var > 0.0 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect()
        });
        FeatureScaler { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.mean.len() {
            return Err(PnnError::dim(format!(
                "scaler fitted on {} features, got {}",
                self.mean.len(),
                x.nrows()
            )));
        }
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let s = self.scale.as_ref().map_or(1.0, |s| s[i]);
            row.apply(|v| *v = (*v - self.mean[i]) / s);
        }
        Ok(out)
    }

    pub fn apply_dataset(&self, d: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.apply(&d.x)?,
            y: d.y.clone(),
            centered: true,
        })
    }
}

/// `C = X X^T / T`, centering `X` first unless the dataset is flagged as
/// centered already.
pub fn sample_covariance(d: &Dataset) -> Result<SymMatrix> {
    let t = d.t();
    let x = if d.centered {
        d.x.clone()
    } else {
        if t < 2 {
            return Err(PnnError::arg(format!(
                "covariance needs at least 2 samples to center, got {t}"
            )));
        }
        FeatureScaler::fit(&d.x, false).apply(&d.x)?
    };
    Ok(SymMatrix::symmetrized(&x * x.transpose() / t as f64))
}

/// `(C + ridge I)^{-1}` through the eigendecomposition of `C`.
pub fn sample_precision(c: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    if !(ridge >= 0.0) {
        return Err(PnnError::arg(format!("ridge must be nonnegative, got {ridge}")));
    }
    let eig = sym_eig(c)?;
    let value = eig.min() + ridge;
    if value <= 1e-12 {
        return Err(PnnError::Singular { value });
    }
    Ok(eig.map(|w| 1.0 / (w + ridge)))
}

/// `overshoot / max(w_min(C), floor)`: an upper bound on the precision
/// spectrum, inflated by `overshoot`.
pub fn default_spectral_bound(c: &SymMatrix, overshoot: f64) -> Result<f64> {
    if !(overshoot >= 1.0) {
        return Err(PnnError::arg(format!("overshoot must be at least 1, got {overshoot}")));
    }
    let w_min = sym_eig(c)?.min();
    Ok(overshoot / w_min.max(SPECTRAL_BOUND_FLOOR))
}
