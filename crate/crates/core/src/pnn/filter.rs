use nalgebra::DVector;

use crate::error::{PnnError, Result};
use crate::linalg::SymMatrix;

/// `sum_k coeffs[k] theta^k x`, evaluated with the recursion
/// `z_0 = x, z_k = theta z_{k-1}`.
pub fn filter_apply(theta: &SymMatrix, coeffs: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
    if coeffs.is_empty() {
        return Err(PnnError::arg("a filter needs at least one coefficient"));
    }
    if x.len() != theta.n() {
        return Err(PnnError::dim(format!(
            "signal of length {} on a {}-node shift",
            x.len(),
            theta.n()
        )));
    }
    let mut z = x.clone();
    let mut out = x * coeffs[0];
    for &h in &coeffs[1..] {
        z = theta.as_matrix() * &z;
        out.axpy(h, &z, 1.0);
    }
    Ok(out)
}

/// Frequency response `h(mu) = sum_k coeffs[k] mu^k`.
pub fn spectral_response(coeffs: &[f64], mu: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &h| acc * mu + h)
}
