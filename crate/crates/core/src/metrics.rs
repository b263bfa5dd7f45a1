//! Downstream and structural error measures, and the empirical rate study
//! of the tethered precision estimator.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_sparse_precision, sample_gaussian, SyntheticSpec};
use crate::error::{PnnError, Result};
use crate::glasso::{project_feasible, solve_step1, GlassoProblem, DEFAULT_EPS, DEFAULT_ETA};
use crate::linalg::SymMatrix;
use crate::stats::{default_spectral_bound, sample_covariance, sample_precision, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
}

pub fn regression_metrics(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<RegressionMetrics> {
    if y.len() != yhat.len() {
        return Err(PnnError::dim(format!("{} targets, {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(PnnError::arg("metrics of an empty prediction set"));
    }
    let t = y.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat.iter()) {
        abs += (a - b).abs();
        sq += (a - b) * (a - b);
    }
    Ok(RegressionMetrics {
        mae: abs / t,
        mse: sq / t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionErrors {
    /// Entrywise absolute error summed over all `n^2` entries.
    pub l1: f64,
    pub frobenius: f64,
}

pub fn precision_errors(theta: &SymMatrix, theta0: &SymMatrix) -> Result<PrecisionErrors> {
    if theta.n() != theta0.n() {
        return Err(PnnError::dim(format!(
            "estimate is {}x{}, truth is {}x{}",
            theta.n(),
            theta.n(),
            theta0.n(),
            theta0.n()
        )));
    }
    let d = theta.sub(theta0);
    Ok(PrecisionErrors {
        l1: d.as_matrix().iter().map(|v| v.abs()).sum(),
        frobenius: d.as_matrix().norm(),
    })
}

/// Entries with `|theta_ij| <= tol`, diagonal included.
pub fn count_zeros(theta: &SymMatrix, tol: f64) -> usize {
    theta.as_matrix().iter().filter(|v| v.abs() <= tol).count()
}

/// Least-squares slope of `log(values)` against `log(sizes)`.
pub fn fit_loglog_slope(sizes: &[f64], values: &[f64]) -> Result<f64> {
    if sizes.len() != values.len() || sizes.len() < 2 {
        return Err(PnnError::arg("slope fit needs at least two paired points"));
    }
    if sizes.iter().chain(values).any(|v| !(*v > 0.0)) {
        return Err(PnnError::arg("slope fit needs positive inputs"));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(PnnError::arg("slope fit needs distinct sample sizes"));
    }
    Ok(sxy / sxx)
}

/// Anchor of the tether in the rate study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TetherAnchor {
    /// Anchor at the ground truth, which isolates the statistical term.
    #[default]
    Truth,
    /// Anchor at zero, which adds a bias that does not vanish with `t`.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateCheckConfig {
    pub lambda0: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub eps: f64,
    pub eta: f64,
    pub iters: usize,
    pub m_overshoot: f64,
    pub anchor: TetherAnchor,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        RateCheckConfig {
            lambda0: 1.0,
            gamma: 10.0,
            alpha: 0.5,
            eps: DEFAULT_EPS,
            eta: DEFAULT_ETA,
            iters: 400,
            m_overshoot: 2.0,
            anchor: TetherAnchor::Truth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCheckReport {
    pub n: usize,
    pub sample_sizes: Vec<usize>,
    /// Mean Frobenius error per sample size.
    pub errors: Vec<f64>,
    pub slope: f64,
    /// Nonzero off-diagonal entries of the ground truth.
    pub s_nonzero: usize,
    /// `sqrt((n + S) log n / t)` per sample size.
    pub theoretical_rate: Vec<f64>,
    pub anchor: TetherAnchor,
}

/// Sample seed of one `(t, repeat)` cell, distinct across cells.
fn cell_seed(base: u64, t_index: usize, repeat: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((t_index as u64) << 32) | repeat as u64)
}

/// Frobenius error of the tethered estimator fitted to `t` fresh samples.
fn rate_cell(theta0: &SymMatrix, t: usize, seed: u64, cfg: &RateCheckConfig) -> Result<f64> {
    let x = sample_gaussian(theta0, t, seed)?;
    let mut d = Dataset::new(x, DVector::zeros(t))?;
    // The generating distribution is zero-mean.
    d.centered = true;
    let c = sample_covariance(&d)?;
    let m_bound = default_spectral_bound(&c, cfg.m_overshoot)?;
    let tether = match cfg.anchor {
        TetherAnchor::Truth => theta0.clone(),
        TetherAnchor::Zero => SymMatrix::zeros(theta0.n()),
    };
    let problem = GlassoProblem {
        lambda: GlassoProblem::scaled_lambda(cfg.lambda0, theta0.n(), t),
        eps: cfg.eps,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        tether,
        m_bound,
        c,
    };
    problem.validate()?;
    let init = project_feasible(&sample_precision(&problem.c, 0.0)?, m_bound)?;
    let sol = solve_step1(&problem, &init, cfg.eta, cfg.iters)?;
    Ok(precision_errors(&sol.theta, theta0)?.frobenius)
}

/// Fits the tethered estimator on a fixed ground truth for each sample
/// size and reports the log-log slope of the mean error.
pub fn rate_check(
    spec: &SyntheticSpec,
    t_grid: &[usize],
    repeats: usize,
    cfg: &RateCheckConfig,
) -> Result<RateCheckReport> {
    if t_grid.len() < 3 || repeats < 3 {
        return Err(PnnError::arg("the rate study needs at least 3 sample sizes and 3 repeats"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PnnError::arg("sample sizes must be strictly increasing"));
    }
    if t_grid[0] < 2 {
        return Err(PnnError::arg("sample sizes must be at least 2"));
    }
    spec.validate()?;
    let theta0 = gen_sparse_precision(spec)?;
    let n = theta0.n();

    let cells: Vec<(usize, usize)> = (0..t_grid.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let errs = cells
        .par_iter()
        .map(|&(i, r)| rate_cell(&theta0, t_grid[i], cell_seed(spec.seed, i, r), cfg))
        .collect::<Result<Vec<f64>>>()?;
    let errors: Vec<f64> = errs
        .chunks(repeats)
        .map(|c| c.iter().sum::<f64>() / repeats as f64)
        .collect();

    let sizes: Vec<f64> = t_grid.iter().map(|&t| t as f64).collect();
    let slope = fit_loglog_slope(&sizes, &errors)?;
    let s_nonzero = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && theta0.get(i, j) != 0.0)
        .count();
    let theoretical_rate = sizes
        .iter()
        .map(|t| ((n + s_nonzero) as f64 * (n as f64).ln() / t).sqrt())
        .collect();
    Ok(RateCheckReport {
        n,
        sample_sizes: t_grid.to_vec(),
        errors,
        slope,
        s_nonzero,
        theoretical_rate,
        anchor: cfg.anchor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::soft_threshold_offdiag;
    use crate::linalg::testutil::random_sym;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn regression_examples() {
        let m = regression_metrics(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!((m.mae, m.mse), (0.0, 0.0));
        let m = regression_metrics(&v(&[0.0, 2.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!((m.mae, m.mse), (1.0, 1.0));
        let m = regression_metrics(&v(&[0.0, 0.0, 3.0]), &v(&[1.0, 1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(m.mae, 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mse, 2.0, epsilon = 1e-15);
        assert!(regression_metrics(&v(&[]), &v(&[])).is_err());
        assert!(regression_metrics(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn precision_error_examples() {
        let a = random_sym(4, 1);
        let e = precision_errors(&a, &a).unwrap();
        assert_eq!((e.l1, e.frobenius), (0.0, 0.0));
        let i2 = SymMatrix::identity(2);
        let e = precision_errors(&i2, &SymMatrix::zeros(2)).unwrap();
        assert_eq!(e.l1, 2.0);
        assert_abs_diff_eq!(e.frobenius, 2f64.sqrt(), epsilon = 1e-15);
        assert!(precision_errors(&i2, &SymMatrix::identity(3)).is_err());
    }

    #[test]
    fn precision_errors_match_brute_force_sums() {
        let a = random_sym(7, 2);
        let b = random_sym(7, 3);
        let (mut l1, mut sq) = (0.0, 0.0);
        for i in 0..7 {
            for j in 0..7 {
                let d = a.get(i, j) - b.get(i, j);
                l1 += d.abs();
                sq += d * d;
            }
        }
        let e = precision_errors(&a, &b).unwrap();
        assert_abs_diff_eq!(e.l1, l1, epsilon = 1e-12);
        assert_abs_diff_eq!(e.frobenius, sq.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn zero_count_examples() {
        assert_eq!(count_zeros(&SymMatrix::identity(3), 0.0), 6);
        assert_eq!(count_zeros(&random_sym(5, 4), 0.0), 0);
        let t = soft_threshold_offdiag(&random_sym(5, 4), 1e6).unwrap();
        assert_eq!(count_zeros(&t, 0.0), 20);
        let near = SymMatrix::from_row_slice(2, &[1.0, 1e-9, 1e-9, 1.0]).unwrap();
        assert_eq!(count_zeros(&near, 0.0), 0);
        assert_eq!(count_zeros(&near, 1e-8), 2);
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let ts = [200.0, 800.0, 3200.0, 12800.0];
        let half: Vec<f64> = ts.iter().map(|t: &f64| 3.0 * t.powf(-0.5)).collect();
        assert_abs_diff_eq!(fit_loglog_slope(&ts, &half).unwrap(), -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(fit_loglog_slope(&ts, &[2.0; 4]).unwrap(), 0.0, epsilon = 1e-14);
        assert!(fit_loglog_slope(&ts, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&[5.0, 5.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rate_check_rejects_short_grids() {
        let spec = SyntheticSpec::default();
        let cfg = RateCheckConfig::default();
        assert!(rate_check(&spec, &[100, 200], 3, &cfg).is_err());
        assert!(rate_check(&spec, &[100, 200, 400], 2, &cfg).is_err());
        assert!(rate_check(&spec, &[100, 400, 200], 3, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn fitted_slope_recovers_power_law(p in -2.0f64..1.0, c in 0.01f64..100.0) {
            let ts = [50.0, 120.0, 999.0, 4000.0, 31000.0];
            let ys: Vec<f64> = ts.iter().map(|t: &f64| c * t.powf(p)).collect();
            prop_assert!((fit_loglog_slope(&ts, &ys).unwrap() - p).abs() < 1e-12);
        }

        #[test]
        fn precision_errors_form_a_metric(s in 0u64..10_000) {
            let (a, b, c) = (random_sym(5, s), random_sym(5, s + 1), random_sym(5, s + 2));
            let ab = precision_errors(&a, &b).unwrap();
            let ba = precision_errors(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            let ac = precision_errors(&a, &c).unwrap();
            let cb = precision_errors(&c, &b).unwrap();
            prop_assert!(ab.l1 <= ac.l1 + cb.l1 + 1e-12);
            prop_assert!(ab.frobenius <= ac.frobenius + cb.frobenius + 1e-12);
            prop_assert!(ab.l1 > 0.0 && ab.frobenius > 0.0);
        }
    }
}
