//! Synthetic sparse Gaussian graphical models with linear regression
//! targets.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PnnError, Result};
use crate::linalg::{sym_eig, SymMatrix};
use crate::stats::Dataset;

/// Added to each absolute row sum to set the diagonal.
const DIAGONAL_MARGIN: f64 = 0.5;
/// Magnitude band of supported off-diagonal weights.
const WEIGHT_BAND: (f64, f64) = (0.5, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SnrScale {
    /// Ratio of variances.
    #[default]
    Linear,
    /// `10 log10` of the variance ratio.
    Decibel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    /// Target fraction of nonzero entries, diagonal included.
    pub sparsity: f64,
    pub snr: f64,
    pub snr_scale: SnrScale,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 20,
            t: 100,
            sparsity: 0.2,
            snr: 10.0,
            snr_scale: SnrScale::Linear,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(PnnError::arg("n and t must be positive"));
        }
        let n2 = (self.n * self.n) as f64;
        if !(self.sparsity <= 1.0) || self.sparsity * n2 + 1e-9 < self.n as f64 {
            return Err(PnnError::arg(format!(
                "sparsity {} outside [1/n, 1] for n = {}",
                self.sparsity, self.n
            )));
        }
        if !(self.snr > 0.0) {
            return Err(PnnError::arg(format!("snr must be positive, got {}", self.snr)));
        }
        Ok(())
    }

    /// Variance ratio implied by `snr` and its scale.
    pub fn linear_snr(&self) -> f64 {
        match self.snr_scale {
            SnrScale::Linear => self.snr,
            SnrScale::Decibel => 10f64.powf(self.snr / 10.0),
        }
    }

    /// Number of off-diagonal pairs `{i, j}` placed in the support.
    pub fn support_pairs(&self) -> usize {
        let n = self.n as f64;
        let off = (self.sparsity * n * n).round() - n;
        let pairs = (off / 2.0).round().max(0.0) as usize;
        pairs.min(self.n * (self.n - 1) / 2)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub theta0: SymMatrix,
    /// `n x t`, samples as columns.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    pub sigma: f64,
}

impl SyntheticInstance {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.x.clone(), self.y.clone())
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random symmetric support of the requested density with weights in
/// `±[0.5, 1]` and a strictly dominant diagonal.
pub fn gen_sparse_precision(spec: &SyntheticSpec) -> Result<SymMatrix> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = stream(spec.seed, 1);

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(spec.support_pairs());

    let mut m = DMatrix::zeros(n, n);
    for (i, j) in pairs {
        let mag = rng.random_range(WEIGHT_BAND.0..=WEIGHT_BAND.1);
        let v = if rng.random_bool(0.5) { mag } else { -mag };
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    for i in 0..n {
        m[(i, i)] = m.row(i).iter().map(|v| v.abs()).sum::<f64>() + DIAGONAL_MARGIN;
    }
    let theta0 = SymMatrix::new(m)?;
    if sym_eig(&theta0)?.min() <= 0.0 {
        return Err(PnnError::NotPositiveDefinite);
    }
    Ok(theta0)
}

/// `t` draws from `N(0, theta0^{-1})` as columns: `x = L^{-T} z` with
/// `theta0 = L L^T`.
pub fn sample_gaussian(theta0: &SymMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = theta0.n();
    let chol = Cholesky::new(theta0.as_matrix().clone()).ok_or(PnnError::NotPositiveDefinite)?;
    let mut rng = stream(seed, 2);
    let z = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lt = chol.l().transpose();
    lt.solve_upper_triangular(&z)
        .ok_or(PnnError::NotPositiveDefinite)
}

#[derive(Clone, Debug)]
pub struct Targets {
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    pub sigma: f64,
}

/// `y = w^T X + z` with `w ~ N(0, I)` and noise variance set so that
/// `var(w^T X) / sigma^2 = snr` on this sample. `snr = inf` gives no noise.
pub fn gen_targets(x: &DMatrix<f64>, snr: f64, seed: u64) -> Result<Targets> {
    if !(snr > 0.0) {
        return Err(PnnError::arg(format!("snr must be positive, got {snr}")));
    }
    let (n, t) = x.shape();
    let mut rng = stream(seed, 3);
    let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let signal = x.tr_mul(&w);
    let mean = signal.mean();
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / t as f64;
    if !(var > 0.0) {
        return Err(PnnError::DegenerateSignal);
    }
    let sigma = (var / snr).sqrt();
    let y = if sigma == 0.0 {
        signal
    } else {
        signal.map(|s| s + sigma * rng.sample::<f64, _>(StandardNormal))
    };
    Ok(Targets { y, w, sigma })
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    let theta0 = gen_sparse_precision(spec)?;
    let x = sample_gaussian(&theta0, spec.t, spec.seed)?;
    let Targets { y, w, sigma } = gen_targets(&x, spec.linear_snr(), spec.seed)?;
    Ok(SyntheticInstance {
        theta0,
        x,
        y,
        w,
        sigma,
    })
}
