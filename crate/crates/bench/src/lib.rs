//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pnn_core::datagen::{generate, SyntheticSpec};
use pnn_core::stats::{default_spectral_bound, sample_covariance};
use pnn_core::glasso::GlassoProblem;
use pnn_core::{Dataset, SymMatrix};

/// Synthetic instance with `n` nodes and `t` samples.
pub fn instance(n: usize, t: usize) -> Dataset {
    let spec = SyntheticSpec { n, t, ..Default::default() };
    generate(&spec).and_then(|i| i.dataset()).expect("valid spec")
}

/// Plain graphical-lasso problem on the covariance of [`instance`].
pub fn glasso_problem(n: usize, t: usize) -> GlassoProblem {
    let d = instance(n, t);
    let c = sample_covariance(&d).expect("covariance");
    let m = default_spectral_bound(&c, 2.0).expect("bound");
    let lambda = GlassoProblem::scaled_lambda(1.0, n, t);
    GlassoProblem::graphical_lasso(c, lambda, 1e-3, m).expect("problem")
}

pub fn random_sym(n: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::new((&a + a.transpose()) * 0.5).expect("symmetric")
}

pub fn signals(n: usize, t: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
    (x, y)
}
