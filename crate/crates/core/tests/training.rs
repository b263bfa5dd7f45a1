mod support;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use pnn_core::datagen::{gen_sparse_precision, generate, sample_gaussian, SyntheticSpec};
use pnn_core::glasso::{project_feasible, solve_step1, GlassoProblem};
use pnn_core::linalg::sym_eig;
use pnn_core::metrics::{count_zeros, precision_errors};
use pnn_core::pnn::{grad_shift, PnnConfig, Pooling};
use pnn_core::stats::{default_spectral_bound, sample_covariance, sample_precision};
use pnn_core::train::{
    predict, train, train_joint, train_joint_observed, train_pca_baseline, JointConfig, Mode, Predictor,
    TrainEvent, TrainedModel,
};
use pnn_core::{Dataset, SymMatrix};

fn instance(seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        seed,
        ..Default::default()
    })
    .unwrap()
    .dataset()
    .unwrap()
}

fn small() -> (JointConfig, PnnConfig) {
    let cfg = JointConfig {
        epochs: 3,
        inner_theta: 10,
        inner_tilde: 10,
        inner_h: 10,
        gl_iters: 100,
        ..Default::default()
    };
    (cfg, PnnConfig::uniform(1, 4, 2))
}

fn shift(m: &TrainedModel) -> &SymMatrix {
    match &m.predictor {
        Predictor::Graph { shift, .. } => shift,
        Predictor::Pca { .. } => panic!("no graph shift"),
    }
}

#[test]
fn joint_run_with_reference_settings() {
    let d = instance(0);
    let c = sample_covariance(&d).unwrap();
    let m_bound = default_spectral_bound(&c, 2.0).unwrap();
    let mut worst_eig: f64 = f64::INFINITY;
    let mut worst_norm: f64 = 0.0;
    let mut epochs = 0;
    let model = train_joint_observed(&d, &JointConfig::default(), &PnnConfig::default(), |e| match e {
        TrainEvent::Step1 { iterate, .. } => {
            let eig = sym_eig(iterate.theta).unwrap();
            worst_eig = worst_eig.min(eig.min());
            worst_norm = worst_norm.max(eig.values.amax());
        }
        TrainEvent::Epoch(_) => epochs += 1,
    })
    .unwrap();
    assert_eq!(epochs, 10);
    assert_eq!(model.history.len(), 10);
    assert!(worst_eig >= -1e-10);
    assert!(worst_norm <= m_bound + 1e-10);
    assert!(count_zeros(model.precision.as_ref().unwrap(), 0.0) > 0);
    assert_eq!(shift(&model), model.theta_tilde.as_ref().unwrap());
}

#[test]
fn zero_task_weight_leaves_the_network_untouched() {
    let d = instance(1);
    let (cfg, pnn) = small();
    let cfg = JointConfig { alpha: 0.0, ..cfg };
    let one = train_joint(&d, &JointConfig { epochs: 1, ..cfg.clone() }, &pnn).unwrap();
    let three = train_joint(&d, &cfg, &pnn).unwrap();
    let flat = |m: &TrainedModel| match &m.predictor {
        Predictor::Graph { params, .. } => params.flatten(),
        Predictor::Pca { .. } => unreachable!(),
    };
    assert_eq!(flat(&one), flat(&three));
}

#[test]
fn untethered_precision_follows_plain_graphical_lasso() {
    let d = instance(2);
    let (cfg, pnn) = small();
    let cfg = JointConfig { gamma: 0.0, ..cfg };
    let model = train_joint(&d, &cfg, &pnn).unwrap();

    let c = sample_covariance(&d).unwrap();
    let m_bound = default_spectral_bound(&c, cfg.m_overshoot).unwrap();
    let problem = GlassoProblem {
        lambda: GlassoProblem::scaled_lambda(cfg.lambda0, d.n(), d.t()),
        eps: cfg.eps,
        gamma: 0.0,
        alpha: cfg.alpha,
        tether: SymMatrix::zeros(d.n()),
        m_bound,
        c: c.clone(),
    };
    let init = project_feasible(&sample_precision(&c, cfg.ridge).unwrap(), m_bound).unwrap();
    let reference = solve_step1(&problem, &init, cfg.eta, cfg.epochs * cfg.inner_theta).unwrap();
    let diff = model.precision.as_ref().unwrap().sub(&reference.theta);
    assert!(diff.as_matrix().amax() < 1e-12);
}

#[test]
fn strong_tether_couples_the_two_precisions() {
    let d = instance(3);
    let pnn = PnnConfig::default();
    let gap = |gamma: f64| {
        let m = train_joint(&d, &JointConfig { gamma, ..Default::default() }, &pnn).unwrap();
        m.history.last().unwrap().gap.unwrap()
    };
    let (loose, tight) = (gap(10.0), gap(1e4));
    assert!(tight <= loose / 10.0, "gap {tight} at gamma 1e4 vs {loose} at gamma 10");
}

#[test]
fn shift_step_without_task_term_contracts() {
    let mut r = support::rng(9);
    let c = support::grad_case(2, 2, true, 9);
    let (gamma, eta) = (10.0, 0.01);
    let anchor = support::random_sym(c.theta.n(), 1.0, &mut r);
    let mut tilde = c.theta.clone();
    let mut last = tilde.sub(&anchor).as_matrix().norm();
    for _ in 0..20 {
        let (_, g) = grad_shift(&c.cfg, &c.params, &tilde, &c.x, &c.y, &anchor, gamma, 0.0).unwrap();
        tilde = tilde.sub(&g.scaled(eta));
        let gap = tilde.sub(&anchor).as_matrix().norm();
        assert!(gap < last);
        assert!((gap - (1.0 - eta * gamma) * last).abs() < 1e-12);
        last = gap;
    }
}

#[test]
fn training_is_deterministic_and_models_round_trip() {
    let d = instance(4);
    let (cfg, pnn) = small();
    for mode in Mode::ALL {
        let a = train(mode, &d, &cfg, &pnn).unwrap();
        let b = train(mode, &d, &cfg, &pnn).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{mode}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        a.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, a, "{mode}");
        let p1 = predict(&a, &d.x).unwrap();
        let p2 = predict(&back, &d.x).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1, predict(&a, &d.x).unwrap());
    }
}

#[test]
fn models_with_foreign_tags_are_rejected() {
    let (cfg, pnn) = small();
    let m = train(Mode::Sample, &instance(5), &cfg, &pnn).unwrap();
    let json = m.to_json().unwrap().replace("pnn-model-v1", "pnn-model-v0");
    assert!(TrainedModel::from_json(&json).is_err());
    assert!(TrainedModel::from_json("{").is_err());
}

#[test]
fn two_stage_shifts() {
    let d = instance(6);
    let (cfg, pnn) = small();
    let sample = train(Mode::Sample, &d, &cfg, &pnn).unwrap();
    assert_eq!(count_zeros(sample.precision.as_ref().unwrap(), 0.0), 0);

    let vnn = train(Mode::Vnn, &d, &cfg, &pnn).unwrap();
    assert!(vnn.precision.is_none());
    assert_eq!(shift(&vnn), &sample_covariance(&d).unwrap());

    let gl = train(Mode::Gl, &d, &JointConfig { lambda0: 1e4, ..cfg.clone() }, &pnn).unwrap();
    let p = gl.precision.as_ref().unwrap();
    assert_eq!(count_zeros(p, 0.0), d.n() * (d.n() - 1));
    assert!(gl.history.last().unwrap().task_loss < gl.history[0].task_loss);
}

#[test]
fn naive_and_joint_report_feasible_precisions() {
    let d = instance(7);
    let (cfg, pnn) = small();
    let c = sample_covariance(&d).unwrap();
    let m_bound = default_spectral_bound(&c, cfg.m_overshoot).unwrap();
    for mode in [Mode::Naive, Mode::Joint] {
        let m = train(mode, &d, &cfg, &pnn).unwrap();
        let eig = sym_eig(m.precision.as_ref().unwrap()).unwrap();
        assert!(eig.min() >= -1e-10 && eig.values.amax() <= m_bound + 1e-10, "{mode}");
    }
    let one = train(Mode::Naive, &d, &JointConfig { alpha: 1.0, ..cfg }, &pnn).unwrap();
    assert!(one.precision.unwrap().is_finite());
}

#[test]
fn pca_component_checks() {
    let d = instance(8);
    let (cfg, pnn) = small();
    for k in [0, d.n() + 1] {
        assert!(train_pca_baseline(&d, k, &cfg, &pnn).is_err());
    }
    let m = train_pca_baseline(&d, d.n(), &cfg, &pnn).unwrap();
    let Predictor::Pca { components, k, mlp } = &m.predictor else {
        panic!()
    };
    assert_eq!((*k, mlp.input_dim()), (d.n(), d.n()));
    // A full set of components is an orthogonal change of basis.
    let v = DMatrix::from_column_slice(d.n(), *k, components);
    assert!((v.transpose() * &v - DMatrix::identity(*k, *k)).amax() < 1e-10);
}

#[test]
fn leading_component_matches_power_iteration() {
    let mut r = support::rng(10);
    let (n, t) = (6, 300);
    let u = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)).normalize();
    let x = DMatrix::from_fn(n, t, |i, j| {
        let s = ((j as f64) * 0.37).sin() * 5.0;
        u[i] * s + 0.05 * r.random_range(-1.0..1.0)
    });
    let d = Dataset::new(x, DVector::from_fn(t, |j, _| j as f64 / t as f64)).unwrap();
    let (cfg, pnn) = small();
    let m = train_pca_baseline(&d, 1, &cfg, &pnn).unwrap();
    let Predictor::Pca { components, .. } = &m.predictor else {
        panic!()
    };
    let c = sample_covariance(&d).unwrap();
    let mut q = DVector::from_element(n, 1.0).normalize();
    for _ in 0..500 {
        q = (c.as_matrix() * &q).normalize();
    }
    let got = DVector::from_column_slice(components);
    assert!((got.dot(&q).abs() - 1.0).abs() < 1e-10);
    assert!((got.dot(&u).abs() - 1.0).abs() < 1e-3);
}

#[test]
fn pca_tolerates_rank_deficient_covariance() {
    let mut r = support::rng(11);
    let (n, t) = (5, 40);
    let basis = DMatrix::from_fn(n, 2, |_, _| r.random_range(-1.0..1.0));
    let coef = DMatrix::from_fn(2, t, |_, _| r.random_range(-1.0..1.0));
    let d = Dataset::new(&basis * coef, DVector::from_fn(t, |_, _| r.random_range(-1.0..1.0))).unwrap();
    let (cfg, pnn) = small();
    let m = train_pca_baseline(&d, 2, &cfg, &pnn).unwrap();
    assert!(predict(&m, &d.x).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn mean_pooled_predictions_use_running_statistics() {
    let d = instance(12);
    let (cfg, mut pnn) = small();
    pnn.readout.pooling = Pooling::MeanNodes;
    let m = train(Mode::Sample, &d, &cfg, &pnn).unwrap();
    // Evaluation mode is per-sample: a prediction does not depend on the
    // rest of the batch.
    let all = predict(&m, &d.x).unwrap();
    let first = predict(&m, &d.x.columns(0, 1).into_owned()).unwrap();
    assert!((all[0] - first[0]).abs() < 1e-12, "{} vs {}", all[0], first[0]);
}

#[test]
fn sample_precision_converges_to_the_truth() {
    let spec = SyntheticSpec::default();
    let theta0 = gen_sparse_precision(&spec).unwrap();
    let mut means = Vec::new();
    for t in [1_000, 10_000, 100_000] {
        let mut sum = 0.0;
        for trial in 0..10 {
            let x = sample_gaussian(&theta0, t, 100 + trial).unwrap();
            let d = Dataset::new(x, DVector::zeros(t)).unwrap();
            let p = sample_precision(&sample_covariance(&d).unwrap(), 0.0).unwrap();
            sum += precision_errors(&p, &theta0).unwrap().frobenius;
        }
        means.push(sum / 10.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}
