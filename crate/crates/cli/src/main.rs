//! `pnn`: synthetic data, standalone graphical lasso, training, experiments
//! and the convergence-rate study.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use nalgebra::DVector;
use serde::Serialize;

use pnn_core::datagen::generate;
use pnn_core::glasso::{penalized_objective, project_feasible, solve_step1, GlassoProblem};
use pnn_core::harness::{
    emit_results, load_csv_features, run_experiment, split_dataset, write_csv_dataset, write_csv_matrix,
    ExperimentResult, RESULT_CSV, RESULT_JSON,
};
use pnn_core::metrics::{count_zeros, precision_errors, rate_check, regression_metrics, RateCheckConfig};
use pnn_core::stats::{default_spectral_bound, sample_covariance, sample_precision};
use pnn_core::train::{predict, train};
use pnn_core::{Dataset, PnnError, Result};

use args::{Cli, Command, ExperimentArgs, GlassoArgs, RateCheckArgs, SynthArgs, TrainArgs};

fn exit_code(e: &PnnError) -> u8 {
    match e.category() {
        "argument" => 2,
        "input" => 3,
        "io" => 4,
        "training" => 5,
        _ => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Glasso(a) => glasso(a),
        Command::Train(a) => train_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::RateCheck(a) => rate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| PnnError::Format(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_json<T: Serialize>(v: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| PnnError::Format(e.to_string()))?;
    std::fs::write(path, s + "\n").map_err(|e| PnnError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PnnError::io(dir, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = a.data.spec();
    let inst = generate(&spec)?;
    create_dir(&a.out)?;
    write_csv_dataset(&inst.dataset()?, &a.out.join("features.csv"), &a.out.join("targets.csv"))?;
    write_csv_matrix(&inst.theta0, &a.out.join("theta0.csv"))?;

    #[derive(Serialize)]
    struct Meta<'a> {
        spec: &'a pnn_core::datagen::SyntheticSpec,
        sigma: f64,
        weights: Vec<f64>,
        nonzeros: usize,
    }
    let meta = Meta {
        spec: &spec,
        sigma: inst.sigma,
        weights: inst.w.iter().copied().collect(),
        nonzeros: spec.n * spec.n - count_zeros(&inst.theta0, 0.0),
    };
    write_json(&meta, &a.out.join("instance.json"))?;
    println!(
        "wrote n={} t={} instance ({} nonzero precision entries) to {}",
        spec.n,
        spec.t,
        meta.nonzeros,
        a.out.display()
    );
    Ok(())
}

fn glasso(a: GlassoArgs) -> Result<()> {
    let x = load_csv_features(&a.features, a.header)?;
    let t = x.ncols();
    let d = Dataset::new(x, DVector::zeros(t))?;
    let c = sample_covariance(&d)?;
    let m_bound = default_spectral_bound(&c, a.m_overshoot)?;
    let lambda = GlassoProblem::scaled_lambda(a.lambda0, d.n(), t);
    let problem = GlassoProblem::graphical_lasso(c, lambda, a.eps, m_bound)?;
    let init = project_feasible(&sample_precision(&problem.c, a.ridge)?, m_bound)?;
    let sol = solve_step1(&problem, &init, a.eta, a.iters)?;
    if let Some(out) = &a.out {
        write_csv_matrix(&sol.theta, out)?;
    }

    #[derive(Serialize)]
    struct Report {
        n: usize,
        t: usize,
        lambda: f64,
        m_bound: f64,
        iterations: usize,
        objective: f64,
        zero_count: usize,
    }
    print_json(&Report {
        n: d.n(),
        t,
        lambda,
        m_bound,
        iterations: sol.iterations,
        objective: penalized_objective(&sol.theta, &problem)?,
        zero_count: count_zeros(&sol.theta, 0.0),
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let seed = cfg.seed;
    let (data, theta0) = match &cfg.data {
        pnn_core::harness::DataSource::Synthetic(spec) => {
            let inst = generate(spec)?;
            (inst.dataset()?, Some(inst.theta0))
        }
        pnn_core::harness::DataSource::Csv {
            features,
            targets,
            header,
        } => (pnn_core::harness::load_csv_dataset(features, targets, *header)?, None),
    };
    let split = split_dataset(&data, &cfg.split, seed)?;
    let mut joint = cfg.joint.clone();
    joint.seed = seed;
    let model = train(cfg.mode, &split.train, &joint, &cfg.pnn)?;
    if let Some(path) = &a.model {
        model.save(path)?;
    }

    #[derive(Serialize)]
    struct Report {
        mode: String,
        train_samples: usize,
        val_mae: f64,
        test_mae: f64,
        test_mse: f64,
        zero_count: Option<usize>,
        precision_l1: Option<f64>,
        precision_frobenius: Option<f64>,
    }
    let val = regression_metrics(&split.val.y, &predict(&model, &split.val.x)?)?;
    let test = regression_metrics(&split.test.y, &predict(&model, &split.test.x)?)?;
    let errs = match (&model.precision, &theta0) {
        (Some(p), Some(t0)) => Some(precision_errors(p, t0)?),
        _ => None,
    };
    print_json(&Report {
        mode: cfg.mode.to_string(),
        train_samples: split.train.t(),
        val_mae: val.mae,
        test_mae: test.mae,
        test_mse: test.mse,
        zero_count: model.precision.as_ref().map(|p| count_zeros(p, 0.0)),
        precision_l1: errs.map(|e| e.l1),
        precision_frobenius: errs.map(|e| e.frobenius),
    })
}

fn fmt_summary(s: Option<pnn_core::harness::Summary>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
        None => "-".to_string(),
    }
}

fn print_result(r: &ExperimentResult) {
    let c = r.selected;
    println!(
        "mode {}  selected L={} F={} K={} lambda0={}  repeats {}",
        r.mode,
        c.layers,
        c.features,
        c.order,
        c.lambda0,
        r.repeats.len()
    );
    let a = &r.aggregate;
    println!("  MAE          {}", fmt_summary(a.mae));
    println!("  MSE          {}", fmt_summary(a.mse));
    println!("  precision L1 {}", fmt_summary(a.precision_l1));
    println!("  zero count   {}", fmt_summary(a.zero_count));
    let failed = r.repeats.iter().filter(|x| x.error.is_some()).count();
    if failed > 0 {
        println!("  {failed} repeat(s) failed");
    }
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(r) = a.repeats {
        cfg.repeats = r;
        cfg.seeds = None;
    }
    if a.reference_grid {
        cfg.grid = pnn_core::harness::Grid::reference();
    }
    if let Some(cell) = a.fixed {
        cfg.fixed = Some(cell.0);
    }
    if a.timing {
        cfg.timing = true;
    }
    if let Some(o) = a.output {
        cfg.output = Some(o);
    }
    let out: PathBuf = cfg
        .output
        .clone()
        .ok_or_else(|| PnnError::arg("an output directory is required (--output or `output` in the config)"))?;
    let result = run_experiment(&cfg)?;
    emit_results(&result, &out)?;
    print_result(&result);
    println!("wrote {} and {} to {}", RESULT_JSON, RESULT_CSV, out.display());
    Ok(())
}

fn rate(a: RateCheckArgs) -> Result<()> {
    let spec = pnn_core::datagen::SyntheticSpec {
        n: a.n,
        sparsity: a.sparsity,
        seed: a.seed,
        ..Default::default()
    };
    let cfg = RateCheckConfig {
        lambda0: a.lambda0,
        gamma: a.gamma,
        iters: a.iters,
        anchor: a.anchor,
        ..Default::default()
    };
    let report = rate_check(&spec, &a.t_grid, a.repeats, &cfg)?;
    println!("{:>8}  {:>12}  {:>12}", "T", "error", "rate");
    for ((t, e), r) in report.sample_sizes.iter().zip(&report.errors).zip(&report.theoretical_rate) {
        println!("{t:>8}  {e:>12.6}  {r:>12.6}");
    }
    println!("slope {:.4} (S = {})", report.slope, report.s_nonzero);
    if let Some(out) = &a.output {
        write_json(&report, out)?;
    }
    Ok(())
}
