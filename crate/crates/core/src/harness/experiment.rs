use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_csv_dataset, split_dataset, DataSource, ExperimentConfig, GridCell};
use crate::datagen::{generate, SyntheticSpec};
use crate::error::{PnnError, Result};
use crate::linalg::SymMatrix;
use crate::metrics::{count_zeros, precision_errors, regression_metrics};
use crate::stats::Dataset;
use crate::train::{predict, train, Mode};

pub const RESULT_FORMAT: &str = "pnn-experiment-v1";
pub const RESULT_JSON: &str = "result.json";
pub const RESULT_CSV: &str = "repeats.csv";

/// Validation score of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub cell: GridCell,
    pub val_mae: Option<f64>,
    pub error: Option<String>,
}

/// Test metrics of one repeat. Precision fields are empty for modes without
/// a precision estimate, and the errors against the truth need synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub seed: u64,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub precision_l1: Option<f64>,
    pub precision_frobenius: Option<f64>,
    pub zero_count: Option<usize>,
    /// Fraction of nonzero entries of the estimate.
    pub density: Option<f64>,
    /// Fraction of nonzero entries of the ground truth.
    pub true_density: Option<f64>,
    pub wall_time: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub count: usize,
}

/// Mean and sample standard deviation, `None` for no values.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        mean,
        std,
        count: values.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mae: Option<Summary>,
    pub mse: Option<Summary>,
    pub precision_l1: Option<Summary>,
    pub precision_frobenius: Option<Summary>,
    pub zero_count: Option<Summary>,
    pub density: Option<Summary>,
    pub wall_time: Option<Summary>,
}

impl Aggregate {
    pub fn from_repeats(r: &[RepeatRecord]) -> Self {
        let pick = |f: &dyn Fn(&RepeatRecord) -> Option<f64>| summarize(&r.iter().filter_map(f).collect::<Vec<_>>());
        Aggregate {
            mae: pick(&|x| x.mae),
            mse: pick(&|x| x.mse),
            precision_l1: pick(&|x| x.precision_l1),
            precision_frobenius: pick(&|x| x.precision_frobenius),
            zero_count: pick(&|x| x.zero_count.map(|z| z as f64)),
            density: pick(&|x| x.density),
            wall_time: pick(&|x| x.wall_time),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub format: String,
    pub mode: Mode,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub selected: GridCell,
    /// Validation scores in grid order; empty when the cell was fixed.
    pub grid: Vec<GridScore>,
    pub repeats: Vec<RepeatRecord>,
    pub aggregate: Aggregate,
}

/// Data for one seed plus the generating precision when known.
fn dataset_for(cfg: &ExperimentConfig, seed: u64, loaded: Option<&Dataset>) -> Result<(Dataset, Option<SymMatrix>)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let inst = generate(&SyntheticSpec { seed, ..spec.clone() })?;
            Ok((inst.dataset()?, Some(inst.theta0)))
        }
        DataSource::Csv { .. } => Ok((loaded.expect("loaded up front").clone(), None)),
    }
}

/// Lowest validation MAE; the earliest cell wins ties.
pub fn select_cell(scores: &[GridScore]) -> Option<GridCell> {
    let mut best: Option<(f64, GridCell)> = None;
    for s in scores {
        if let Some(v) = s.val_mae {
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, s.cell));
            }
        }
    }
    best.map(|(_, c)| c)
}

fn validation_score(cfg: &ExperimentConfig, cell: GridCell, train_part: &Dataset, val: &Dataset, seed: u64) -> Result<f64> {
    let (pnn, mut joint) = cell.apply(&cfg.pnn, &cfg.joint);
    joint.seed = seed;
    let model = train(cfg.mode, train_part, &joint, &pnn)?;
    Ok(regression_metrics(&val.y, &predict(&model, &val.x)?)?.mae)
}

fn run_repeat(cfg: &ExperimentConfig, cell: GridCell, seed: u64, loaded: Option<&Dataset>) -> Result<RepeatRecord> {
    let start = Instant::now();
    let (data, theta0) = dataset_for(cfg, seed, loaded)?;
    let split = split_dataset(&data, &cfg.split, seed)?;
    let (pnn, mut joint) = cell.apply(&cfg.pnn, &cfg.joint);
    joint.seed = seed;
    let model = train(cfg.mode, &split.train, &joint, &pnn)?;
    let m = regression_metrics(&split.test.y, &predict(&model, &split.test.x)?)?;

    let n2 = (data.n() * data.n()) as f64;
    let mut record = RepeatRecord {
        seed,
        mae: Some(m.mae),
        mse: Some(m.mse),
        precision_l1: None,
        precision_frobenius: None,
        zero_count: None,
        density: None,
        true_density: theta0.as_ref().map(|t| 1.0 - count_zeros(t, 0.0) as f64 / n2),
        wall_time: None,
        error: None,
    };
    if let Some(p) = &model.precision {
        let zeros = count_zeros(p, 0.0);
        record.zero_count = Some(zeros);
        record.density = Some(1.0 - zeros as f64 / n2);
        if let Some(t0) = &theta0 {
            let e = precision_errors(p, t0)?;
            record.precision_l1 = Some(e.l1);
            record.precision_frobenius = Some(e.frobenius);
        }
    }
    if cfg.timing {
        record.wall_time = Some(start.elapsed().as_secs_f64());
    }
    Ok(record)
}

fn failed(seed: u64, e: &PnnError) -> RepeatRecord {
    RepeatRecord {
        seed,
        mae: None,
        mse: None,
        precision_l1: None,
        precision_frobenius: None,
        zero_count: None,
        density: None,
        true_density: None,
        wall_time: None,
        error: Some(e.to_string()),
    }
}

/// Selects hyperparameters on the validation split of the first seed
/// (unless fixed), then retrains and tests once per seed.
///
/// Cells and repeats run on the rayon pool; results keep grid and seed
/// order, so the outcome does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds = cfg.seed_list();
    let loaded = match &cfg.data {
        DataSource::Csv {
            features,
            targets,
            header,
        } => Some(load_csv_dataset(features, targets, *header)?),
        DataSource::Synthetic(_) => None,
    };

    let base = GridCell::from_configs(&cfg.pnn, &cfg.joint);
    let (selected, grid) = match cfg.fixed {
        Some(cell) => (cell, Vec::new()),
        None => {
            let cells = cfg.grid.cells(base);
            if cells.len() == 1 {
                (cells[0], Vec::new())
            } else {
                let seed = seeds[0];
                let (data, _) = dataset_for(cfg, seed, loaded.as_ref())?;
                // Selection only ever sees the train and validation parts.
                let split = split_dataset(&data, &cfg.split, seed)?;
                let (train_part, val) = (split.train, split.val);
                let scores: Vec<GridScore> = cells
                    .par_iter()
                    .map(|&cell| match validation_score(cfg, cell, &train_part, &val, seed) {
                        Ok(v) => GridScore {
                            cell,
                            val_mae: Some(v),
                            error: None,
                        },
                        Err(e) => GridScore {
                            cell,
                            val_mae: None,
                            error: Some(e.to_string()),
                        },
                    })
                    .collect();
                let best = select_cell(&scores)
                    .ok_or_else(|| PnnError::arg("every grid cell failed during validation"))?;
                (best, scores)
            }
        }
    };

    let outcomes: Vec<Result<RepeatRecord>> = seeds
        .par_iter()
        .map(|&s| run_repeat(cfg, selected, s, loaded.as_ref()))
        .collect();
    if outcomes.iter().all(|o| o.is_err()) {
        return Err(outcomes.into_iter().next().expect("at least one repeat").unwrap_err());
    }
    let repeats: Vec<RepeatRecord> = outcomes
        .into_iter()
        .zip(&seeds)
        .map(|(o, &s)| o.unwrap_or_else(|e| failed(s, &e)))
        .collect();
    Ok(ExperimentResult {
        format: RESULT_FORMAT.to_string(),
        mode: cfg.mode,
        config_hash: cfg.hash(),
        seeds,
        selected,
        grid,
        aggregate: Aggregate::from_repeats(&repeats),
        repeats,
    })
}

/// Writes `result.json` and a per-repeat `repeats.csv` into `dir`.
pub fn emit_results(r: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PnnError::io(dir, e))?;
    let json_path = dir.join(RESULT_JSON);
    let json = serde_json::to_string_pretty(r).map_err(|e| PnnError::Format(e.to_string()))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| PnnError::io(&json_path, e))?;

    let csv_path = dir.join(RESULT_CSV);
    let io = |e: csv::Error| PnnError::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
    for rec in &r.repeats {
        w.serialize(rec).map_err(io)?;
    }
    w.flush().map_err(|e| PnnError::io(&csv_path, e))
}

pub fn read_results(dir: &Path) -> Result<ExperimentResult> {
    let path = dir.join(RESULT_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| PnnError::io(&path, e))?;
    let r: ExperimentResult = serde_json::from_str(&text).map_err(|e| PnnError::Format(e.to_string()))?;
    if r.format != RESULT_FORMAT {
        return Err(PnnError::Format(format!("unsupported result format '{}'", r.format)));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Grid;
    use crate::pnn::PnnConfig;
    use crate::train::JointConfig;
    use approx::assert_abs_diff_eq;

    fn quick(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            repeats: 2,
            joint: JointConfig {
                epochs: 2,
                inner_theta: 5,
                inner_tilde: 5,
                inner_h: 5,
                gl_iters: 50,
                ..Default::default()
            },
            pnn: PnnConfig::uniform(1, 4, 2),
            ..Default::default()
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_abs_diff_eq!(s.std, 2.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(summarize(&[4.2; 3]).unwrap().std, 0.0);
        assert_eq!(summarize(&[4.2]).unwrap().std, 0.0);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn selection_prefers_lowest_then_earliest() {
        let cell = |l| GridCell { layers: l, features: 8, order: 1, lambda0: 1.0 };
        let score = |l, v: Option<f64>| GridScore { cell: cell(l), val_mae: v, error: None };
        let s = [score(1, Some(2.0)), score(2, None), score(3, Some(1.0)), score(4, Some(1.0))];
        assert_eq!(select_cell(&s), Some(cell(3)));
        assert_eq!(select_cell(&[score(1, None)]), None);
    }

    #[test]
    fn sample_mode_has_no_zeros() {
        let r = run_experiment(&quick(Mode::Sample)).unwrap();
        assert_eq!(r.repeats.len(), 2);
        for rep in &r.repeats {
            assert_eq!(rep.zero_count, Some(0));
            assert!(rep.mae.unwrap() > 0.0);
            assert!(rep.precision_l1.is_some());
        }
    }

    #[test]
    fn modes_without_precision_leave_fields_empty() {
        let r = run_experiment(&quick(Mode::Vnn)).unwrap();
        assert!(r.repeats.iter().all(|x| x.zero_count.is_none() && x.precision_l1.is_none()));
        assert!(r.aggregate.zero_count.is_none());
        assert!(r.aggregate.mae.is_some());
    }

    #[test]
    fn grid_selection_records_every_cell() {
        let cfg = ExperimentConfig {
            grid: Grid {
                order: vec![1, 2],
                lambda0: vec![1.0, 10.0],
                ..Default::default()
            },
            repeats: 1,
            ..quick(Mode::Gl)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.grid.len(), 4);
        assert_eq!(Some(r.selected), select_cell(&r.grid));
    }

    #[test]
    fn results_round_trip_and_repeat_deterministically() {
        let cfg = quick(Mode::Joint);
        let a = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_results(&a, dir.path()).unwrap();
        assert_eq!(read_results(dir.path()).unwrap(), a);

        let b = run_experiment(&cfg).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        emit_results(&b, dir2.path()).unwrap();
        for f in [RESULT_JSON, RESULT_CSV] {
            let x = std::fs::read(dir.path().join(f)).unwrap();
            let y = std::fs::read(dir2.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join(RESULT_CSV)).unwrap();
        assert!(csv.starts_with("seed,mae,mse,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn aggregates_recompute_from_repeats() {
        let r = run_experiment(&quick(Mode::Gl)).unwrap();
        let maes: Vec<f64> = r.repeats.iter().filter_map(|x| x.mae).collect();
        assert_eq!(r.aggregate.mae, summarize(&maes));
    }

    #[test]
    fn experiment_fails_when_every_repeat_fails() {
        // Three samples leave a single training column.
        let mut cfg = quick(Mode::Sample);
        cfg.data = DataSource::Synthetic(SyntheticSpec { t: 3, ..Default::default() });
        assert!(run_experiment(&cfg).is_err());
    }
}
