//! Experiment configuration, data ingestion, orchestration and result files.

mod data;
mod experiment;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use data::{
    load_csv_dataset, load_csv_features, split_dataset, split_sizes, validate_fractions, write_csv_dataset, write_csv_matrix, Split,
};
pub use experiment::{
    emit_results, read_results, run_experiment, select_cell, summarize, Aggregate, ExperimentResult, GridScore,
    RepeatRecord, Summary, RESULT_CSV, RESULT_FORMAT, RESULT_JSON,
};

use crate::datagen::SyntheticSpec;
use crate::error::{PnnError, Result};
use crate::pnn::PnnConfig;
use crate::train::{JointConfig, Mode};

/// Where the observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    /// A fresh synthetic instance per repeat, seeded by the repeat seed.
    Synthetic(SyntheticSpec),
    /// Fixed data read from disk; only the split changes between repeats.
    Csv {
        features: PathBuf,
        targets: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// One point of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub layers: usize,
    pub features: usize,
    pub order: usize,
    pub lambda0: f64,
}

impl GridCell {
    pub fn from_configs(pnn: &PnnConfig, joint: &JointConfig) -> Self {
        GridCell {
            layers: pnn.layers(),
            features: pnn.widths.first().copied().unwrap_or(0),
            order: pnn.filter_order,
            lambda0: joint.lambda0,
        }
    }

    pub fn apply(&self, pnn: &PnnConfig, joint: &JointConfig) -> (PnnConfig, JointConfig) {
        let mut p = pnn.clone();
        p.widths = vec![self.features; self.layers];
        p.filter_order = self.order;
        let j = JointConfig {
            lambda0: self.lambda0,
            ..joint.clone()
        };
        (p, j)
    }
}

/// Candidate values per tunable; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub layers: Vec<usize>,
    pub features: Vec<usize>,
    pub order: Vec<usize>,
    pub lambda0: Vec<f64>,
}

impl Grid {
    /// The ranges searched in the reference experiments (54 cells).
    pub fn reference() -> Self {
        Grid {
            layers: vec![1, 2, 3],
            features: vec![8, 16],
            order: vec![1, 2, 3],
            lambda0: vec![1.0, 10.0, 20.0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty() && self.features.is_empty() && self.order.is_empty() && self.lambda0.is_empty()
    }

    /// Cartesian product in `layers, features, order, lambda0` order, the
    /// last varying fastest.
    pub fn cells(&self, base: GridCell) -> Vec<GridCell> {
        fn or<T: Copy>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for &layers in &or(&self.layers, base.layers) {
            for &features in &or(&self.features, base.features) {
                for &order in &or(&self.order, base.order) {
                    for &lambda0 in &or(&self.lambda0, base.lambda0) {
                        out.push(GridCell {
                            layers,
                            features,
                            order,
                            lambda0,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub data: DataSource,
    pub split: [f64; 3],
    pub repeats: usize,
    /// Seed of the first repeat; repeat `r` uses `seed + r` unless `seeds`
    /// lists them explicitly.
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
    pub joint: JointConfig,
    pub pnn: PnnConfig,
    pub grid: Grid,
    /// Skip selection and use this cell, e.g. one chosen on another setting.
    pub fixed: Option<GridCell>,
    /// Record per-repeat wall-clock time (makes the output nondeterministic).
    pub timing: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Joint,
            data: DataSource::default(),
            split: [0.6, 0.2, 0.2],
            repeats: 5,
            seed: 0,
            seeds: None,
            joint: JointConfig::default(),
            pnn: PnnConfig::default(),
            grid: Grid::default(),
            fixed: None,
            timing: false,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PnnError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PnnError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PnnError::Format(e.to_string()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repeats as u64).map(|r| self.seed.wrapping_add(r)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_fractions(&self.split)?;
        if self.repeats == 0 {
            return Err(PnnError::arg("repeats must be at least 1"));
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.repeats {
                return Err(PnnError::arg(format!(
                    "{} seeds listed for {} repeats",
                    s.len(),
                    self.repeats
                )));
            }
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.joint.validate()?;
        self.pnn.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("configs always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
