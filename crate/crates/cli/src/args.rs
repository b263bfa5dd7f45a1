use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use pnn_core::datagen::{SnrScale, SyntheticSpec};
use pnn_core::harness::{DataSource, ExperimentConfig, GridCell};
use pnn_core::metrics::TetherAnchor;
use pnn_core::train::Mode;
use pnn_core::{PnnError, Result};

#[derive(Parser, Debug)]
#[command(name = "pnn", version, about = "Precision neural networks with joint sparse precision estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic instance and write it as CSV.
    Synth(SynthArgs),
    /// Fit a graphical-lasso precision estimate to a feature table.
    Glasso(GlassoArgs),
    /// Train one estimator and report validation and test metrics.
    Train(TrainArgs),
    /// Grid selection plus repeated test runs, written to result files.
    Experiment(ExperimentArgs),
    /// Empirical convergence rate of the tethered precision estimator.
    RateCheck(RateCheckArgs),
}

/// Synthetic data settings shared by several subcommands.
#[derive(Args, Debug, Clone, Default)]
pub struct SyntheticFlags {
    /// Number of nodes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    pub t: Option<usize>,
    /// Fraction of nonzero precision entries.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub snr: Option<f64>,
    /// Read --snr in decibels instead of as a variance ratio.
    #[arg(long)]
    pub snr_db: bool,
}

impl SyntheticFlags {
    fn any(&self) -> bool {
        self.n.is_some() || self.t.is_some() || self.sparsity.is_some() || self.snr.is_some() || self.snr_db
    }

    fn apply(&self, spec: &mut SyntheticSpec) {
        if let Some(v) = self.n {
            spec.n = v;
        }
        if let Some(v) = self.t {
            spec.t = v;
        }
        if let Some(v) = self.sparsity {
            spec.sparsity = v;
        }
        if let Some(v) = self.snr {
            spec.snr = v;
        }
        if self.snr_db {
            spec.snr_scale = SnrScale::Decibel;
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub data: SynthData,
    /// Directory receiving features.csv, targets.csv, theta0.csv and instance.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthData {
    #[command(flatten)]
    pub synthetic: SyntheticFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthData {
    pub fn spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec {
            seed: self.seed,
            ..Default::default()
        };
        self.synthetic.apply(&mut spec);
        spec
    }
}

#[derive(Args, Debug)]
pub struct GlassoArgs {
    /// Feature table, one node per row and one sample per column.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub header: bool,
    /// The sparsity weight is lambda0 * sqrt(log n / t).
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = pnn_core::glasso::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = pnn_core::glasso::DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 2.0)]
    pub m_overshoot: f64,
    /// Diagonal loading of the inverse covariance used as the start point.
    #[arg(long, default_value_t = 1e-4)]
    pub ridge: f64,
    /// Write the estimate here as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A TOML experiment file plus flags that override its fields.
#[derive(Args, Debug)]
pub struct ConfigFlags {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Feature CSV; selects CSV data instead of synthetic data.
    #[arg(long, requires = "targets")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub targets: Option<PathBuf>,
    /// The CSV files start with a header row.
    #[arg(long)]
    pub header: bool,
    #[command(flatten)]
    pub synthetic: SyntheticFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train/validation/test fractions, e.g. 0.6,0.2,0.2.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Scale features to unit training variance.
    #[arg(long)]
    pub standardize: bool,
    /// Number of PNN layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Filters per layer.
    #[arg(long)]
    pub width: Option<usize>,
    /// Filter order.
    #[arg(long)]
    pub order: Option<usize>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let (Some(f), Some(t)) = (&self.features, &self.targets) {
            cfg.data = DataSource::Csv {
                features: f.clone(),
                targets: t.clone(),
                header: self.header,
            };
        } else if self.header {
            if let DataSource::Csv { header, .. } = &mut cfg.data {
                *header = true;
            }
        }
        match &mut cfg.data {
            DataSource::Synthetic(spec) => self.synthetic.apply(spec),
            DataSource::Csv { .. } if self.synthetic.any() => {
                return Err(PnnError::arg("synthetic data flags cannot be combined with CSV data"));
            }
            DataSource::Csv { .. } => {}
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.seeds = None;
            // The synthetic instance of a single run follows the run seed.
            if let DataSource::Synthetic(spec) = &mut cfg.data {
                spec.seed = s;
            }
        }
        if let Some(s) = &self.split {
            cfg.split = [s[0], s[1], s[2]];
        }
        let j = &mut cfg.joint;
        for (slot, v) in [
            (&mut j.alpha, self.alpha),
            (&mut j.gamma, self.gamma),
            (&mut j.lambda0, self.lambda0),
            (&mut j.eta, self.eta),
            (&mut j.beta, self.beta),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(e) = self.epochs {
            j.epochs = e;
        }
        if self.batch_size.is_some() {
            j.batch_size = self.batch_size;
        }
        if self.standardize {
            j.standardize = true;
        }
        let p = &mut cfg.pnn;
        let layers = self.layers.unwrap_or(p.widths.len());
        let width = self.width.or(p.widths.first().copied()).unwrap_or(8);
        if self.layers.is_some() || self.width.is_some() {
            p.widths = vec![width; layers];
        }
        if let Some(k) = self.order {
            p.filter_order = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    /// Save the trained model as JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// `layers,features,order,lambda0`.
#[derive(Clone, Copy, Debug)]
pub struct CellArg(pub GridCell);

impl FromStr for CellArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err("expected layers,features,order,lambda0".into());
        }
        let int = |p: &str| p.parse::<usize>().map_err(|e| format!("'{p}': {e}"));
        Ok(CellArg(GridCell {
            layers: int(parts[0])?,
            features: int(parts[1])?,
            order: int(parts[2])?,
            lambda0: parts[3].parse().map_err(|e| format!("'{}': {e}", parts[3]))?,
        }))
    }
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Search the full reference grid (54 cells).
    #[arg(long)]
    pub reference_grid: bool,
    /// Skip selection and use this cell: layers,features,order,lambda0.
    #[arg(long)]
    pub fixed: Option<CellArg>,
    /// Record wall-clock time per repeat.
    #[arg(long)]
    pub timing: bool,
    /// Directory for result.json and repeats.csv.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RateCheckArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "200,800,3200,12800")]
    pub t_grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 400)]
    pub iters: usize,
    /// Tether anchor: the ground truth or zero.
    #[arg(long, value_parser = parse_anchor, default_value = "truth")]
    pub anchor: TetherAnchor,
    /// Write the report as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_anchor(s: &str) -> std::result::Result<TetherAnchor, String> {
    match s.to_ascii_lowercase().as_str() {
        "truth" => Ok(TetherAnchor::Truth),
        "zero" => Ok(TetherAnchor::Zero),
        _ => Err(format!("unknown anchor '{s}', expected truth or zero")),
    }
}
