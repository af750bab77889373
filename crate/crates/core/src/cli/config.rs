//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{FixtureFiles, FixtureKind};
use crate::baseline::BaselineConfig;
use crate::density::{DEFAULT_CURVE_SIGMA_FRACTION, DEFAULT_REDUCED_SIGMA_FRACTION};
use crate::error::{Error, Result};
use crate::reduction::DEFAULT_REDUCED_DIM;
use crate::transport::{BoundaryRule, TimeScale, TrainConfig};

pub const DEFAULT_FIELD_SAMPLES: usize = 200;
pub const DEFAULT_FIELD_NOISE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Curves,
    Fields,
}

impl From<FixtureKind> for Task {
    fn from(k: FixtureKind) -> Self {
        match k {
            FixtureKind::Curves => Task::Curves,
            FixtureKind::Fields => Task::Fields,
        }
    }
}

/// How raw conditions map to pseudo-time. Missing bounds default to the
/// smallest training condition and the largest of the training conditions
/// and the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub mode: TimeScale,
    pub unit: String,
    pub raw_min: Option<f64>,
    pub raw_max: Option<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            mode: TimeScale::Linear,
            unit: String::new(),
            raw_min: None,
            raw_max: None,
        }
    }
}

/// Everything needed to run ingest → train → generate → compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Training CSV files; rows are grouped by condition across files.
    pub data: Vec<PathBuf>,
    /// Raw condition at which to generate.
    pub target_condition: Option<f64>,
    /// Ground truth at the target condition, if known.
    pub reference: Option<PathBuf>,
    pub time: TimeConfig,
    /// Curve density width as a fraction of each curve's stress range.
    pub curve_sigma_fraction: f64,
    /// Reduced-space density width as a fraction of the largest coordinate
    /// range of the snapshot means.
    pub reduced_sigma_fraction: f64,
    /// Noisy draws per field snapshot used to fit the PCA basis.
    pub field_samples: usize,
    /// Std of those draws as a fraction of the field's value range.
    pub field_noise_fraction: f64,
    pub pca_dim: usize,
    /// Defaults to curve endpoints for curves and sigma axes for fields.
    pub boundary: Option<BoundaryRule>,
    pub train: TrainConfig,
    pub baseline: bool,
    pub baseline_config: BaselineConfig,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub plot: bool,
    /// Store elapsed time in the report (makes reports differ run to run).
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Curves,
            data: Vec::new(),
            target_condition: None,
            reference: None,
            time: TimeConfig::default(),
            curve_sigma_fraction: DEFAULT_CURVE_SIGMA_FRACTION,
            reduced_sigma_fraction: DEFAULT_REDUCED_SIGMA_FRACTION,
            field_samples: DEFAULT_FIELD_SAMPLES,
            field_noise_fraction: DEFAULT_FIELD_NOISE_FRACTION,
            pca_dim: DEFAULT_REDUCED_DIM,
            boundary: None,
            train: TrainConfig::default(),
            baseline: false,
            baseline_config: BaselineConfig::default(),
            out_dir: None,
            seed: 0,
            plot: true,
            record_wall_clock: true,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.iter_mut().for_each(fix);
        if let Some(r) = cfg.reference.as_mut() {
            fix(r);
        }
        if let Some(o) = cfg.out_dir.as_mut() {
            fix(o);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn boundary_rule(&self) -> BoundaryRule {
        self.boundary.unwrap_or(match self.task {
            Task::Curves => BoundaryRule::CurveEndpoints,
            Task::Fields => BoundaryRule::SigmaAxes,
        })
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::invalid("config lists no data files"));
        }
        for p in self.data.iter().chain(&self.reference) {
            if !p.is_file() {
                return Err(Error::invalid(format!("data file {} does not exist", p.display())));
            }
        }
        if self.reference.is_some() && self.target_condition.is_none() {
            return Err(Error::invalid("a reference file needs target_condition"));
        }
        if let Some(t) = self.target_condition {
            if !t.is_finite() {
                return Err(Error::NonFinite("target_condition".into()));
            }
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.curve_sigma_fraction) || !positive(self.reduced_sigma_fraction) {
            return Err(Error::invalid("density sigma fractions must be positive"));
        }
        if self.task == Task::Fields {
            if self.pca_dim == 0 || self.field_samples == 0 || !positive(self.field_noise_fraction) {
                return Err(Error::invalid("field runs need pca_dim, field_samples and a positive noise fraction"));
            }
            if self.baseline {
                return Err(Error::Unsupported("the FPCA-GPR baseline applies to curve tasks only".into()));
            }
        }
        self.train_config().validate()
    }

    /// Settings used for the synthetic acceptance fixtures.
    pub fn for_fixture(kind: FixtureKind, files: &FixtureFiles, seed: u64) -> Self {
        let mut train = TrainConfig {
            batch_size: 64,
            collocation_times: 8,
            ..TrainConfig::default()
        };
        train.displacement.hidden = vec![32; 3];
        train.body_force.hidden = vec![32; 3];
        let (unit, task) = match kind {
            FixtureKind::Curves => {
                train.epochs = 1500;
                train.learning_rate = 3e-3;
                train.displacement.fourier_features = Some(8);
                ("degC", Task::Curves)
            }
            FixtureKind::Fields => {
                train.epochs = 1000;
                train.learning_rate = 1e-2;
                train.weights = [1.0, 1.0, 0.1];
                train.displacement.fourier_features = None;
                train.body_force.dropout = 0.0;
                ("m/s", Task::Fields)
            }
        };
        RunConfig {
            task,
            data: files.train.clone(),
            target_condition: Some(files.target_condition),
            reference: Some(files.target.clone()),
            time: TimeConfig {
                mode: TimeScale::Linear,
                unit: unit.into(),
                raw_min: Some(files.condition_range.0),
                raw_max: Some(files.condition_range.1),
            },
            train,
            seed,
            ..RunConfig::default()
        }
    }
}
