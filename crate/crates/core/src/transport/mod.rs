//! Learned time-dependent transport between snapshot densities.
//!
//! A displacement network `u(X, t)` carries samples of the reference density
//! forward in pseudo-time; mass conservation `ρ(x, t) = ρ₀(X) / det F` gives
//! the transported density, and a body-force network closes the equation of
//! motion `∂²u/∂t² − G ΔX u = F_b`.

mod field;
mod generate;
mod loss;
mod mechanics;
mod time;
mod train;

use serde::{Deserialize, Serialize};

use crate::density::{min_max, DensityModel};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Versioned};
use crate::reduction::PcaBasis;

pub use field::{BodyForceArch, BodyForceField, DataScaler, DisplacementArch, DisplacementField, DisplacementVars};
pub use generate::{generate_density, generate_mean, nrmse, GeneratedCloud, MeanData};
pub use loss::{loss, loss_with_samples, LossTerms};
pub use mechanics::{deformation_gradient, eom_residual, first_pk_stress, neo_hookean_energy};
pub use time::{PseudoTimeNormalizer, TimeScale};
pub use train::{train, train_from};

/// Time band allowed for finite-difference stencils around `t ∈ [0, 1]`.
pub const TIME_GUARD_BAND: (f64, f64) = (-0.05, 1.05);
pub const MODEL_FORMAT: &str = "cmgai-model";
const SCALER_SAMPLES: usize = 1024;

/// A source boundary point and where it must land at a snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub density: DensityModel,
    #[serde(default)]
    pub boundary: Vec<BoundaryPair>,
}

/// How boundary pairs are derived from the snapshot densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// No pairs; the boundary term vanishes.
    None,
    /// First and last points of each mean curve.
    CurveEndpoints,
    /// `mean ± 2σ·e_k` along every reduced axis.
    SigmaAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDataset {
    /// Sorted by `t`; the first snapshot is the reference at `t = 0`.
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotDataset {
    pub fn new(mut snapshots: Vec<Snapshot>) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::invalid("transport needs at least two snapshots"));
        }
        snapshots.sort_by(|a, b| a.t.total_cmp(&b.t));
        if snapshots[0].t != 0.0 {
            return Err(Error::invalid("the earliest snapshot must sit at t = 0"));
        }
        if snapshots.windows(2).any(|w| w[0].t == w[1].t) {
            return Err(Error::invalid("snapshot times must be distinct"));
        }
        if snapshots.iter().any(|s| !(0.0..=1.0).contains(&s.t)) {
            return Err(Error::OutOfRange("snapshot time outside [0, 1]".into()));
        }
        let dim = snapshots[0].density.dim();
        for s in &snapshots {
            crate::error::check_dim(dim, s.density.dim())?;
            for b in &s.boundary {
                crate::error::check_dim(dim, b.source.len())?;
                crate::error::check_dim(dim, b.target.len())?;
            }
        }
        Ok(SnapshotDataset { snapshots })
    }

    /// Builds a dataset and attaches boundary pairs according to `rule`.
    pub fn with_boundary(snapshots: Vec<(f64, DensityModel)>, rule: BoundaryRule) -> Result<Self> {
        let mut ds = Self::new(
            snapshots
                .into_iter()
                .map(|(t, density)| Snapshot {
                    t,
                    density,
                    boundary: Vec::new(),
                })
                .collect(),
        )?;
        let anchors: Vec<Vec<Vec<f64>>> = ds
            .snapshots
            .iter()
            .map(|s| boundary_points(&s.density, rule))
            .collect::<Result<_>>()?;
        let source = anchors[0].clone();
        for (s, target) in ds.snapshots.iter_mut().zip(anchors) {
            s.boundary = source
                .iter()
                .zip(target)
                .map(|(a, b)| BoundaryPair {
                    source: a.clone(),
                    target: b,
                })
                .collect();
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].density.dim()
    }

    pub fn reference(&self) -> &DensityModel {
        &self.snapshots[0].density
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Pools draws from every snapshot to fit the coordinate scaler.
    pub fn fit_scaler(&self, seed: u64) -> Result<DataScaler> {
        let parts: Vec<Matrix> = self
            .snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| s.density.sample(SCALER_SAMPLES, crate::rng::mix_seed(seed, i as u64)))
            .collect();
        let refs: Vec<&Matrix> = parts.iter().collect();
        DataScaler::fit(&Matrix::vstack(&refs))
    }
}

fn boundary_points(density: &DensityModel, rule: BoundaryRule) -> Result<Vec<Vec<f64>>> {
    match (rule, density) {
        (BoundaryRule::None, _) => Ok(Vec::new()),
        (BoundaryRule::CurveEndpoints, DensityModel::Curve(c)) => {
            let last = c.strain_grid.len() - 1;
            Ok(vec![
                vec![c.strain_grid[0], c.mean_stress[0]],
                vec![c.strain_grid[last], c.mean_stress[last]],
            ])
        }
        (BoundaryRule::SigmaAxes, DensityModel::Reduced(r)) => {
            let mut pts = Vec::with_capacity(2 * r.mean.len());
            for k in 0..r.mean.len() {
                for sign in [1.0, -1.0] {
                    let mut p = r.mean.clone();
                    p[k] += sign * 2.0 * r.sigma;
                    pts.push(p);
                }
            }
            Ok(pts)
        }
        _ => Err(Error::invalid(format!(
            "boundary rule {rule:?} does not apply to this density family"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// Keep the parameters with the lowest training loss.
    BestTraining,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weights of the density, boundary and equation-of-motion terms.
    pub weights: [f64; 3],
    /// Divide each weight by its term's value at epoch 0.
    pub auto_rescale: bool,
    pub rescale_floor: f64,
    pub epochs: usize,
    /// Monte-Carlo draws from the reference density per epoch.
    pub batch_size: usize,
    /// Draws used by the equation-of-motion term; defaults to `batch_size`.
    pub collocation_samples: Option<usize>,
    /// Number of collocation times `j/(n′+1)` in (0, 1).
    pub collocation_times: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    pub shear_modulus: f64,
    pub seed: u64,
    pub checkpoint: CheckpointPolicy,
    /// Multiply the displacement by `t` so that `u(X, 0) = 0` exactly.
    pub hard_identity: bool,
    pub grad_clip: Option<f64>,
    pub displacement: DisplacementArch,
    pub body_force: BodyForceArch,
    pub generation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: [1.0, 1.0, 1.0],
            auto_rescale: true,
            rescale_floor: 1e-30,
            epochs: 2000,
            batch_size: crate::density::DEFAULT_SAMPLES_PER_EPOCH,
            collocation_samples: None,
            collocation_times: 21,
            learning_rate: 1e-3,
            fd_step: 1e-3,
            shear_modulus: 0.0,
            seed: 0,
            checkpoint: CheckpointPolicy::BestTraining,
            hard_identity: true,
            grad_clip: None,
            displacement: DisplacementArch::default(),
            body_force: BodyForceArch::default(),
            generation_samples: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("loss weights must be non-negative with a positive sum"));
        }
        if self.collocation_times < 2 {
            return Err(Error::invalid("at least two collocation times are required"));
        }
        if self.batch_size == 0 || self.collocation_samples == Some(0) || self.generation_samples == 0 {
            return Err(Error::invalid("sample counts must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.fd_step > 0.0) || !(self.shear_modulus >= 0.0) {
            return Err(Error::invalid("learning rate and step must be positive, shear modulus non-negative"));
        }
        if self.fd_step > TIME_GUARD_BAND.1 - 1.0 {
            return Err(Error::invalid("finite-difference step exceeds the time guard band"));
        }
        Ok(())
    }

    pub fn collocation_samples(&self) -> usize {
        self.collocation_samples.unwrap_or(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub total: f64,
    pub density: f64,
    pub boundary: f64,
    pub motion: f64,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub history: Vec<EpochRecord>,
    pub effective_weights: [f64; 3],
    pub best_epoch: Option<usize>,
    /// Fraction of reference draws with `det F ≤ 0` at the snapshot times,
    /// measured on the returned parameters.
    pub negative_jacobian_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmGaiModel {
    pub displacement: DisplacementField,
    pub body_force: BodyForceField,
    pub scaler: DataScaler,
    /// Density at `t = 0`, pushed forward during generation.
    pub reference: DensityModel,
    pub normalizer: Option<PseudoTimeNormalizer>,
    pub config: TrainConfig,
    pub pca: Option<PcaBasis>,
    pub diagnostics: TrainingDiagnostics,
}

impl CmGaiModel {
    /// Untrained model for `dataset`.
    pub fn init(dataset: &SnapshotDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let dim = dataset.dim();
        Ok(CmGaiModel {
            displacement: DisplacementField::new(
                dim,
                &config.displacement,
                config.hard_identity,
                crate::rng::mix_seed(config.seed, 0xD1),
            )?,
            body_force: BodyForceField::new(dim, &config.body_force, crate::rng::mix_seed(config.seed, 0xF1))?,
            scaler: dataset.fit_scaler(crate::rng::mix_seed(config.seed, 0x5C))?,
            reference: dataset.reference().clone(),
            normalizer: None,
            config: config.clone(),
            pca: None,
            diagnostics: TrainingDiagnostics::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.displacement.dim()
    }

    pub fn is_trained(&self) -> bool {
        !self.diagnostics.history.is_empty()
    }

    pub(crate) fn flat_params(&self) -> Vec<f64> {
        let mut v = self.displacement.flat_params();
        v.extend(self.body_force.net.flat_params());
        v
    }

    pub(crate) fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let off = self.displacement.set_flat_params(flat)?;
        self.body_force.net.set_flat_params(&flat[off..])?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Versioned::new(MODEL_FORMAT, self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Versioned::<CmGaiModel>::from_json(text, MODEL_FORMAT)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Versioned::new(MODEL_FORMAT, self.clone()).save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Versioned::<CmGaiModel>::load(path, MODEL_FORMAT)
    }
}

/// Largest absolute coordinate range, used for default reduced-space sigmas.
pub fn max_coordinate_range(points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    (0..points[0].len())
        .map(|k| {
            let col: Vec<f64> = points.iter().map(|p| p[k]).collect();
            let (lo, hi) = min_max(&col);
            hi - lo
        })
        .fold(0.0, f64::max)
}
