//! The end-to-end pipeline behind `run`, plus the pieces `train` and
//! `generate` reuse.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Task};
use super::ingest::{ingest_curves, ingest_fields, FieldSnapshot};
use super::plot::{emit_plot, PlotLabels, Series};
use crate::baseline::FpcaGpr;
use crate::density::{
    field_to_samples, min_max, resample_to_grid, CurveSnapshot, DensityModel, GaussianCurveDensity,
    ReducedGaussianDensity,
};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::reduction::{fit_pca, PcaBasis};
use crate::rng::mix_seed;
use crate::transport::{
    generate_density, generate_mean, max_coordinate_range, nrmse, train_from, CmGaiModel, EpochRecord, MeanData,
    PseudoTimeNormalizer, SnapshotDataset,
};

/// Largest tolerated share of reference draws with `det F ≤ 0`.
pub const MAX_NEGATIVE_JACOBIAN_FRACTION: f64 = 0.01;

/// Training data after ingestion.
#[derive(Debug, Clone)]
pub enum Observations {
    Curves(Vec<CurveSnapshot>),
    Fields(Vec<FieldSnapshot>),
}

impl Observations {
    pub fn conditions(&self) -> Vec<f64> {
        match self {
            Observations::Curves(c) => c.iter().map(|c| c.condition).collect(),
            Observations::Fields(f) => f.iter().map(|f| f.condition).collect(),
        }
    }
}

/// A dataset ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub observations: Observations,
    pub normalizer: PseudoTimeNormalizer,
    pub dataset: SnapshotDataset,
    pub pca: Option<PcaBasis>,
}

pub fn ingest(task: Task, paths: &[PathBuf]) -> Result<Observations> {
    match task {
        Task::Curves => {
            let mut all = Vec::new();
            for p in paths {
                all.extend(ingest_curves(p)?);
            }
            all.sort_by(|a, b| a.condition.total_cmp(&b.condition));
            if all.windows(2).any(|w| w[0].condition == w[1].condition) {
                return Err(Error::invalid("the same condition appears in more than one file"));
            }
            Ok(Observations::Curves(all))
        }
        Task::Fields => {
            let mut all: Vec<FieldSnapshot> = Vec::new();
            for p in paths {
                for snap in ingest_fields(p)? {
                    match all.iter_mut().find(|s| s.condition == snap.condition) {
                        Some(s) => s.rows.extend(snap.rows),
                        None => all.push(snap),
                    }
                }
            }
            all.sort_by(|a, b| a.condition.total_cmp(&b.condition));
            let dim = all[0].dim();
            if all.iter().any(|s| s.dim() != dim) {
                return Err(Error::invalid("field files disagree on dimension"));
            }
            Ok(Observations::Fields(all))
        }
    }
}

/// Guesses the task from a CSV header: a `strain` column means curves.
pub fn detect_task(path: &Path) -> Result<Task> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or_default().to_ascii_lowercase();
    Ok(if header.split(',').any(|c| c.trim() == "strain") {
        Task::Curves
    } else {
        Task::Fields
    })
}

fn normalizer(config: &RunConfig, conditions: &[f64]) -> Result<PseudoTimeNormalizer> {
    let (lo, hi) = min_max(conditions);
    let hi = config.target_condition.map_or(hi, |t| hi.max(t));
    PseudoTimeNormalizer::new(
        config.time.mode,
        config.time.raw_min.unwrap_or(lo),
        config.time.raw_max.unwrap_or(hi),
        config.time.unit.clone(),
    )
}

/// Builds snapshot densities (and a PCA basis for fields).
pub fn prepare(config: &RunConfig, observations: Observations) -> Result<Prepared> {
    let conditions = observations.conditions();
    if conditions.len() < 2 {
        return Err(Error::invalid("transport needs at least two distinct conditions"));
    }
    let normalizer = normalizer(config, &conditions)?;
    let times = conditions
        .iter()
        .map(|&c| normalizer.normalize(c))
        .collect::<Result<Vec<f64>>>()?;
    let (snapshots, pca) = match &observations {
        Observations::Curves(curves) => {
            let snaps = curves
                .iter()
                .zip(&times)
                .map(|(c, &t)| {
                    let sigma = config.curve_sigma_fraction * c.stress_range();
                    Ok((t, DensityModel::Curve(GaussianCurveDensity::from_curve(c, Some(sigma))?)))
                })
                .collect::<Result<Vec<_>>>()?;
            (snaps, None)
        }
        Observations::Fields(fields) => {
            let means: Vec<Vec<f64>> = fields.iter().map(|f| f.mean()).collect();
            let draws: Vec<Matrix> = means
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let (lo, hi) = min_max(m);
                    let sigma = config.field_noise_fraction * (hi - lo).max(f64::MIN_POSITIVE);
                    field_to_samples(m, sigma, config.field_samples, mix_seed(config.seed, 0xF5_0000 + i as u64))
                })
                .collect();
            let refs: Vec<&Matrix> = draws.iter().collect();
            let basis = fit_pca(&Matrix::vstack(&refs), config.pca_dim)?;
            let reduced = means.iter().map(|m| basis.project(m)).collect::<Result<Vec<_>>>()?;
            let sigma = config.reduced_sigma_fraction * max_coordinate_range(&reduced);
            let snaps = reduced
                .into_iter()
                .zip(&times)
                .map(|(m, &t)| Ok((t, DensityModel::Reduced(ReducedGaussianDensity::new(m, sigma)?))))
                .collect::<Result<Vec<_>>>()?;
            (snaps, Some(basis))
        }
    };
    let dataset = SnapshotDataset::with_boundary(snapshots, config.boundary_rule())?;
    Ok(Prepared {
        observations,
        normalizer,
        dataset,
        pca,
    })
}

/// Initialises and trains a model on `prepared`.
pub fn fit_model(config: &RunConfig, prepared: &Prepared) -> Result<CmGaiModel> {
    let mut model = CmGaiModel::init(&prepared.dataset, &config.train_config())?;
    model.normalizer = Some(prepared.normalizer.clone());
    model.pca = prepared.pca.clone();
    train_from(model, &prepared.dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotScore {
    pub condition: f64,
    pub t: f64,
    pub nrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub dim: usize,
    pub explained_variance_ratio: Vec<f64>,
    /// `(absolute, relative)` distance of the target field from the basis.
    pub target_residual: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub seed: u64,
    pub trained: bool,
    pub generation_skipped: bool,
    pub target_condition: Option<f64>,
    pub target_time: Option<f64>,
    pub snapshot_nrmse: Vec<SnapshotScore>,
    pub target_nrmse: Option<f64>,
    pub baseline_nrmse: Option<f64>,
    /// Share of generated particles dropped for `det F ≤ 0`.
    pub dropped_fraction: Option<f64>,
    pub negative_jacobian_fraction: f64,
    pub jacobian_check_passed: bool,
    pub effective_weights: [f64; 3],
    pub best_epoch: Option<usize>,
    pub loss_history: Vec<EpochRecord>,
    pub pca: Option<PcaSummary>,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// The report with the elapsed time cleared, for run-to-run comparison.
    pub fn without_wall_clock(&self) -> Self {
        ExperimentReport {
            wall_clock_seconds: None,
            ..self.clone()
        }
    }

    fn check_finite(&self) -> Result<()> {
        let mut values: Vec<f64> = vec![self.negative_jacobian_fraction];
        values.extend(self.effective_weights);
        values.extend(self.snapshot_nrmse.iter().filter_map(|s| s.nrmse));
        values.extend(self.target_nrmse);
        values.extend(self.baseline_nrmse);
        values.extend(self.dropped_fraction);
        for r in &self.loss_history {
            values.extend([r.total, r.density, r.boundary, r.motion]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("experiment report".into()));
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `strain,stress` rows.
pub fn curve_csv(strains: &[f64], stresses: &[f64]) -> String {
    let mut s = String::from("strain,stress\n");
    for (e, v) in strains.iter().zip(stresses) {
        let _ = writeln!(s, "{e},{v}");
    }
    s
}

/// One `v1..vD` row.
pub fn field_csv(values: &[f64]) -> String {
    let header: Vec<String> = (1..=values.len()).map(|k| format!("v{k}")).collect();
    let row: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

/// Generated curve restricted to the strains the reference covers, with the
/// reference resampled onto them.
pub fn align_curve(strains: &[f64], stresses: &[f64], reference: &CurveSnapshot) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = reference.strain_range();
    let keep: Vec<usize> = (0..strains.len()).filter(|&i| strains[i] >= lo && strains[i] <= hi).collect();
    if keep.len() < 2 {
        return Err(Error::invalid("generated and reference curves barely overlap in strain"));
    }
    let grid: Vec<f64> = keep.iter().map(|&i| strains[i]).collect();
    let pred: Vec<f64> = keep.iter().map(|&i| stresses[i]).collect();
    let target = resample_to_grid(reference, &grid)?;
    Ok((pred, target))
}

fn load_reference(task: Task, path: &Path, condition: f64) -> Result<Reference> {
    match ingest(task, &[path.to_path_buf()])? {
        Observations::Curves(c) => {
            let pick = if c.len() == 1 {
                c.into_iter().next()
            } else {
                c.into_iter().find(|c| c.condition == condition)
            };
            pick.map(Reference::Curve)
                .ok_or_else(|| Error::invalid(format!("reference has no curve at condition {condition}")))
        }
        Observations::Fields(f) => {
            let pick = if f.len() == 1 {
                f.first()
            } else {
                f.iter().find(|f| f.condition == condition)
            };
            pick.map(|f| Reference::Field(f.mean()))
                .ok_or_else(|| Error::invalid(format!("reference has no field at condition {condition}")))
        }
    }
}

#[derive(Debug, Clone)]
pub enum Reference {
    Curve(CurveSnapshot),
    Field(Vec<f64>),
}

/// NRMSE of a generated mean against a reference.
pub fn score_mean(mean: &MeanData, reference: &Reference) -> Result<f64> {
    match (mean, reference) {
        (MeanData::Curve { strains, stresses }, Reference::Curve(c)) => {
            let (pred, target) = align_curve(strains, stresses, c)?;
            nrmse(&pred, &target)
        }
        (MeanData::Field { values }, Reference::Field(f)) => nrmse(values, f),
        _ => Err(Error::invalid("reference kind does not match the model")),
    }
}

/// Outputs of generating at one condition.
#[derive(Debug, Clone)]
pub struct Generated {
    pub t: f64,
    pub mean: MeanData,
    pub dropped_fraction: f64,
    pub cloud: Option<(Matrix, Vec<f64>)>,
}

/// Generates the mean (and for curves the particle cloud) at a raw condition.
pub fn generate_at(model: &CmGaiModel, condition: f64) -> Result<Generated> {
    let norm = model
        .normalizer
        .as_ref()
        .ok_or_else(|| Error::invalid("model carries no condition normalizer"))?;
    let t = norm.normalize(condition)?;
    let mean = generate_mean(model, t)?;
    let cloud = generate_density(model, t)?;
    let dropped_fraction = cloud.dropped_fraction();
    let cloud = match mean {
        MeanData::Curve { .. } => Some((cloud.particles, cloud.density)),
        _ => None,
    };
    Ok(Generated {
        t,
        mean,
        dropped_fraction,
        cloud,
    })
}

/// Writes the generated mean (`strain,stress` or `v1..vD`) to `path`.
pub fn write_mean(mean: &MeanData, path: &Path) -> Result<()> {
    let text = match mean {
        MeanData::Curve { strains, stresses } => curve_csv(strains, stresses),
        MeanData::Field { values } | MeanData::Vector { values } => field_csv(values),
    };
    write_text(path, &text)
}

fn mean_series(label: &str, mean: &MeanData) -> Series {
    match mean {
        MeanData::Curve { strains, stresses } => Series::line(label, strains, stresses),
        MeanData::Field { values } | MeanData::Vector { values } => {
            let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
            Series::line(label, &idx, values)
        }
    }
}

/// Runs the full pipeline and writes every artifact into the output
/// directory. A stage failure aborts with the stage name; artifacts written
/// before it stay on disk.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate().map_err(|e| e.in_stage("config"))?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::invalid("no output directory configured").in_stage("config"))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut artifacts: Vec<String> = Vec::new();
    let mut save = |name: &str, text: &str| -> Result<()> {
        write_text(&out.join(name), text)?;
        artifacts.push(name.to_string());
        Ok(())
    };
    save("config.json", &(serde_json::to_string_pretty(config)? + "\n"))?;

    let observations = ingest(config.task, &config.data).map_err(|e| e.in_stage("ingest"))?;
    let reference = match (&config.reference, config.target_condition) {
        (Some(p), Some(c)) => Some(load_reference(config.task, p, c).map_err(|e| e.in_stage("ingest"))?),
        _ => None,
    };
    let prepared = prepare(config, observations).map_err(|e| e.in_stage("density"))?;
    info!("prepared {} snapshots", prepared.dataset.snapshots.len());

    let model = match fit_model(config, &prepared) {
        Ok(m) => m,
        Err(Error::Diverged { epoch, checkpoint }) => {
            let _ = checkpoint.save(&out.join("model_checkpoint.json"));
            return Err(Error::Diverged { epoch, checkpoint }.in_stage("train"));
        }
        Err(e) => return Err(e.in_stage("train")),
    };
    model.save(&out.join("model.json")).map_err(|e| e.in_stage("train"))?;
    artifacts.push("model.json".into());

    let trained = model.is_trained();
    let diag = &model.diagnostics;
    let mut report = ExperimentReport {
        task: config.task,
        seed: config.seed,
        trained,
        generation_skipped: !trained,
        target_condition: config.target_condition,
        target_time: None,
        snapshot_nrmse: Vec::new(),
        target_nrmse: None,
        baseline_nrmse: None,
        dropped_fraction: None,
        negative_jacobian_fraction: diag.negative_jacobian_fraction,
        jacobian_check_passed: diag.negative_jacobian_fraction <= MAX_NEGATIVE_JACOBIAN_FRACTION,
        effective_weights: diag.effective_weights,
        best_epoch: diag.best_epoch,
        loss_history: diag.history.clone(),
        pca: prepared.pca.as_ref().map(|b| PcaSummary {
            dim: b.reduced_dim(),
            explained_variance_ratio: b.explained_variance_ratio.clone(),
            target_residual: None,
        }),
        artifacts: Vec::new(),
        wall_clock_seconds: None,
    };
    if !report.jacobian_check_passed {
        warn!(
            "{:.2}% of validation draws have det F ≤ 0 (limit {:.0}%)",
            100.0 * report.negative_jacobian_fraction,
            100.0 * MAX_NEGATIVE_JACOBIAN_FRACTION
        );
    }
    if let (Some(pca), Some(Reference::Field(f)), Some(summary)) = (&prepared.pca, &reference, report.pca.as_mut()) {
        summary.target_residual = Some(pca.subspace_residual(f).map_err(|e| e.in_stage("reduction"))?);
    }

    let mut plot_series: Vec<Series> = Vec::new();
    if let Observations::Curves(curves) = &prepared.observations {
        for c in curves {
            plot_series.push(Series::line(format!("data {}", c.condition), &c.strains, &c.stresses));
        }
    }

    if trained {
        let stage = |e: Error| e.in_stage("generate");
        for (snap, &cond) in prepared.dataset.snapshots.iter().zip(&prepared.observations.conditions()) {
            let mean = generate_mean(&model, snap.t).map_err(stage)?;
            let score = match &prepared.observations {
                Observations::Curves(c) => {
                    let obs = c.iter().find(|c| c.condition == cond).expect("snapshot has a curve");
                    score_mean(&mean, &Reference::Curve(obs.clone())).ok()
                }
                Observations::Fields(f) => {
                    let obs = f.iter().find(|f| f.condition == cond).expect("snapshot has a field");
                    score_mean(&mean, &Reference::Field(obs.mean())).ok()
                }
            };
            report.snapshot_nrmse.push(SnapshotScore {
                condition: cond,
                t: snap.t,
                nrmse: score,
            });
        }
        if let Some(target) = config.target_condition {
            let generated = generate_at(&model, target).map_err(stage)?;
            report.target_time = Some(generated.t);
            report.dropped_fraction = Some(generated.dropped_fraction);
            write_mean(&generated.mean, &out.join("generated.csv")).map_err(stage)?;
            artifacts.push("generated.csv".into());
            if let Some((particles, density)) = &generated.cloud {
                let mut text = String::from("strain,stress,density\n");
                for (r, d) in density.iter().enumerate() {
                    let _ = writeln!(text, "{},{},{}", particles.get(r, 0), particles.get(r, 1), d);
                }
                write_text(&out.join("generated_cloud.csv"), &text)?;
                artifacts.push("generated_cloud.csv".into());
            }
            if let Some(r) = &reference {
                report.target_nrmse = Some(score_mean(&generated.mean, r).map_err(stage)?);
            }
            plot_series.push(mean_series(&format!("generated {target}"), &generated.mean));
        }
    } else {
        warn!("model is untrained (epochs = 0); generation skipped");
    }

    if config.baseline {
        if let (Observations::Curves(curves), Some(target)) = (&prepared.observations, config.target_condition) {
            let stage = |e: Error| e.in_stage("baseline");
            let fitted = FpcaGpr::fit(curves, &config.baseline_config).map_err(stage)?;
            let (mean, std) = fitted.predict(target).map_err(stage)?;
            let mut text = String::from("strain,mean,std\n");
            for ((e, m), s) in fitted.strain_grid().iter().zip(&mean).zip(&std) {
                let _ = writeln!(text, "{e},{m},{s}");
            }
            write_text(&out.join("baseline.csv"), &text)?;
            artifacts.push("baseline.csv".into());
            if let Some(Reference::Curve(r)) = &reference {
                let (pred, truth) = align_curve(fitted.strain_grid(), &mean, r).map_err(stage)?;
                report.baseline_nrmse = Some(nrmse(&pred, &truth).map_err(stage)?);
            }
            plot_series.push(Series::line("baseline", fitted.strain_grid(), &mean));
        }
    }

    if let Some(r) = &reference {
        plot_series.push(match r {
            Reference::Curve(c) => Series::line("reference", &c.strains, &c.stresses),
            Reference::Field(f) => {
                let idx: Vec<f64> = (0..f.len()).map(|i| i as f64).collect();
                Series::line("reference", &idx, f)
            }
        });
    }
    if config.plot && !plot_series.is_empty() {
        let labels = match config.task {
            Task::Curves => PlotLabels {
                title: "Stress-strain curves".into(),
                x: "strain".into(),
                y: "stress".into(),
            },
            Task::Fields => PlotLabels {
                title: "Fields".into(),
                x: "index".into(),
                y: "value".into(),
            },
        };
        emit_plot(&plot_series, &labels, &out.join("plot.svg")).map_err(|e| e.in_stage("plot"))?;
        artifacts.push("plot.svg".into());
    }

    artifacts.push("report.json".into());
    report.artifacts = artifacts;
    if config.record_wall_clock {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    report.check_finite().map_err(|e| e.in_stage("report"))?;
    write_text(&out.join("report.json"), &report.to_json()?)?;
    Ok(report)
}
