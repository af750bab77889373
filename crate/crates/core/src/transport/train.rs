use log::{debug, info, warn};

use super::generate::negative_jacobian_fraction;
use super::loss::evaluate;
use super::{CheckpointPolicy, CmGaiModel, EpochRecord, SnapshotDataset};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Mode};
use crate::rng::mix_seed;

const VALIDATION_SAMPLES: usize = 1024;

/// Builds a fresh model for `dataset` and trains it.
pub fn train(dataset: &SnapshotDataset, config: &super::TrainConfig) -> Result<CmGaiModel> {
    let model = CmGaiModel::init(dataset, config)?;
    train_from(model, dataset)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    mix_seed(seed, 0xE90C_0000 + epoch as u64)
}

/// Runs Adam on `model` for `model.config.epochs` epochs.
///
/// Each epoch draws a fresh batch from the reference density. A non-finite
/// loss or gradient aborts with [`Error::Diverged`] carrying the best
/// checkpoint seen so far.
pub fn train_from(mut model: CmGaiModel, dataset: &SnapshotDataset) -> Result<CmGaiModel> {
    let cfg = model.config.clone();
    cfg.validate()?;
    crate::error::check_dim(model.dim(), dataset.dim())?;
    if cfg.epochs == 0 {
        return Ok(model);
    }

    let reference = model.reference.clone();
    let draw = |epoch: usize| reference.sample(cfg.batch_size, mix_seed(epoch_seed(cfg.seed, epoch), 0xBA7C));

    let mut weights = cfg.weights;
    if cfg.auto_rescale {
        let probe = evaluate(&model, dataset, cfg.weights, &draw(0), Mode::Train, epoch_seed(cfg.seed, 0), false)?;
        let values = [probe.terms.density, probe.terms.boundary, probe.terms.motion];
        for (w, v) in weights.iter_mut().zip(values) {
            if *w > 0.0 {
                *w /= v.max(cfg.rescale_floor);
            }
        }
        info!("rescaled loss weights to {weights:?}");
    }
    model.diagnostics.effective_weights = weights;

    let mut params = model.flat_params();
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        let seed = epoch_seed(cfg.seed, epoch);
        let samples = draw(epoch);
        let eval = match evaluate(&model, dataset, weights, &samples, Mode::Train, seed, true) {
            Ok(e) => e,
            Err(Error::NonFinite(what)) => {
                warn!("{what} became non-finite at epoch {epoch}");
                return Err(diverged(model, best, epoch));
            }
            Err(e) => return Err(e),
        };
        let t = eval.terms;
        model.diagnostics.history.push(EpochRecord {
            total: t.total,
            density: t.density,
            boundary: t.boundary,
            motion: t.motion,
            dropped: t.dropped,
        });
        if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
            debug!(
                "epoch {epoch}: loss {:.4e} (density {:.3e}, boundary {:.3e}, motion {:.3e}, dropped {})",
                t.total, t.density, t.boundary, t.motion, t.dropped
            );
        }
        if best.as_ref().map_or(true, |(b, _, _)| t.total < *b) {
            best = Some((t.total, epoch, params.clone()));
        }

        let mut grad = eval.grad.expect("gradient requested");
        if let Some(limit) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                grad.iter_mut().for_each(|g| *g *= limit / norm);
            }
        }
        if adam_step(&mut params, &grad, &mut adam).is_err() || params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(model, best, epoch));
        }
        model.set_flat_params(&params)?;
    }

    if cfg.checkpoint == CheckpointPolicy::BestTraining {
        if let Some((_, epoch, p)) = &best {
            model.set_flat_params(p)?;
            model.diagnostics.best_epoch = Some(*epoch);
        }
    }
    model.diagnostics.negative_jacobian_fraction =
        negative_jacobian_fraction(&model, &dataset.times(), VALIDATION_SAMPLES, mix_seed(cfg.seed, 0x7A11D))?;
    Ok(model)
}

fn diverged(mut model: CmGaiModel, best: Option<(f64, usize, Vec<f64>)>, epoch: usize) -> Error {
    if let Some((_, e, p)) = best {
        if model.set_flat_params(&p).is_ok() {
            model.diagnostics.best_epoch = Some(e);
        }
    }
    Error::Diverged {
        epoch,
        checkpoint: Box::new(model),
    }
}
