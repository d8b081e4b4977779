use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::augment::{batch_sample, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Gradients, Mode, Sgd, SgdConfig};
use crate::seghead::{seg_loss_backward, LossBreakdown, SegTargets};
use crate::types::{AnnotationSet, ImageStack};

/// Fixed salt separating the validation sampling stream from training.
const VAL_STREAM: u64 = 0x5EED_0F_7A1D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("history serializes");
        s.push('\n');
        s
    }
}

pub type Dataset = [(ImageStack, AnnotationSet)];

/// Flat N×3×H×W projections of a batch; keeps the PEN cache in train mode.
fn project_batch(model: &mut Model, stacks: &[ImageStack]) -> Result<(Vec<f64>, Option<crate::pen::PenCache>)> {
    match model.pen.as_mut() {
        Some(pen) => {
            let (_, cache) = pen.forward(stacks)?;
            Ok((cache.output().to_vec(), Some(cache)))
        }
        None => {
            let mut out = Vec::new();
            for s in stacks {
                let p = Model::fixed_projection(model.config.input_mode, s)?;
                out.extend(p.pixels().iter().copied());
            }
            Ok((out, None))
        }
    }
}

/// Loss and gradients for one batch in the model's current mode. Gradient
/// computation requires train mode.
fn batch_loss(model: &mut Model, batch: &[TrainingSample], with_grad: bool) -> Result<(LossBreakdown, Gradients)> {
    let stacks: Vec<ImageStack> = batch.iter().map(|s| s.stack.clone()).collect();
    let targets: Vec<SegTargets> = batch.iter().map(|s| s.targets.clone()).collect();
    let (h, w) = (stacks[0].height(), stacks[0].width());
    let (x, pen_cache) = project_batch(model, &stacks)?;
    let (maps, head_cache) = model.head.forward(&x, batch.len(), h, w)?;
    let (loss, g_maps) = seg_loss_backward(&maps, &targets)?;
    let mut grads = Gradients::new();
    if !with_grad {
        return Ok((loss, grads));
    }
    let need_input = pen_cache.is_some();
    let (head_grads, g_x) = model.head.backward(&head_cache, &g_maps, need_input)?;
    grads.extend(head_grads.into_iter().map(|(k, v)| (format!("head.{k}"), v)));
    if let (Some(pen), Some(cache), Some(g_x)) = (model.pen.as_ref(), pen_cache, g_x) {
        let pen_grads = pen.backward(&cache, &g_x)?;
        grads.extend(pen_grads.into_iter().map(|(k, v)| (format!("pen.{k}"), v)));
    }
    Ok((loss, grads))
}

/// Mean total loss over `samples`, in eval mode, batched like training.
pub fn validation_loss(model: &Model, samples: &[TrainingSample], batch_size: usize) -> Result<f64> {
    let mut m = model.clone();
    m.set_mode(Mode::Eval);
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let (loss, _) = batch_loss(&mut m, chunk, false)?;
        sum += loss.total * chunk.len() as f64;
    }
    Ok(sum / samples.len().max(1) as f64)
}

/// Builds the fixed validation set once from its own seeded stream.
pub fn build_validation(config: &TrainConfig, dataset: &Dataset) -> Result<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ VAL_STREAM);
    (0..config.val_size)
        .map(|_| batch_sample(dataset, &config.augment_config, &config.head_config, &mut rng))
        .collect()
}

/// Trains projection and head jointly and returns the snapshot with the
/// lowest validation loss.
pub fn train(config: &TrainConfig, dataset: &Dataset, val_dataset: &Dataset) -> Result<(Model, TrainHistory)> {
    let mut model = Model::new(config)?;
    train_model(&mut model, dataset, val_dataset)
}

/// [`train`] starting from an existing model.
pub fn train_model(model: &mut Model, dataset: &Dataset, val_dataset: &Dataset) -> Result<(Model, TrainHistory)> {
    let config = model.config.clone();
    if dataset.is_empty() || val_dataset.is_empty() {
        return Err(Error::Validation("training and validation sets must be nonempty".into()));
    }
    let val = build_validation(&config, val_dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Sgd::new(SgdConfig {
        lr: config.lr,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    });
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    let mut iteration = 0;
    for epoch in 0..config.epochs {
        model.set_mode(Mode::Train);
        for _ in 0..config.iters_per_epoch {
            let batch = (0..config.batch_size)
                .map(|_| {
                    let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.gen());
                    batch_sample(dataset, &config.augment_config, &config.head_config, &mut sample_rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = batch_loss(model, &batch, true)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { iteration, loss: loss.total });
            }
            let (grad_norm, clipped_norm) = clip_global_norm(&mut grads, config.grad_clip);
            if !grad_norm.is_finite() {
                return Err(Error::Diverged { iteration, loss: loss.total });
            }
            opt.step(model, &grads);
            log::debug!("epoch {epoch} iter {iteration}: total {:.4}", loss.total);
            history.iterations.push(IterationRecord { epoch, iteration, loss, grad_norm, clipped_norm });
            iteration += 1;
        }
        let v = validation_loss(model, &val, config.batch_size)?;
        log::info!("epoch {epoch}: validation loss {v:.4}");
        history.val_losses.push(v);
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            history.best_epoch = epoch;
            best = Some((v, model.clone()));
        }
    }
    let (_, mut snapshot) = best.expect("at least one epoch");
    snapshot.set_mode(Mode::Eval);
    Ok((snapshot, history))
}
