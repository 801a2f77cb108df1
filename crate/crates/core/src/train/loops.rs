use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use usfmae_imaging::imgproc::{normalize, resize_bilinear, NormalizationSpec};
use usfmae_imaging::RasterImage;
use usfmae_tensor::{Rng, Tensor};

use super::augment::{augment, AugmentConfig};
use super::checkpoint::Checkpoint;
use super::optim::{clip_grad_norm, AdamW, AdamWConfig};
use super::schedule::{lr_at, ScheduleConfig};
use super::{Result, TrainError};
use crate::model::{
    classify_forward, is_encoder_param, sample_mask, softmax_rows, ClassifierModel,
    MaePretrainModel, Pooling,
};

const SHUFFLE_KEY: u64 = 0x5348_5546;

/// Settings shared by the pretraining and fine-tuning drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub lr_scaling_reference_batch: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub augment: AugmentConfig,
    pub normalization: NormalizationSpec,
    pub seed: u64,
    /// Store optimizer moments in checkpoints for exact resume.
    pub full_state: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 100,
            batch_size: 64,
            base_lr: 1e-3,
            warmup_fraction: 0.1,
            lr_scaling_reference_batch: 64,
            optimizer: AdamWConfig::default(),
            clip_norm: 1.0,
            augment: AugmentConfig::default(),
            normalization: NormalizationSpec::default(),
            seed: 0,
            full_state: false,
        }
    }
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

fn schedule_for(
    n: usize,
    epochs: usize,
    batch_size: usize,
    base_lr: f64,
    warmup_fraction: f64,
    reference: usize,
) -> Result<ScheduleConfig> {
    if epochs == 0 || batch_size == 0 {
        return Err(TrainError::InvalidConfig("epochs and batch_size must be >= 1".into()));
    }
    let s = ScheduleConfig {
        base_lr,
        total_steps: epochs * steps_per_epoch(n, batch_size),
        warmup_fraction,
        batch_size,
        lr_scaling_reference_batch: reference,
    };
    s.validate()?;
    Ok(s)
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.normalization.validate()?;
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig(format!("clip_norm {}", self.clip_norm)));
        }
        Ok(())
    }

    /// Schedule for a corpus of `n` images: total = epochs × ceil(n / batch).
    pub fn schedule(&self, n: usize) -> Result<ScheduleConfig> {
        schedule_for(
            n,
            self.epochs,
            self.batch_size,
            self.base_lr,
            self.warmup_fraction,
            self.lr_scaling_reference_batch,
        )
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// CSV with header `step,lr,loss`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| TrainError::Io {
            path: "<training log>".into(),
            source: e,
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        self.write_csv(f)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

/// Augment (if enabled), resize to `size`, promote to RGB and normalize.
pub fn prepare_image(
    img: &RasterImage,
    size: usize,
    aug: &AugmentConfig,
    norm: &NormalizationSpec,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    let img = augment(img, aug, rng);
    let img = if img.width() != size || img.height() != size {
        resize_bilinear(&img, size, size)
    } else {
        img
    };
    Ok(normalize(&img.to_rgb(), norm)?)
}

/// Sums per-sample gradients in sample order, computing up to one chunk of
/// samples in parallel at a time.
fn accumulate<F>(indices: &[usize], n_params: usize, shapes: &[Vec<usize>], f: F) -> Result<(f64, Vec<Tensor<f32>>)>
where
    F: Fn(usize) -> Result<(f32, Vec<Tensor<f32>>)> + Sync,
{
    let mut sum: Vec<Tensor<f32>> = shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
    let mut loss = 0.0f64;
    let chunk = rayon::current_num_threads().max(1);
    for part in indices.chunks(chunk) {
        let results: Vec<Result<(f32, Vec<Tensor<f32>>)>> = part.par_iter().map(|&i| f(i)).collect();
        for r in results {
            let (l, g) = r?;
            debug_assert_eq!(g.len(), n_params);
            loss += l as f64;
            for (s, gi) in sum.iter_mut().zip(&g) {
                s.add_assign(gi);
            }
        }
    }
    Ok((loss, sum))
}

pub struct PretrainOutcome {
    pub model: MaePretrainModel,
    pub optimizer: AdamW,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

/// Masked-autoencoder pretraining from scratch.
///
/// Each step draws augmentation and masks from an rng keyed by
/// `(seed, epoch, sample index)`; per-sample gradients are summed in batch
/// order, so runs are bitwise reproducible regardless of thread count.
/// `on_epoch` receives a checkpoint after every epoch.
pub fn pretrain(
    model: MaePretrainModel,
    images: &[RasterImage],
    cfg: &PretrainConfig,
    on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    let opt = AdamW::new(cfg.optimizer.clone(), &model.params);
    run_pretrain(model, opt, 0, images, cfg, on_epoch)
}

/// Continues from an epoch-boundary checkpoint saved with optimizer state.
pub fn resume_pretrain(
    checkpoint: &Checkpoint,
    images: &[RasterImage],
    cfg: &PretrainConfig,
    on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    let model = checkpoint.pretrain_model()?;
    let opt = checkpoint.optimizer.clone().ok_or_else(|| {
        TrainError::CheckpointIncompatible("checkpoint has no optimizer state".into())
    })?;
    let per_epoch = steps_per_epoch(images.len().max(1), cfg.batch_size.max(1)) as u64;
    if !checkpoint.step.is_multiple_of(per_epoch) {
        return Err(TrainError::CheckpointIncompatible(format!(
            "step {} is not an epoch boundary ({per_epoch} steps per epoch)",
            checkpoint.step
        )));
    }
    run_pretrain(model, opt, (checkpoint.step / per_epoch) as usize, images, cfg, on_epoch)
}

fn run_pretrain(
    mut model: MaePretrainModel,
    mut opt: AdamW,
    start_epoch: usize,
    images: &[RasterImage],
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let sched = cfg.schedule(images.len())?;
    let mc = model.config.clone();
    let shapes: Vec<Vec<usize>> = model.params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let n_params = shapes.len();
    let mut log = TrainLog::default();
    let per_epoch = steps_per_epoch(images.len(), cfg.batch_size);
    let mut step = start_epoch * per_epoch;
    let mut checkpoint = make_pretrain_checkpoint(&model, &opt, cfg, step);

    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        Rng::derive(cfg.seed, &[epoch as u64, SHUFFLE_KEY]).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f32;
            let current = &model;
            let (loss_sum, mut grads) = accumulate(batch, n_params, &shapes, |i| {
                let mut rng = Rng::derive(cfg.seed, &[epoch as u64, i as u64]);
                let x = prepare_image(&images[i], mc.image_size, &cfg.augment, &cfg.normalization, &mut rng)?;
                let plan = sample_mask(mc.num_patches(), mc.mask_ratio, &mut rng);
                let dropout = (mc.dropout > 0.0).then_some(&mut rng);
                let s = current.loss_and_grads(&x, &plan, weight, dropout)?;
                Ok((s.loss, s.grads))
            })?;
            let loss = loss_sum / batch.len() as f64;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(TrainError::NonFiniteLoss { step, loss });
            }
            clip_grad_norm(&mut grads, cfg.clip_norm);
            let lr = lr_at(step, &sched)?;
            opt.step(&mut model.params, &grads, lr)?;
            log.rows.push(LogRow { step, lr, loss });
            step += 1;
        }
        checkpoint = make_pretrain_checkpoint(&model, &opt, cfg, step);
        on_epoch(epoch, &checkpoint)?;
    }
    Ok(PretrainOutcome {
        model,
        optimizer: opt,
        log,
        checkpoint,
    })
}

fn make_pretrain_checkpoint(model: &MaePretrainModel, opt: &AdamW, cfg: &PretrainConfig, step: usize) -> Checkpoint {
    let mut ck = Checkpoint::from_pretrain(model);
    ck.step = step as u64;
    ck.rng = Some(Rng::new(cfg.seed).state());
    ck.optimizer = cfg.full_state.then(|| opt.clone());
    ck.extra = serde_json::json!({ "pretrain": cfg });
    ck
}

/// Supervised fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub lr_scaling_reference_batch: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub pooling: Pooling,
    /// Train only the head; encoder tensors stay bit-identical.
    pub freeze_encoder: bool,
    pub augment: AugmentConfig,
    pub normalization: NormalizationSpec,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            batch_size: 32,
            base_lr: 1e-3,
            warmup_fraction: 0.1,
            lr_scaling_reference_batch: 64,
            optimizer: AdamWConfig::default(),
            clip_norm: 1.0,
            pooling: Pooling::ClassToken,
            freeze_encoder: false,
            augment: AugmentConfig::disabled(),
            normalization: NormalizationSpec::default(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.augment.validate()?;
        self.normalization.validate()?;
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig(format!("clip_norm {}", self.clip_norm)));
        }
        Ok(())
    }

    pub fn schedule(&self, n: usize) -> Result<ScheduleConfig> {
        schedule_for(
            n,
            self.epochs,
            self.batch_size,
            self.base_lr,
            self.warmup_fraction,
            self.lr_scaling_reference_batch,
        )
    }
}

pub struct FinetuneOutcome {
    pub model: ClassifierModel,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

/// Attaches a fresh head to the encoder in `pretrained` and trains it with
/// cross-entropy on `(image, label)` pairs.
pub fn finetune(
    pretrained: &Checkpoint,
    data: &[(RasterImage, usize)],
    class_names: &[String],
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let base = pretrained.pretrain_model()?;
    let size = base.config.image_size;
    if let Some((img, _)) = data.iter().find(|(img, _)| img.width() != size || img.height() != size) {
        return Err(TrainError::CheckpointIncompatible(format!(
            "checkpoint expects {size}x{size} images, data contains {}x{}",
            img.width(),
            img.height()
        )));
    }
    let num_classes = class_names.len();
    let mut init_rng = Rng::derive(cfg.seed, &[u64::MAX]);
    let mut model = ClassifierModel::from_pretrained(&base, cfg.pooling, num_classes, &mut init_rng)?;
    let sched = cfg.schedule(data.len())?;
    let freeze = cfg.freeze_encoder;
    let trainable = move |n: &str| !(freeze && is_encoder_param(n));
    let update: Vec<bool> = model.params.names().iter().map(|n| trainable(n)).collect();
    let shapes: Vec<Vec<usize>> = model.params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = AdamW::new(cfg.optimizer.clone(), &model.params);

    // Without augmentation inputs never change, so normalize once.
    let cached: Option<Vec<Tensor<f32>>> = if cfg.augment.enabled {
        None
    } else {
        Some(
            data.iter()
                .map(|(img, _)| prepare_image(img, size, &cfg.augment, &cfg.normalization, &mut Rng::new(0)))
                .collect::<Result<_>>()?,
        )
    };

    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        Rng::derive(cfg.seed, &[epoch as u64, SHUFFLE_KEY]).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            if let Some(&label) = batch.iter().map(|&i| &data[i].1).find(|&&y| y >= num_classes) {
                return Err(TrainError::LabelOutOfRange {
                    label,
                    classes: num_classes,
                    step,
                });
            }
            let weight = 1.0 / batch.len() as f32;
            let current = &model;
            let cached = &cached;
            let (loss_sum, mut grads) = accumulate(batch, shapes.len(), &shapes, |i| {
                let mut rng = Rng::derive(cfg.seed, &[epoch as u64, i as u64]);
                let x = match cached {
                    Some(c) => c[i].clone(),
                    None => prepare_image(&data[i].0, size, &cfg.augment, &cfg.normalization, &mut rng)?,
                };
                let dropout = (current.config.dropout > 0.0).then_some(&mut rng);
                Ok(current.loss_and_grads(&x, data[i].1, weight, trainable, dropout)?)
            })?;
            let loss = loss_sum / batch.len() as f64;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, loss });
            }
            clip_grad_norm(&mut grads, cfg.clip_norm);
            let lr = lr_at(step, &sched)?;
            opt.step_masked(&mut model.params, &grads, lr, &update)?;
            log.rows.push(LogRow { step, lr, loss });
            step += 1;
        }
    }
    let mut checkpoint = Checkpoint::from_classifier(&model, class_names.to_vec());
    checkpoint.step = step as u64;
    checkpoint.rng = Some(Rng::new(cfg.seed).state());
    checkpoint.extra = serde_json::json!({ "finetune": cfg });
    Ok(FinetuneOutcome {
        model,
        log,
        checkpoint,
    })
}

/// Class probabilities for each image (eval mode).
pub fn predict_proba(
    model: &ClassifierModel,
    images: &[RasterImage],
    norm: &NormalizationSpec,
) -> Result<Vec<Vec<f64>>> {
    let size = model.config.image_size;
    let rows: Vec<Result<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            let x = prepare_image(img, size, &AugmentConfig::disabled(), norm, &mut Rng::new(0))?;
            let logits = classify_forward(model, std::slice::from_ref(&x))?;
            Ok(softmax_rows(&logits).remove(0))
        })
        .collect();
    rows.into_iter().collect()
}

/// Mean cross-entropy of `model` on labeled data.
pub fn mean_cross_entropy(
    model: &ClassifierModel,
    data: &[(RasterImage, usize)],
    norm: &NormalizationSpec,
) -> Result<f64> {
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let images: Vec<RasterImage> = data.iter().map(|(i, _)| i.clone()).collect();
    let probs = predict_proba(model, &images, norm)?;
    let mut total = 0.0;
    for (p, (_, y)) in probs.iter().zip(data) {
        let py = *p.get(*y).ok_or(TrainError::LabelOutOfRange {
            label: *y,
            classes: p.len(),
            step: 0,
        })?;
        total -= py.max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / data.len() as f64)
}

/// Learning-rate × weight-decay grid evaluated over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearchConfig {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            learning_rates: vec![3e-4, 1e-3],
            weight_decays: vec![0.01, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub weight_decay: f64,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub points: Vec<GridPoint>,
    /// Index of the lowest mean validation loss (first on ties).
    pub best: usize,
}

impl GridSearchResult {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }
}

/// Runs `validation_loss(lr, wd, fold)` for every grid point and fold.
pub fn grid_search(
    cfg: &GridSearchConfig,
    folds: &[usize],
    mut validation_loss: impl FnMut(f64, f64, usize) -> Result<f64>,
) -> Result<GridSearchResult> {
    if cfg.learning_rates.is_empty() || cfg.weight_decays.is_empty() || folds.is_empty() {
        return Err(TrainError::InvalidConfig("grid search needs values and folds".into()));
    }
    let mut points = Vec::new();
    for &lr in &cfg.learning_rates {
        for &wd in &cfg.weight_decays {
            let fold_losses = folds
                .iter()
                .map(|&f| validation_loss(lr, wd, f))
                .collect::<Result<Vec<f64>>>()?;
            let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
            points.push(GridPoint {
                lr,
                weight_decay: wd,
                fold_losses,
                mean_loss,
            });
        }
    }
    let best = points
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p.mean_loss < points[b].mean_loss { i } else { b });
    Ok(GridSearchResult { points, best })
}
