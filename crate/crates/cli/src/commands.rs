use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use usfmae_core::corpus::{
    class_names, load_labeled, load_manifest, load_unlabeled, run_preprocess_batch, BatchOptions, Manifest, Split,
};
use usfmae_core::eval::{
    argmax_rows, assign_folds, curves_svg, pr_curve, roc_curve, write_curve_csv, CurveSeries, EvalError,
    MetricsReport,
};
use usfmae_core::model::{mae_loss, patchify, sample_mask, MaePretrainModel};
use usfmae_core::train::{
    finetune as train_finetune, grid_search, mean_cross_entropy, predict_proba, prepare_image,
    pretrain as train_pretrain, resume_pretrain, AugmentConfig, Checkpoint, CheckpointKind, FinetuneConfig,
};
use usfmae_imaging::imgproc::{denormalize, resize_bilinear, NormalizationSpec};
use usfmae_imaging::RasterImage;
use usfmae_tensor::Rng;

use crate::Ctx;

const RECONSTRUCT_KEY: u64 = 0x7265_636f;

fn open_manifest(path: &Path) -> Result<Manifest> {
    load_manifest(path).with_context(|| format!("manifest {}", path.display()))
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("checkpoint {}", path.display()))
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn fit_size(img: RasterImage, size: usize) -> RasterImage {
    if img.width() == size && img.height() == size {
        img
    } else {
        resize_bilinear(&img, size, size)
    }
}

/// Training normalization recorded in a checkpoint, else `fallback`.
fn checkpoint_normalization(ck: &Checkpoint, section: &str, fallback: &NormalizationSpec) -> NormalizationSpec {
    ck.extra
        .get(section)
        .and_then(|s| s.get("normalization"))
        .and_then(|n| serde_json::from_value(n.clone()).ok())
        .unwrap_or(*fallback)
}

pub fn preprocess(ctx: &Ctx, manifest: &Path) -> Result<()> {
    let m = open_manifest(manifest)?;
    let opts = BatchOptions {
        debug_masks: ctx.cfg.debug_masks,
        frames: ctx.cfg.frames,
    };
    let report = run_preprocess_batch(&m, &ctx.cfg.pipeline, &ctx.out, &opts)?;
    for f in report.files.iter().filter(|f| f.error.is_some()) {
        eprintln!("warning: {}: {}", f.path, f.error.as_deref().unwrap_or_default());
    }
    if let Some(outm) = report.output_manifest(&m, &ctx.out) {
        outm.save(ctx.out.join("manifest.csv"))?;
    }
    ctx.info(format!(
        "preprocess: {} processed, {} failed -> {}",
        report.processed,
        report.failed,
        ctx.out.display()
    ));
    if report.processed == 0 {
        bail!("no record could be processed");
    }
    Ok(())
}

pub fn pretrain(ctx: &Ctx, manifest: &Path, split: Option<Split>, resume: Option<&Path>) -> Result<()> {
    let m = open_manifest(manifest)?;
    let images = load_unlabeled(&m, split, &ctx.cfg.frames)?;
    let cfg = &ctx.cfg.pretrain;
    ctx.info(format!("pretrain: {} images, {} epochs", images.len(), cfg.epochs));
    let last = ctx.out.join("last.ckpt");
    let on_epoch = |epoch: usize, ck: &Checkpoint| {
        ck.save(&last)?;
        ctx.detail(format!("epoch {} done (step {})", epoch + 1, ck.step));
        Ok(())
    };
    let outcome = match resume {
        Some(p) => resume_pretrain(&open_checkpoint(p)?, &images, cfg, on_epoch)?,
        None => {
            let model_cfg = ctx.cfg.model_config()?;
            let model = MaePretrainModel::new(model_cfg, &mut Rng::derive(ctx.cfg.seed, &[0]))?;
            train_pretrain(model, &images, cfg, on_epoch)?
        }
    };
    outcome.checkpoint.save(ctx.out.join("mae.ckpt"))?;
    outcome.log.save_csv(ctx.out.join("pretrain_log.csv"))?;
    if let (Some(first), Some(end)) = (outcome.log.rows.first(), outcome.log.rows.last()) {
        ctx.info(format!("loss {:.4} -> {:.4} over {} steps", first.loss, end.loss, outcome.log.rows.len()));
    }
    Ok(())
}

type Labeled = Vec<(RasterImage, usize)>;

fn labeled_split(ctx: &Ctx, m: &Manifest, split: Split, names: &[String], size: usize) -> Result<(Labeled, Vec<usize>)> {
    let rows = load_labeled(m, Some(split), names, &ctx.cfg.frames)?;
    let records = rows.iter().map(|r| r.2).collect();
    Ok((rows.into_iter().map(|(img, y, _)| (fit_size(img, size), y)).collect(), records))
}

pub fn finetune(ctx: &Ctx, checkpoint: &Path, manifest: &Path, search: bool) -> Result<()> {
    let ck = open_checkpoint(checkpoint)?;
    let m = open_manifest(manifest)?;
    let names = class_names(m.filter(Some(Split::Train)));
    if names.len() < 2 {
        bail!("training split needs at least 2 labeled classes, found {names:?}");
    }
    let size = ck.config.image_size;
    let (data, records) = labeled_split(ctx, &m, Split::Train, &names, size)?;
    let mut cfg = ctx.cfg.finetune.clone();

    if search {
        let fold_of: Vec<usize> = if m.records.iter().all(|r| r.fold.is_some()) {
            records.iter().map(|&i| m.records[i].fold.unwrap_or(0)).collect()
        } else {
            let per_record = assign_folds(m.records.len(), ctx.cfg.folds, ctx.cfg.seed);
            records.iter().map(|&i| per_record[i]).collect()
        };
        let mut ids: Vec<usize> = fold_of.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            bail!("grid search needs at least 2 folds in the training split");
        }
        let result = grid_search(&ctx.cfg.grid_search, &ids, |lr, wd, f| {
            let split_by = |keep: bool| -> Labeled {
                data.iter()
                    .zip(&fold_of)
                    .filter(|(_, &g)| (g == f) == keep)
                    .map(|(d, _)| d.clone())
                    .collect()
            };
            let point = FinetuneConfig {
                base_lr: lr,
                optimizer: usfmae_core::train::AdamWConfig {
                    weight_decay: wd,
                    ..cfg.optimizer.clone()
                },
                ..cfg.clone()
            };
            let out = train_finetune(&ck, &split_by(false), &names, &point)?;
            let loss = mean_cross_entropy(&out.model, &split_by(true), &point.normalization)?;
            ctx.detail(format!("grid lr {lr:e} wd {wd} fold {f}: loss {loss:.4}"));
            Ok(loss)
        })?;
        save_json(&ctx.out.join("grid_search.json"), &result)?;
        let best = result.best_point();
        ctx.info(format!(
            "grid search: best lr {:e}, weight decay {} (mean loss {:.4})",
            best.lr, best.weight_decay, best.mean_loss
        ));
        cfg.base_lr = best.lr;
        cfg.optimizer.weight_decay = best.weight_decay;
    }

    ctx.info(format!("finetune: {} images, classes {names:?}", data.len()));
    let out = train_finetune(&ck, &data, &names, &cfg)?;
    out.checkpoint.save(ctx.out.join("classifier.ckpt"))?;
    out.log.save_csv(ctx.out.join("finetune_log.csv"))?;
    if let Some(end) = out.log.rows.last() {
        ctx.info(format!("final training loss {:.4}", end.loss));
    }
    Ok(())
}

fn curve_or_none(
    r: std::result::Result<CurveSeries, EvalError>,
    class: usize,
) -> Result<Option<CurveSeries>> {
    match r {
        Ok(mut c) => {
            c.class_id = Some(class);
            Ok(Some(c))
        }
        Err(EvalError::SingleClassOnly { .. } | EvalError::NoPositives) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn eval(ctx: &Ctx, checkpoint: &Path, manifest: &Path, split: Split) -> Result<()> {
    let ck = open_checkpoint(checkpoint)?;
    let CheckpointKind::Classifier { .. } = ck.kind else {
        bail!("{} is a pretraining checkpoint; eval needs a fine-tuned classifier", checkpoint.display());
    };
    let names = ck.class_names().to_vec();
    let model = ck.classifier_model()?;
    let m = open_manifest(manifest)?;
    let (data, records) = labeled_split(ctx, &m, split, &names, model.config.image_size)?;
    if data.is_empty() {
        bail!("split {split} of {} is empty", manifest.display());
    }
    let norm = checkpoint_normalization(&ck, "finetune", &ctx.cfg.finetune.normalization);
    let images: Vec<RasterImage> = data.iter().map(|d| d.0.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|d| d.1).collect();
    let probs = predict_proba(&model, &images, &norm)?;
    let preds = argmax_rows(&probs);
    let mut report = MetricsReport::from_predictions(&preds, &labels, names.len(), &names)?;

    let mut rocs = Vec::new();
    let mut prs = Vec::new();
    for c in 0..names.len() {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let roc = curve_or_none(roc_curve(&scores, &positive), c)?;
        let pr = curve_or_none(pr_curve(&scores, &positive), c)?;
        report.roc_auc.push(roc.as_ref().map(|r| r.auc));
        report.average_precision.push(pr.as_ref().map(|r| r.auc));
        for (kind, curve, all) in [("roc", roc, &mut rocs), ("pr", pr, &mut prs)] {
            if let Some(curve) = curve {
                let path = ctx.out.join(format!("{kind}_{}.csv", names[c]));
                write_curve_csv(&curve, File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
                all.push(curve);
            }
        }
    }
    if !rocs.is_empty() {
        std::fs::write(ctx.out.join("roc.svg"), curves_svg(&rocs, "ROC"))?;
        std::fs::write(ctx.out.join("pr.svg"), curves_svg(&prs, "Precision-recall"))?;
    }
    save_json(&ctx.out.join("metrics.json"), &report)?;

    let path = ctx.out.join("predictions.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write!(w, "path,label,prediction")?;
    for n in &names {
        write!(w, ",p_{n}")?;
    }
    writeln!(w)?;
    for ((p, &rec), (&y, &yh)) in probs.iter().zip(&records).zip(labels.iter().zip(&preds)) {
        write!(w, "{},{},{}", m.records[rec].path, names[y], names[yh])?;
        for v in p {
            write!(w, ",{v:.6}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    ctx.info(format!(
        "eval: {} images, accuracy {:.4}, macro F1 {:.4}, micro F1 {:.4}",
        report.samples, report.accuracy, report.macro_avg.f1, report.micro_avg.f1
    ));
    Ok(())
}

pub fn reconstruct(ctx: &Ctx, checkpoint: &Path, image: &Path, mask_ratio: Option<f64>) -> Result<()> {
    let ck = open_checkpoint(checkpoint)?;
    let model = ck.pretrain_model().context("reconstruct needs a pretraining checkpoint")?;
    let mc = &model.config;
    let ratio = mask_ratio.unwrap_or(mc.mask_ratio);
    if !(0.0..1.0).contains(&ratio) {
        bail!("mask ratio {ratio} must be in [0, 1)");
    }
    let norm = checkpoint_normalization(&ck, "pretrain", &ctx.cfg.pretrain.normalization);
    let img = RasterImage::open(image).with_context(|| format!("image {}", image.display()))?;
    let x = prepare_image(&img, mc.image_size, &AugmentConfig::disabled(), &norm, &mut Rng::new(0))?;
    let mut plan = sample_mask(mc.num_patches(), ratio, &mut Rng::derive(ctx.cfg.seed, &[RECONSTRUCT_KEY]));
    if plan.num_masked() == 0 {
        plan = sample_mask(mc.num_patches(), 1.0 / mc.num_patches() as f64, &mut Rng::new(ctx.cfg.seed));
    }
    let grid = patchify(&x, mc.patch_size)?;
    let pred = model.reconstruct(&x, &plan)?;
    let loss = mae_loss(&pred, &grid.patches, &plan)?;

    let original = denormalize(&x, &norm)?;
    let recon = denormalize(&grid.unpatchify(&pred)?, &norm)?;
    let (w, h, p) = (original.width(), original.height(), mc.patch_size);
    let per_row = w / p;
    let hidden = |x: usize, y: usize| plan.is_masked((y / p) * per_row + x / p);
    let triptych = RasterImage::from_fn(3 * w, h, 3, |x, y, c| match x / w {
        0 => original.get(x, y, c),
        1 if hidden(x - w, y) => 0.5,
        1 => original.get(x - w, y, c),
        _ => recon.get(x - 2 * w, y, c),
    });
    let path = ctx.out.join("reconstruction.png");
    triptych.save_png(&path).with_context(|| format!("writing {}", path.display()))?;
    ctx.info(format!(
        "reconstruct: {} of {} patches hidden, masked MSE {loss:.4} -> {}",
        plan.num_masked(),
        plan.num_patches(),
        path.display()
    ));
    Ok(())
}
