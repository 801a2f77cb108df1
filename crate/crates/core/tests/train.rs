use usfmae_core::model::{is_encoder_param, MaePretrainModel, ModelConfig, ParamStore};
use usfmae_core::train::{
    clip_grad_norm, finetune, grid_search, lr_at, pretrain, resume_pretrain, AdamW, AdamWConfig, AugmentConfig,
    Checkpoint, FinetuneConfig, GridSearchConfig, PretrainConfig, TrainError,
};
use usfmae_imaging::synth::synthetic_scan;
use usfmae_imaging::RasterImage;
use usfmae_tensor::{Rng, Tensor};

fn micro() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 8,
        encoder_layers: 1,
        encoder_dim: 16,
        encoder_heads: 2,
        decoder_layers: 1,
        decoder_dim: 8,
        decoder_heads: 2,
        mlp_ratio: 2,
        mask_ratio: 0.5,
        ..ModelConfig::base()
    }
}

fn images(n: usize, seed: u64) -> Vec<RasterImage> {
    (0..n).map(|i| synthetic_scan(16, &mut Rng::derive(seed, &[i as u64]))).collect()
}

fn pre_cfg(epochs: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        batch_size: 3,
        lr_scaling_reference_batch: 3,
        seed: 5,
        ..PretrainConfig::default()
    }
}

fn fresh() -> MaePretrainModel {
    MaePretrainModel::new(micro(), &mut Rng::new(1)).unwrap()
}

#[test]
fn pretraining_is_reproducible_and_follows_the_schedule() {
    let data = images(7, 2);
    let cfg = pre_cfg(3);
    let a = pretrain(fresh(), &data, &cfg, |_, _| Ok(())).unwrap();
    let b = pretrain(fresh(), &data, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params, b.model.params);

    // 3 epochs of ceil(7 / 3) steps
    assert_eq!(a.log.rows.len(), 9);
    let sched = cfg.schedule(7).unwrap();
    for (i, row) in a.log.rows.iter().enumerate() {
        assert_eq!(row.step, i);
        assert_eq!(row.lr, lr_at(i, &sched).unwrap());
        assert!(row.loss.is_finite() && row.loss > 0.0);
    }
    assert_ne!(a.model.params, fresh().params);

    let c = pretrain(fresh(), &data, &PretrainConfig { seed: 6, ..cfg }, |_, _| Ok(())).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn epoch_callback_sees_every_epoch() {
    let mut seen = Vec::new();
    let out = pretrain(fresh(), &images(4, 3), &pre_cfg(2), |e, ck| {
        seen.push((e, ck.step));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![(0, 2), (1, 4)]);
    assert_eq!(out.checkpoint.step, 4);
    assert!(out.checkpoint.optimizer.is_none());
}

#[test]
fn resume_from_epoch_checkpoint_matches_uninterrupted_run() {
    let data = images(5, 4);
    let cfg = PretrainConfig {
        full_state: true,
        ..pre_cfg(4)
    };
    let full = pretrain(fresh(), &data, &cfg, |_, _| Ok(())).unwrap();

    let mut saved = None;
    pretrain(fresh(), &data, &cfg, |e, ck| {
        if e == 1 {
            saved = Some(ck.clone());
        }
        Ok(())
    })
    .unwrap();
    let mut bytes = Vec::new();
    saved.unwrap().write_to(&mut bytes).unwrap();
    let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    let resumed = resume_pretrain(&ck, &data, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.model.params, full.model.params);
    assert_eq!(resumed.log.rows[..], full.log.rows[4..]);

    let mut light = ck.clone();
    light.optimizer = None;
    assert!(matches!(
        resume_pretrain(&light, &data, &cfg, |_, _| Ok(())),
        Err(TrainError::CheckpointIncompatible(_))
    ));
}

#[test]
fn empty_corpus_is_rejected() {
    assert!(matches!(
        pretrain(fresh(), &[], &pre_cfg(1), |_, _| Ok(())),
        Err(TrainError::EmptyCorpus)
    ));
}

fn labeled(n: usize, seed: u64) -> Vec<(RasterImage, usize)> {
    images(n, seed).into_iter().enumerate().map(|(i, img)| (img, i % 2)).collect()
}

fn names() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

fn ft_cfg() -> FinetuneConfig {
    FinetuneConfig {
        epochs: 2,
        batch_size: 4,
        pooling: usfmae_core::model::Pooling::MeanPool,
        seed: 9,
        ..FinetuneConfig::default()
    }
}

#[test]
fn frozen_encoder_stays_bit_identical() {
    let base = Checkpoint::from_pretrain(&fresh());
    let cfg = FinetuneConfig {
        freeze_encoder: true,
        ..ft_cfg()
    };
    let out = finetune(&base, &labeled(6, 5), &names(), &cfg).unwrap();
    let before = base.pretrain_model().unwrap();
    let mut head_moved = false;
    for (name, t) in out.model.params.names().iter().zip(out.model.params.tensors()) {
        if is_encoder_param(name) {
            assert_eq!(Some(t), before.params.get(name), "{name} changed");
        } else {
            head_moved = true;
        }
    }
    assert!(head_moved);
    assert_eq!(out.checkpoint.class_names(), &names()[..]);

    let unfrozen = finetune(&base, &labeled(6, 5), &names(), &ft_cfg()).unwrap();
    assert_ne!(
        unfrozen.model.params.get("encoder.0.attn.qkv.weight"),
        before.params.get("encoder.0.attn.qkv.weight")
    );
}

#[test]
fn finetune_rejects_bad_labels_and_sizes() {
    let base = Checkpoint::from_pretrain(&fresh());
    let mut data = labeled(4, 6);
    data[2].1 = 2;
    match finetune(&base, &data, &names(), &ft_cfg()) {
        Err(TrainError::LabelOutOfRange { label: 2, classes: 2, step: 0 }) => {}
        other => panic!("unexpected {:?}", other.map(|o| o.log)),
    }
    let big = vec![(synthetic_scan(32, &mut Rng::new(0)), 0)];
    assert!(matches!(
        finetune(&base, &big, &names(), &ft_cfg()),
        Err(TrainError::CheckpointIncompatible(_))
    ));
}

#[test]
fn finetune_with_augmentation_is_reproducible() {
    let base = Checkpoint::from_pretrain(&fresh());
    let cfg = FinetuneConfig {
        augment: AugmentConfig::default(),
        ..ft_cfg()
    };
    let a = finetune(&base, &labeled(5, 7), &names(), &cfg).unwrap();
    let b = finetune(&base, &labeled(5, 7), &names(), &cfg).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn adamw_without_decay_matches_adam() {
    let mut rng = Rng::new(11);
    let mut params = ParamStore::new();
    params.push("w", Tensor::from_fn(vec![3, 4], |_| rng.normal() as f32), true);
    params.push("b", Tensor::from_fn(vec![4], |_| rng.normal() as f32), false);
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg.clone(), &params);

    let mut theta: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let mut m: Vec<Vec<f64>> = theta.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut v = m.clone();
    let lr = 1e-2;
    for t in 1..=6 {
        let grads: Vec<Tensor<f32>> = params
            .tensors()
            .iter()
            .map(|p| Tensor::from_fn(p.shape().to_vec(), |_| rng.normal() as f32))
            .collect();
        opt.step(&mut params, &grads, lr).unwrap();
        for k in 0..2 {
            for j in 0..theta[k].len() {
                let g = grads[k].data()[j] as f64;
                m[k][j] = 0.9 * m[k][j] + 0.1 * g;
                v[k][j] = 0.999 * v[k][j] + 0.001 * g * g;
                let mh = m[k][j] / (1.0 - 0.9f64.powi(t));
                let vh = v[k][j] / (1.0 - 0.999f64.powi(t));
                theta[k][j] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
    for k in 0..2 {
        for (a, b) in params.tensors()[k].data().iter().zip(&theta[k]) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn weight_decay_is_decoupled_and_skips_flagged_params() {
    let mut params = ParamStore::new();
    params.push("w", Tensor::full(vec![2], 2.0f32), true);
    params.push("b", Tensor::full(vec![2], 2.0f32), false);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        },
        &params,
    );
    let zero = vec![Tensor::zeros(vec![2]), Tensor::zeros(vec![2])];
    opt.step(&mut params, &zero, 0.1).unwrap();
    assert_eq!(params.get("w").unwrap().data(), &[1.9, 1.9]);
    assert_eq!(params.get("b").unwrap().data(), &[2.0, 2.0]);
    assert!(matches!(
        opt.step(&mut params, &zero[..1], 0.1),
        Err(TrainError::ShapeMismatch(_))
    ));
}

#[test]
fn clipping_rescales_to_the_limit() {
    let mut g = vec![Tensor::from_vec(vec![2], vec![3.0f32, 0.0]).unwrap(), Tensor::full(vec![1], 4.0f32)];
    let norm = clip_grad_norm(&mut g, 1.0);
    assert!((norm - 5.0).abs() < 1e-12);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-6 && (g[1].data()[0] - 0.8).abs() < 1e-6);
    let before = g.clone();
    clip_grad_norm(&mut g, 10.0);
    assert_eq!(g, before);
}

#[test]
fn grid_search_picks_lowest_mean_loss() {
    let cfg = GridSearchConfig {
        learning_rates: vec![1e-4, 1e-3, 1e-2],
        weight_decays: vec![0.0, 0.1],
    };
    let mut calls = 0;
    let res = grid_search(&cfg, &[0, 1, 2], |lr, wd, f| {
        calls += 1;
        Ok((lr.log10() + 3.0).powi(2) + wd + f as f64 * 0.01)
    })
    .unwrap();
    assert_eq!(calls, 18);
    assert_eq!(res.points.len(), 6);
    let best = res.best_point();
    assert_eq!((best.lr, best.weight_decay), (1e-3, 0.0));
    assert!((best.mean_loss - 0.01).abs() < 1e-12);
    assert!(grid_search(&cfg, &[], |_, _, _| Ok(0.0)).is_err());
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint::from_pretrain(&fresh());
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, ck.params);
    assert_eq!(back.config, ck.config);
    assert!(back.classifier_model().is_err());
    assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(TrainError::Io { .. })));
}
