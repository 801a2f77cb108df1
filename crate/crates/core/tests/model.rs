use proptest::prelude::*;
use usfmae_core::model::{
    classify_forward, cross_entropy, mae_loss, mae_loss_matrix, patchify, pretrain_forward, sample_mask,
    ClassifierModel, Graph, MaePretrainModel, MaskPlan, ModelConfig, ModelError, ParamStore, Pooling,
};
use usfmae_tensor::{Rng, Tape, Tensor};

fn micro(use_cls: bool) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 8,
        channels: 3,
        encoder_layers: 1,
        encoder_dim: 8,
        encoder_heads: 2,
        decoder_layers: 1,
        decoder_dim: 8,
        decoder_heads: 2,
        mask_ratio: 0.75,
        mlp_ratio: 2,
        use_class_token: use_cls,
        layer_norm_eps: 1e-6,
        dropout: 0.0,
    }
}

fn random_image(c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(vec![c, h, w], |_| rng.normal() as f32)
}

fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(vec![r, c], |_| rng.normal())
}

fn encode_f64(cfg: &ModelConfig, params: &ParamStore<f64>, patches: &Tensor<f64>, plan: &MaskPlan) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = params.bind_with(&mut tape, |_| false);
    let mut g = Graph::new(&mut tape, cfg, params.view(&vars));
    let z = g.encode(patches, plan).unwrap();
    tape.value(z).clone()
}

#[test]
fn patchify_32_into_16_gives_four_rows() {
    let mut rng = Rng::new(1);
    let img = random_image(3, 32, 32, &mut rng);
    let grid = patchify(&img, 16).unwrap();
    assert_eq!(grid.patches.shape(), &[4, 768]);
    assert_eq!(grid.to_image().unwrap(), img);
    // patch 1 is the top-right block; its first row holds pixel (0, 16) of each channel
    let d = img.data();
    assert_eq!(&grid.patches.row(1)[..3], &[d[16], d[1024 + 16], d[2048 + 16]]);
}

#[test]
fn base_geometry() {
    let cfg = ModelConfig::base();
    assert_eq!(cfg.num_patches(), 196);
    assert_eq!(cfg.patch_dim(), 768);
    assert_eq!(cfg.num_masked(), 49);
    let plan = sample_mask(196, cfg.mask_ratio, &mut Rng::new(0));
    assert_eq!(plan.visible().len(), 147);
    assert!(matches!(
        patchify(&Tensor::<f32>::zeros(vec![3, 30, 32]), 16),
        Err(ModelError::IndivisibleDims { height: 30, .. })
    ));
}

#[test]
fn zero_embeddings_still_give_finite_tokens() {
    let cfg = micro(true);
    let mut model = MaePretrainModel::new(cfg.clone(), &mut Rng::new(2)).unwrap();
    for name in ["patch_embed.weight", "patch_embed.bias", "pos_embed", "cls_token"] {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.set(name, Tensor::zeros(shape)).unwrap();
    }
    let img = random_image(3, 16, 16, &mut Rng::new(3));
    let plan = MaskPlan::from_masked(4, &[1, 2, 3]).unwrap();
    let out = model.reconstruct(&img, &plan).unwrap();
    assert_eq!(out.shape(), &[4, 192]);
    assert!(out.all_finite());
}

#[test]
fn encoder_is_permutation_equivariant_without_positions() {
    let cfg = micro(false);
    let model = MaePretrainModel::new(cfg.clone(), &mut Rng::new(4)).unwrap();
    let mut p = model.params.cast::<f64>();
    p.set("pos_embed", Tensor::zeros(vec![4, 8])).unwrap();
    let mut rng = Rng::new(5);
    let x = random_matrix(4, 192, &mut rng);
    let perm = [2usize, 0, 3, 1];
    let mut xp = Vec::new();
    for &i in &perm {
        xp.extend_from_slice(x.row(i));
    }
    let xp = Tensor::from_vec(vec![4, 192], xp).unwrap();
    let plan = MaskPlan::none(4);
    let z = encode_f64(&cfg, &p, &x, &plan);
    let zp = encode_f64(&cfg, &p, &xp, &plan);
    for (j, &i) in perm.iter().enumerate() {
        for (a, b) in zp.row(j).iter().zip(z.row(i)) {
            assert!((a - b).abs() < 1e-12, "row {j}: {a} vs {b}");
        }
    }
}

// Plain-f64 reference for one token through patch embedding, one pre-norm
// block and the final norm. With a single token the attention weights are 1.
fn vec_mat(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let out = w.shape()[1];
    cols.map(|j| b.data()[j] + x.iter().enumerate().map(|(i, v)| v * w.data()[i * out + j]).sum::<f64>())
        .collect()
}

fn ln(x: &[f64], g: &Tensor<f64>, b: &Tensor<f64>, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mu) / (var + eps).sqrt() * g.data()[i] + b.data()[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[test]
fn single_visible_token_matches_hand_trace() {
    let cfg = micro(false);
    let model = MaePretrainModel::new(cfg.clone(), &mut Rng::new(6)).unwrap();
    let p = model.params.cast::<f64>();
    let x = random_matrix(4, 192, &mut Rng::new(7));
    let plan = MaskPlan::from_masked(4, &[0, 1, 3]).unwrap();
    let got = encode_f64(&cfg, &p, &x, &plan);
    assert_eq!(got.shape(), &[1, 8]);

    let t = |n: &str| p.get(n).unwrap();
    let dim = 8;
    let mut z = vec_mat(x.row(2), t("patch_embed.weight"), t("patch_embed.bias"), 0..dim);
    for (v, pe) in z.iter_mut().zip(t("pos_embed").row(2)) {
        *v += pe;
    }
    let a = ln(&z, t("encoder.0.ln1.weight"), t("encoder.0.ln1.bias"), 1e-6);
    let v = vec_mat(&a, t("encoder.0.attn.qkv.weight"), t("encoder.0.attn.qkv.bias"), 2 * dim..3 * dim);
    let o = vec_mat(&v, t("encoder.0.attn.proj.weight"), t("encoder.0.attn.proj.bias"), 0..dim);
    let h: Vec<f64> = z.iter().zip(&o).map(|(a, b)| a + b).collect();
    let m = ln(&h, t("encoder.0.ln2.weight"), t("encoder.0.ln2.bias"), 1e-6);
    let m: Vec<f64> = vec_mat(&m, t("encoder.0.mlp.fc1.weight"), t("encoder.0.mlp.fc1.bias"), 0..2 * dim)
        .into_iter()
        .map(gelu)
        .collect();
    let m = vec_mat(&m, t("encoder.0.mlp.fc2.weight"), t("encoder.0.mlp.fc2.bias"), 0..dim);
    let z1: Vec<f64> = h.iter().zip(&m).map(|(a, b)| a + b).collect();
    let want = ln(&z1, t("encoder.norm.weight"), t("encoder.norm.bias"), 1e-6);

    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn decoder_returns_all_patches_and_zero_weights_give_head_bias() {
    let cfg = micro(true);
    let mut model = MaePretrainModel::new(cfg.clone(), &mut Rng::new(8)).unwrap();
    let img = random_image(3, 16, 16, &mut Rng::new(9));
    for masked in [vec![0], vec![1, 2, 3], vec![3]] {
        let plan = MaskPlan::from_masked(4, &masked).unwrap();
        assert_eq!(model.reconstruct(&img, &plan).unwrap().shape(), &[4, 192]);
    }
    let names: Vec<String> = model.params.names().to_vec();
    for name in &names {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.set(name, Tensor::zeros(shape)).unwrap();
    }
    let bias = Tensor::from_fn(vec![192], |i| (i as f32 * 0.37).sin());
    model.params.set("decoder_pred.bias", bias.clone()).unwrap();
    let plan = MaskPlan::from_masked(4, &[0, 2]).unwrap();
    let out = model.reconstruct(&img, &plan).unwrap();
    for i in 0..4 {
        assert_eq!(out.row(i), bias.data());
    }
}

#[test]
fn loss_examples() {
    let x = Tensor::<f64>::zeros(vec![4, 4]);
    let plan = MaskPlan::from_masked(4, &[1]).unwrap();
    assert_eq!(mae_loss(&x, &x, &plan).unwrap(), 0.0);
    let mut xh = x.clone();
    xh.data_mut()[4..8].fill(0.5);
    assert_eq!(mae_loss(&xh, &x, &plan).unwrap(), 0.25);
    // errors on visible rows do not count
    xh.data_mut()[0] = 100.0;
    assert_eq!(mae_loss(&xh, &x, &plan).unwrap(), 0.25);
    assert!(matches!(mae_loss(&xh, &x, &MaskPlan::none(4)), Err(ModelError::EmptyMask)));
    assert!(matches!(
        mae_loss(&Tensor::<f64>::zeros(vec![4, 3]), &x, &plan),
        Err(ModelError::ShapeMismatch(_))
    ));
}

proptest! {
    #[test]
    fn matrix_and_row_forms_agree(seed in any::<u64>(), n in 2usize..12, d in 1usize..10) {
        let mut rng = Rng::new(seed);
        let x = random_matrix(n, d, &mut rng);
        let xh = random_matrix(n, d, &mut rng);
        let m = 1 + rng.below(n);
        let plan = MaskPlan::from_masked(n, &rng.sample_indices(n, m)).unwrap();
        let a = mae_loss(&xh, &x, &plan).unwrap();
        let b = mae_loss_matrix(&xh, &x, &plan).unwrap();
        prop_assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
    }
}

#[test]
fn masked_pixels_do_not_reach_the_reconstruction() {
    let cfg = micro(true);
    let model = MaePretrainModel::new(cfg, &mut Rng::new(10)).unwrap();
    let mut img = random_image(3, 16, 16, &mut Rng::new(11));
    // patch 3 covers rows 8..16, cols 8..16
    let plan = MaskPlan::from_masked(4, &[3, 0]).unwrap();
    let before = model.reconstruct(&img, &plan).unwrap();
    for c in 0..3 {
        for y in 8..16 {
            for x in 8..16 {
                img.data_mut()[(c * 16 + y) * 16 + x] += 3.0;
            }
        }
    }
    assert_eq!(model.reconstruct(&img, &plan).unwrap(), before);
    img.data_mut()[8] += 1.0; // patch 1 is visible
    assert_ne!(model.reconstruct(&img, &plan).unwrap(), before);
}

#[test]
fn batch_loss_is_mean_of_image_losses() {
    let cfg = micro(true);
    let model = MaePretrainModel::new(cfg, &mut Rng::new(12)).unwrap();
    let mut rng = Rng::new(13);
    let batch: Vec<_> = (0..3).map(|_| random_image(3, 16, 16, &mut rng)).collect();
    let out = pretrain_forward(&model, &batch, &mut Rng::new(14)).unwrap();
    assert_eq!(out.plans.len(), 3);
    let mut sum = 0.0;
    for (img, plan) in batch.iter().zip(&out.plans) {
        assert_eq!(plan.num_masked(), 3);
        let s = model.loss_and_grads(img, plan, 1.0, None).unwrap();
        sum += s.loss as f64;
    }
    assert!((out.loss as f64 - sum / 3.0).abs() < 1e-6);
    assert!(pretrain_forward(&model, &[], &mut Rng::new(0)).is_err());
}

#[test]
fn classifier_shapes_and_zero_head() {
    let cfg = micro(true);
    let pre = MaePretrainModel::new(cfg, &mut Rng::new(15)).unwrap();
    let mut rng = Rng::new(16);
    let batch: Vec<_> = (0..3).map(|_| random_image(3, 16, 16, &mut rng)).collect();
    for pooling in [Pooling::ClassToken, Pooling::MeanPool] {
        let mut clf = ClassifierModel::from_pretrained(&pre, pooling, 2, &mut Rng::new(17)).unwrap();
        let logits = classify_forward(&clf, &batch).unwrap();
        assert_eq!(logits.shape(), &[3, 2]);
        assert!(logits.all_finite());
        assert_eq!(classify_forward(&clf, &batch).unwrap(), logits);
        clf.params.set("head.weight", Tensor::zeros(vec![8, 2])).unwrap();
        clf.params.set("head.bias", Tensor::from_vec(vec![2], vec![0.5, -1.0]).unwrap()).unwrap();
        let logits = classify_forward(&clf, &batch).unwrap();
        assert_eq!(logits.data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
    }
    let no_cls = MaePretrainModel::new(micro(false), &mut Rng::new(18)).unwrap();
    assert!(matches!(
        ClassifierModel::from_pretrained(&no_cls, Pooling::ClassToken, 2, &mut Rng::new(0)),
        Err(ModelError::InvalidConfig(_))
    ));
    // encoder weights are carried over unchanged
    let clf = ClassifierModel::from_pretrained(&pre, Pooling::MeanPool, 2, &mut Rng::new(19)).unwrap();
    assert_eq!(clf.params.get("encoder.0.attn.qkv.weight"), pre.params.get("encoder.0.attn.qkv.weight"));
    assert!(clf.params.get("decoder_pred.weight").is_none());
}

#[test]
fn cross_entropy_values_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let z = tape.param(Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let l = cross_entropy(&mut tape, z, &[0]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

    let z = tape.param(Tensor::from_vec(vec![1, 2], vec![1000.0, 0.0]).unwrap());
    let l = cross_entropy(&mut tape, z, &[0]).unwrap();
    assert!(tape.value(l).item().is_finite() && tape.value(l).item().abs() < 1e-12);
    let l = cross_entropy(&mut tape, z, &[1]).unwrap();
    assert!((tape.value(l).item() - 1000.0).abs() < 1e-9);

    assert!(matches!(
        cross_entropy(&mut tape, z, &[2]),
        Err(ModelError::LabelOutOfRange { label: 2, classes: 2 })
    ));

    // d/dz of the batch mean is (softmax - onehot) / B
    let vals = vec![0.3, -1.2, 2.0, 0.5, 0.5, -0.1];
    let z = tape.param(Tensor::from_vec(vec![2, 3], vals.clone()).unwrap());
    let l = cross_entropy(&mut tape, z, &[2, 0]).unwrap();
    let g = tape.backward(l).unwrap().get(z);
    for (r, y) in [(0usize, 2usize), (1, 0)] {
        let row = &vals[r * 3..r * 3 + 3];
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        for c in 0..3 {
            let want = (row[c].exp() / s - f64::from(u8::from(c == y))) / 2.0;
            assert!((g.data()[r * 3 + c] - want).abs() < 1e-12);
        }
    }
}
