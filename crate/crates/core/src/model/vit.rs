use serde::{Deserialize, Serialize};
use usfmae_tensor::{Rng, Scalar, Tape, Tensor, Var};

use super::params::{push_block, push_linear, push_norm, trunc_normal, Bound, ParamStore};
use super::patch::{patchify, MaskPlan};
use super::{ModelConfig, ModelError, Result};

/// How the classifier turns encoder tokens into one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    ClassToken,
    MeanPool,
}

/// One forward graph over bound parameters.
///
/// Dropout is active only when an rng is supplied.
pub struct Graph<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    cfg: &'a ModelConfig,
    p: Bound<'a>,
    rng: Option<&'a mut Rng>,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, cfg: &'a ModelConfig, p: Bound<'a>) -> Self {
        Graph {
            tape,
            cfg,
            p,
            rng: None,
        }
    }

    pub fn training(mut self, rng: &'a mut Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.cfg.dropout > 0.0 => {
                Ok(self.tape.dropout(x, self.cfg.dropout, rng, true)?)
            }
            _ => Ok(x),
        }
    }

    fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p.var(&format!("{name}.weight"))?;
        let b = self.p.var(&format!("{name}.bias"))?;
        Ok(self.tape.linear(x, w, Some(b))?)
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.p.var(&format!("{name}.weight"))?;
        let b = self.p.var(&format!("{name}.bias"))?;
        let axis = self.tape.shape(x).len() - 1;
        let y = self.tape.layer_norm(x, axis, self.cfg.layer_norm_eps)?;
        let y = self.tape.mul_broadcast(y, g)?;
        Ok(self.tape.add_broadcast(y, b)?)
    }

    /// Multi-head self-attention over `[n, D]` tokens.
    fn attention(&mut self, prefix: &str, x: Var, heads: usize) -> Result<Var> {
        let (n, dim) = match *self.tape.shape(x) {
            [n, dim] => (n, dim),
            ref s => return Err(ModelError::ShapeMismatch(format!("attention input {s:?}"))),
        };
        let dh = dim / heads;
        let t = &mut *self.tape;
        let w = self.p.var(&format!("{prefix}.qkv.weight"))?;
        let b = self.p.var(&format!("{prefix}.qkv.bias"))?;
        let qkv = t.linear(x, w, Some(b))?;
        let qkv = t.reshape(qkv, &[n, 3, heads, dh])?;
        let qkv = t.permute(qkv, &[1, 2, 0, 3])?;
        let mut part = |i: usize| -> Result<Var> {
            let s = t.slice(qkv, 0, i, 1)?;
            Ok(t.reshape(s, &[heads, n, dh])?)
        };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let kt = t.transpose(k)?;
        let scores = t.matmul(q, kt)?;
        let scores = t.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()))?;
        let attn = t.softmax(scores, 2)?;
        let out = t.matmul(attn, v)?;
        let out = t.permute(out, &[1, 0, 2])?;
        let out = t.reshape(out, &[n, dim])?;
        self.linear(&format!("{prefix}.proj"), out)
    }

    /// Pre-norm block: h = z + MSA(LN z); z' = h + MLP(LN h).
    fn block(&mut self, prefix: &str, z: Var, heads: usize) -> Result<Var> {
        let a = self.norm(&format!("{prefix}.ln1"), z)?;
        let a = self.attention(&format!("{prefix}.attn"), a, heads)?;
        let a = self.dropout(a)?;
        let h = self.tape.add(z, a)?;
        let m = self.norm(&format!("{prefix}.ln2"), h)?;
        let m = self.linear(&format!("{prefix}.mlp.fc1"), m)?;
        let m = self.tape.gelu(m)?;
        let m = self.linear(&format!("{prefix}.mlp.fc2"), m)?;
        let m = self.dropout(m)?;
        Ok(self.tape.add(h, m)?)
    }

    fn check_patches(&self, patches: &Tensor<T>, plan: &MaskPlan) -> Result<()> {
        let want = [self.cfg.num_patches(), self.cfg.patch_dim()];
        if patches.shape() != want || plan.num_patches() != want[0] {
            return Err(ModelError::ShapeMismatch(format!(
                "patches {:?} with plan over {} patches, model expects {:?}",
                patches.shape(),
                plan.num_patches(),
                want
            )));
        }
        Ok(())
    }

    /// Encoder tokens for the visible patches, class token first if enabled.
    ///
    /// Masked rows of `patches` are never read.
    pub fn encode(&mut self, patches: &Tensor<T>, plan: &MaskPlan) -> Result<Var> {
        self.check_patches(patches, plan)?;
        let d = self.cfg.patch_dim();
        let vis = plan.visible();
        let mut rows = Vec::with_capacity(vis.len() * d);
        for &i in vis {
            rows.extend_from_slice(patches.row(i));
        }
        let x = self.tape.constant(Tensor::from_vec(vec![vis.len(), d], rows)?);
        let x = self.linear("patch_embed", x)?;
        let pos = self.p.var("pos_embed")?;
        let off = usize::from(self.cfg.use_class_token);
        let pos_rows: Vec<usize> = vis.iter().map(|&i| i + off).collect();
        let p = self.tape.gather_rows(pos, &pos_rows)?;
        let mut z = self.tape.add(x, p)?;
        if self.cfg.use_class_token {
            let cls = self.p.var("cls_token")?;
            let p0 = self.tape.slice(pos, 0, 0, 1)?;
            let c = self.tape.add(cls, p0)?;
            z = self.tape.concat(&[c, z], 0)?;
        }
        for l in 0..self.cfg.encoder_layers {
            z = self.block(&format!("encoder.{l}"), z, self.cfg.encoder_heads)?;
        }
        self.norm("encoder.norm", z)
    }

    /// Reconstruction `[N, d]` from encoder output.
    pub fn decode(&mut self, encoded: Var, plan: &MaskPlan) -> Result<Var> {
        let nv = plan.visible().len();
        let off = usize::from(self.cfg.use_class_token);
        if self.tape.shape(encoded) != [nv + off, self.cfg.encoder_dim] {
            return Err(ModelError::ShapeMismatch(format!(
                "decoder input {:?}, expected [{}, {}]",
                self.tape.shape(encoded),
                nv + off,
                self.cfg.encoder_dim
            )));
        }
        let tokens = if off == 1 {
            self.tape.slice(encoded, 0, 1, nv)?
        } else {
            encoded
        };
        let y = self.linear("decoder_embed", tokens)?;
        let m = plan.num_masked();
        let seq = if m > 0 {
            let mt = self.p.var("mask_token")?;
            let mt = self.tape.gather_rows(mt, &vec![0; m])?;
            self.tape.concat(&[y, mt], 0)?
        } else {
            y
        };
        // seq holds visible tokens then mask tokens; put each back at its patch id.
        let mut order = vec![0; plan.num_patches()];
        for (j, &i) in plan.visible().iter().enumerate() {
            order[i] = j;
        }
        for (j, &i) in plan.masked().iter().enumerate() {
            order[i] = nv + j;
        }
        let full = self.tape.gather_rows(seq, &order)?;
        let pos = self.p.var("decoder_pos_embed")?;
        let mut z = self.tape.add(full, pos)?;
        for l in 0..self.cfg.decoder_layers {
            z = self.block(&format!("decoder.{l}"), z, self.cfg.decoder_heads)?;
        }
        let z = self.norm("decoder.norm", z)?;
        self.linear("decoder_pred", z)
    }

    /// Masked MSE on the tape: (1/(M·d)) Σ_{i∈𝓜} ‖x̂_i − x_i‖².
    pub fn mae_loss(&mut self, pred: Var, target: &Tensor<T>, plan: &MaskPlan) -> Result<Var> {
        mae_loss_on_tape(self.tape, pred, target, plan)
    }

    /// Logits `[1, classes]` for one image with every patch visible.
    pub fn classify(&mut self, patches: &Tensor<T>, pooling: Pooling) -> Result<Var> {
        let plan = MaskPlan::none(self.cfg.num_patches());
        let z = self.encode(patches, &plan)?;
        let dim = self.cfg.encoder_dim;
        let pooled = match pooling {
            Pooling::ClassToken => {
                if !self.cfg.use_class_token {
                    return Err(ModelError::InvalidConfig(
                        "class_token pooling needs use_class_token".into(),
                    ));
                }
                self.tape.slice(z, 0, 0, 1)?
            }
            Pooling::MeanPool => {
                let off = usize::from(self.cfg.use_class_token);
                let n = self.cfg.num_patches();
                let toks = if off == 1 { self.tape.slice(z, 0, 1, n)? } else { z };
                let m = self.tape.mean_axis(toks, 0)?;
                self.tape.reshape(m, &[1, dim])?
            }
        };
        let pooled = self.dropout(pooled)?;
        self.linear("head", pooled)
    }
}

pub(crate) fn mae_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    plan: &MaskPlan,
) -> Result<Var> {
    if tape.shape(pred) != target.shape() || target.shape()[0] != plan.num_patches() {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?} over {} patches",
            tape.shape(pred),
            target.shape(),
            plan.num_patches()
        )));
    }
    let m = plan.num_masked();
    if m == 0 {
        return Err(ModelError::EmptyMask);
    }
    let d = target.shape()[1];
    let mut rows = Vec::with_capacity(m * d);
    for &i in plan.masked() {
        rows.extend_from_slice(target.row(i));
    }
    let x = tape.constant(Tensor::from_vec(vec![m, d], rows)?);
    let xh = tape.gather_rows(pred, plan.masked())?;
    let diff = tape.sub(xh, x)?;
    let sq = tape.square(diff)?;
    let s = tape.sum(sq)?;
    Ok(tape.scale(s, T::from_f64(1.0 / (m * d) as f64))?)
}

/// −(1/B) Σ log softmax(z_b)[y_b] on the tape.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = match *tape.shape(logits) {
        [b, c] => (b, c),
        ref s => return Err(ModelError::ShapeMismatch(format!("logits {s:?}"))),
    };
    if b != labels.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{b} logit rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= c) {
        return Err(ModelError::LabelOutOfRange { label, classes: c });
    }
    let ls = tape.log_softmax(logits, 1)?;
    let picked = tape.select_per_row(ls, labels)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -T::one())?)
}

/// Encoder/decoder parameters for masked-autoencoder pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct MaePretrainModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn push_encoder(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) {
    let dim = cfg.encoder_dim;
    push_linear(store, "patch_embed", cfg.patch_dim(), dim, rng);
    if cfg.use_class_token {
        store.push("cls_token", trunc_normal(&[1, dim], rng), true);
    }
    store.push("pos_embed", trunc_normal(&[cfg.encoder_tokens(), dim], rng), true);
    for l in 0..cfg.encoder_layers {
        push_block(store, &format!("encoder.{l}"), dim, cfg.mlp_ratio, rng);
    }
    push_norm(store, "encoder.norm", dim);
}

/// True for parameters that belong to the encoder.
pub fn is_encoder_param(name: &str) -> bool {
    ["patch_embed.", "pos_embed", "cls_token", "encoder."]
        .iter()
        .any(|p| name.starts_with(p))
}

impl MaePretrainModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        push_encoder(&mut params, &config, rng);
        let dd = config.decoder_dim;
        push_linear(&mut params, "decoder_embed", config.encoder_dim, dd, rng);
        params.push("mask_token", trunc_normal(&[1, dd], rng), true);
        params.push(
            "decoder_pos_embed",
            trunc_normal(&[config.num_patches(), dd], rng),
            true,
        );
        for l in 0..config.decoder_layers {
            push_block(&mut params, &format!("decoder.{l}"), dd, config.mlp_ratio, rng);
        }
        push_norm(&mut params, "decoder.norm", dd);
        push_linear(&mut params, "decoder_pred", dd, config.patch_dim(), rng);
        Ok(MaePretrainModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_elements()
    }

    /// Reconstruction `[N, d]` of a normalized `[C, H, W]` image under `plan`.
    pub fn reconstruct(&self, image: &Tensor<f32>, plan: &MaskPlan) -> Result<Tensor<f32>> {
        let grid = patchify(image, self.config.patch_size)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_with(&mut tape, |_| false);
        let mut g = Graph::new(&mut tape, &self.config, self.params.view(&vars));
        let enc = g.encode(&grid.patches, plan)?;
        let out = g.decode(enc, plan)?;
        Ok(tape.value(out).clone())
    }

    /// Masked loss of one image, its gradient scaled by `weight`, and the
    /// reconstruction. Gradients follow parameter registration order.
    pub fn loss_and_grads(
        &self,
        image: &Tensor<f32>,
        plan: &MaskPlan,
        weight: f32,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<SampleGrads> {
        let grid = patchify(image, self.config.patch_size)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let mut g = Graph::new(&mut tape, &self.config, self.params.view(&vars));
        if let Some(rng) = dropout_rng {
            g = g.training(rng);
        }
        let enc = g.encode(&grid.patches, plan)?;
        let pred = g.decode(enc, plan)?;
        let loss = g.mae_loss(pred, &grid.patches, plan)?;
        let weighted = tape.scale(loss, weight)?;
        let mut grads = tape.backward(weighted)?;
        Ok(SampleGrads {
            loss: tape.value(loss).item(),
            grads: vars.iter().map(|&v| grads.take(v)).collect(),
            reconstruction: tape.value(pred).clone(),
        })
    }
}

/// Per-sample output of a differentiated forward pass.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    pub loss: f32,
    pub grads: Vec<Tensor<f32>>,
    pub reconstruction: Tensor<f32>,
}

/// Result of [`pretrain_forward`].
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    /// Mean of the per-image losses.
    pub loss: f32,
    pub losses: Vec<f32>,
    pub plans: Vec<MaskPlan>,
    pub reconstructions: Vec<Tensor<f32>>,
}

/// Forward pass over a batch with an independent mask per image, drawn from
/// `rng` in batch order.
pub fn pretrain_forward(
    model: &MaePretrainModel,
    batch: &[Tensor<f32>],
    rng: &mut Rng,
) -> Result<PretrainOutput> {
    if batch.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    let cfg = &model.config;
    let mut out = PretrainOutput {
        loss: 0.0,
        losses: Vec::with_capacity(batch.len()),
        plans: Vec::with_capacity(batch.len()),
        reconstructions: Vec::with_capacity(batch.len()),
    };
    for img in batch {
        let plan = super::sample_mask(cfg.num_patches(), cfg.mask_ratio, rng);
        let grid = patchify(img, cfg.patch_size)?;
        let pred = model.reconstruct(img, &plan)?;
        out.losses.push(mae_loss(&pred, &grid.patches, &plan)? as f32);
        out.plans.push(plan);
        out.reconstructions.push(pred);
    }
    let sum: f64 = out.losses.iter().map(|&l| l as f64).sum();
    out.loss = (sum / batch.len() as f64) as f32;
    Ok(out)
}

/// Masked MSE evaluated row by row, accumulated in f64.
pub fn mae_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, plan: &MaskPlan) -> Result<f64> {
    check_loss_shapes(pred, target, plan)?;
    let d = target.shape()[1];
    let mut s = 0.0;
    for &i in plan.masked() {
        for (a, b) in pred.row(i).iter().zip(target.row(i)) {
            let e = a.as_f64() - b.as_f64();
            s += e * e;
        }
    }
    Ok(s / (plan.num_masked() * d) as f64)
}

/// Matrix form: ‖𝐌 ⊙ (X̂ − X)‖²_F / (M·d) with the binary mask matrix 𝐌.
pub fn mae_loss_matrix<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    plan: &MaskPlan,
) -> Result<f64> {
    check_loss_shapes(pred, target, plan)?;
    let d = target.shape()[1];
    let mask = plan.matrix::<T>(d);
    let s: f64 = mask
        .data()
        .iter()
        .zip(pred.data().iter().zip(target.data()))
        .map(|(m, (a, b))| {
            let e = m.as_f64() * (a.as_f64() - b.as_f64());
            e * e
        })
        .sum();
    Ok(s / (plan.num_masked() * d) as f64)
}

fn check_loss_shapes<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, plan: &MaskPlan) -> Result<()> {
    if pred.shape() != target.shape()
        || pred.rank() != 2
        || pred.shape()[0] != plan.num_patches()
    {
        return Err(ModelError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?} over {} patches",
            pred.shape(),
            target.shape(),
            plan.num_patches()
        )));
    }
    if plan.num_masked() == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok(())
}

/// Pretrained encoder plus a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ModelConfig,
    pub pooling: Pooling,
    pub num_classes: usize,
    pub params: ParamStore,
}

impl ClassifierModel {
    /// Copies the encoder of `pretrained` and attaches a fresh head.
    pub fn from_pretrained(
        pretrained: &MaePretrainModel,
        pooling: Pooling,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let cfg = &pretrained.config;
        if num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        if pooling == Pooling::ClassToken && !cfg.use_class_token {
            return Err(ModelError::InvalidConfig(
                "class_token pooling needs use_class_token".into(),
            ));
        }
        let mut params = ParamStore::new();
        let src = &pretrained.params;
        for (i, name) in src.names().iter().enumerate() {
            if is_encoder_param(name) {
                params.push(name.clone(), src.tensors()[i].clone(), src.decays()[i]);
            }
        }
        push_linear(&mut params, "head", cfg.encoder_dim, num_classes, rng);
        Ok(ClassifierModel {
            config: cfg.clone(),
            pooling,
            num_classes,
            params,
        })
    }

    /// Fresh randomly initialized encoder and head.
    pub fn new(config: ModelConfig, pooling: Pooling, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut enc = ParamStore::new();
        push_encoder(&mut enc, &config, rng);
        let pretrained = MaePretrainModel {
            config,
            params: enc,
        };
        Self::from_pretrained(&pretrained, pooling, num_classes, rng)
    }

    /// Cross-entropy of one image weighted by `weight`, with gradients for
    /// the parameters accepted by `trainable` (zeros elsewhere).
    pub fn loss_and_grads(
        &self,
        image: &Tensor<f32>,
        label: usize,
        weight: f32,
        trainable: impl Fn(&str) -> bool,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(f32, Vec<Tensor<f32>>)> {
        let grid = patchify(image, self.config.patch_size)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_with(&mut tape, trainable);
        let mut g = Graph::new(&mut tape, &self.config, self.params.view(&vars));
        if let Some(rng) = dropout_rng {
            g = g.training(rng);
        }
        let logits = g.classify(&grid.patches, self.pooling)?;
        let loss = cross_entropy(&mut tape, logits, &[label])?;
        let weighted = tape.scale(loss, weight)?;
        let mut grads = tape.backward(weighted)?;
        Ok((
            tape.value(loss).item(),
            vars.iter().map(|&v| grads.take(v)).collect(),
        ))
    }
}

/// Eval-mode logits `[B, classes]`.
pub fn classify_forward(model: &ClassifierModel, batch: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let mut rows = Vec::with_capacity(batch.len() * model.num_classes);
    for img in batch {
        let grid = patchify(img, model.config.patch_size)?;
        let mut tape = Tape::new();
        let vars = model.params.bind_with(&mut tape, |_| false);
        let mut g = Graph::new(&mut tape, &model.config, model.params.view(&vars));
        let logits = g.classify(&grid.patches, model.pooling)?;
        rows.extend_from_slice(tape.value(logits).data());
    }
    Ok(Tensor::from_vec(vec![batch.len(), model.num_classes], rows)?)
}

/// Row-wise softmax of a `[B, C]` logit matrix.
pub fn softmax_rows(logits: &Tensor<f32>) -> Vec<Vec<f64>> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
