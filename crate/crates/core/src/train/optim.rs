use serde::{Deserialize, Serialize};
use usfmae_tensor::{Scalar, Tensor};

use super::{Result, TrainError};
use crate::model::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("optimizer {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Moments are stored at `f32`; each update is computed in `f64` and rounded
/// once.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Updates every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        let all = vec![true; params.len()];
        self.step_masked(params, grads, lr, &all)
    }

    /// Updates the parameters with `update[i]` set; others (and their
    /// moments) are left untouched.
    pub fn step_masked(
        &mut self,
        params: &mut ParamStore,
        grads: &[Tensor<f32>],
        lr: f64,
        update: &[bool],
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() || update.len() != params.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensors()[i].shape() || self.m[i].shape() != g.shape() {
                return Err(TrainError::ShapeMismatch(format!(
                    "parameter {}: value {:?}, gradient {:?}",
                    params.names()[i],
                    params.tensors()[i].shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decays = params.decays().to_vec();
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            if !update[i] {
                continue;
            }
            let shrink = if decays[i] { 1.0 - lr * c.weight_decay } else { 1.0 };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = gv as f64;
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * g;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let upd = (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                *pv = (*pv as f64 * shrink - lr * upd) as f32;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::from_f64(v.as_f64() * s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f32], decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("p", Tensor::from_vec(vec![vals.len()], vals.to_vec()).unwrap(), decay);
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = store(&[1.0, -2.0, 3.5], true);
        let before = p.clone();
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        let g = vec![Tensor::zeros(vec![3])];
        for _ in 0..10 {
            opt.step(&mut p, &g, 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn decay_skipped_for_excluded_params() {
        let mut p = store(&[1.0], false);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &[Tensor::zeros(vec![1])], 0.1).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.0]);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = store(&[0.0, 0.0], true);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &p,
        );
        let g = vec![Tensor::from_vec(vec![2], vec![0.3, -2.0]).unwrap()];
        for _ in 0..100 {
            opt.step(&mut p, &g, 1e-2).unwrap();
        }
        let d = p.tensors()[0].data();
        assert!(d[0] < 0.0 && d[1] > 0.0);
        // Each step moves by at most lr (bias-corrected ratio ≈ 1).
        assert!(d[0].abs() <= 1.0 + 1e-4 && d[1].abs() <= 1.0 + 1e-4);
    }

    #[test]
    fn masked_step_leaves_frozen_untouched() {
        let mut p = ParamStore::new();
        p.push("a", Tensor::ones(vec![2]), true);
        p.push("b", Tensor::ones(vec![2]), true);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let g = vec![Tensor::ones(vec![2]), Tensor::ones(vec![2])];
        opt.step_masked(&mut p, &g, 0.1, &[false, true]).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.0, 1.0]);
        assert_ne!(p.tensors()[1].data(), &[1.0, 1.0]);
        assert_eq!(opt.m[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut p = store(&[1.0, 2.0], true);
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let err = opt.step(&mut p, &[Tensor::zeros(vec![3])], 0.1).unwrap_err();
        assert!(matches!(err, TrainError::ShapeMismatch(_)));
    }

    #[test]
    fn clip_three_four() {
        let mut g = vec![Tensor::from_vec(vec![2], vec![3.0f64, 4.0]).unwrap()];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
        assert!((g[0].data()[1] - 0.8).abs() < 1e-12);
        let mut small = vec![Tensor::from_vec(vec![2], vec![0.3f32, 0.4]).unwrap()];
        let before = small.clone();
        assert!((clip_grad_norm(&mut small, 1.0) - 0.5).abs() < 1e-7);
        assert_eq!(small, before);
    }
}
