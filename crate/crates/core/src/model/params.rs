use std::collections::HashMap;

use usfmae_tensor::{Rng, Scalar, Tape, Tensor, Var};

use super::{ModelError, Result};

/// Named parameter tensors in registration order.
///
/// Registration order is the iteration order everywhere: binding onto a tape,
/// optimizer moments, gradient summation and the checkpoint layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    decay: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            decay: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` marks it for weight decay.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        self.decay.push(decay);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn decays(&self) -> &[bool] {
        &self.decay
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .position(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "parameter {name}: expected {:?}, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = value;
        Ok(())
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            decay: self.decay.clone(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter on `tape`; those for which `trainable` returns
    /// false become constants and receive no gradient.
    pub fn bind_with(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                if trainable(n) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.bind_with(tape, |_| true)
    }

    /// Name lookup over vars produced by [`bind`](Self::bind).
    pub fn view<'a>(&'a self, vars: &'a [Var]) -> Bound<'a> {
        assert_eq!(vars.len(), self.len(), "bound var count");
        Bound {
            index: &self.index,
            vars,
        }
    }
}

/// Tape variables of a [`ParamStore`], addressable by name.
#[derive(Debug, Clone, Copy)]
pub struct Bound<'a> {
    index: &'a HashMap<String, usize>,
    vars: &'a [Var],
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

const INIT_STD: f64 = 0.02;

pub(crate) fn trunc_normal<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.trunc_normal(INIT_STD)))
}

pub(crate) fn push_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) {
    store.push(format!("{name}.weight"), trunc_normal(&[fan_in, fan_out], rng), true);
    store.push(format!("{name}.bias"), Tensor::zeros(vec![fan_out]), false);
}

pub(crate) fn push_norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) {
    store.push(format!("{name}.weight"), Tensor::ones(vec![dim]), false);
    store.push(format!("{name}.bias"), Tensor::zeros(vec![dim]), false);
}

pub(crate) fn push_block<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    dim: usize,
    mlp_ratio: usize,
    rng: &mut Rng,
) {
    push_norm(store, &format!("{prefix}.ln1"), dim);
    push_linear(store, &format!("{prefix}.attn.qkv"), dim, 3 * dim, rng);
    push_linear(store, &format!("{prefix}.attn.proj"), dim, dim, rng);
    push_norm(store, &format!("{prefix}.ln2"), dim);
    push_linear(store, &format!("{prefix}.mlp.fc1"), dim, mlp_ratio * dim, rng);
    push_linear(store, &format!("{prefix}.mlp.fc2"), mlp_ratio * dim, dim, rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_with_freezes_selected() {
        let mut s = ParamStore::<f64>::new();
        s.push("a.weight", Tensor::ones(vec![2]), true);
        s.push("b.bias", Tensor::ones(vec![2]), false);
        let mut tape = Tape::new();
        let vars = s.bind_with(&mut tape, |n| n.starts_with('a'));
        assert!(tape.requires_grad(vars[0]));
        assert!(!tape.requires_grad(vars[1]));
        let view = s.view(&vars);
        assert_eq!(view.var("b.bias").unwrap(), vars[1]);
        assert!(matches!(view.var("c"), Err(ModelError::MissingParam(_))));
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::<f32>::new();
        s.push("w", Tensor::zeros(vec![2, 2]), true);
        assert!(s.set("w", Tensor::zeros(vec![4])).is_err());
        s.set("w", Tensor::ones(vec![2, 2])).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0; 4]);
    }
}
