//! Operation recording and reverse-mode differentiation.

use crate::error::{shape_err, Result, TensorError};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{axis_split, numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    GatherRows { x: Var, indices: Vec<usize> },
    Sum(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm { x: Var, axis: usize, inv_std: Vec<T> },
    Gelu(Var),
    Dropout { x: Var, mask: Vec<T> },
    SelectPerRow { x: Var, indices: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records every operation of one forward pass in topological order.
///
/// A tape is single-owner; build a fresh one per step.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return shape_err(op, format!("axis {axis} out of range for {shape:?}"));
    }
    Ok(())
}

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn erf_gelu<T: Scalar>(x: T) -> (T, T) {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    (x * cdf, cdf + x * pdf)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// Enables the NaN/Inf trap on every recorded value.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input: no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input: backward reports a gradient for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFiniteValue { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_map(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    fn broadcast_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(op, format!("{sb:?} is not a trailing suffix of {sa:?}"));
        }
        Ok(numel(sb))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.broadcast_len("add_broadcast", a, b)?;
        let tb = self.value(b).data();
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb[i % nb.max(1)])
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push("add_broadcast", out, Op::AddBroadcast(a, b), &[a, b])
    }

    /// `a * b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.broadcast_len("mul_broadcast", a, b)?;
        let tb = self.value(b).data();
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tb[i % nb.max(1)])
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push("mul_broadcast", out, Op::MulBroadcast(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    fn matmul_dims(&self, a: Var, b: Var) -> Result<(usize, usize, usize, usize, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err("matmul", format!("{sa:?} @ {sb:?}: operands need rank >= 2"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared_b = sb.len() == 2;
        if k != k2 || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return shape_err("matmul", format!("{sa:?} @ {sb:?}"));
        }
        Ok((batch, m, k, n, shared_b))
    }

    /// Batched matrix product over leading dimensions; a rank-2 right operand
    /// is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n, shared_b) = self.matmul_dims(a, b)?;
        let ta = self.value(a).data();
        let tb = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let bs = if shared_b { 0 } else { bi * k * n };
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &ta[bi * m * k..],
                k as isize,
                1,
                &tb[bs..],
                n as isize,
                1,
                T::zero(),
                &mut out[bi * m * n..],
                n as isize,
                1,
            );
        }
        let mut shape = self.shape(a).to_vec();
        let last = shape.len() - 1;
        shape[last] = n;
        self.push("matmul", Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b])
    }

    /// `x @ w + b` with `w` of shape `[in, out]` and `b` of shape `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return shape_err("permute", format!("axes {axes:?} for shape {shape:?}"));
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, axes);
        self.push(
            "permute",
            Tensor::from_parts(out_shape, data),
            Op::Permute(x, axes.to_vec()),
            &[x],
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return shape_err("transpose", "rank < 2");
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return shape_err("concat", format!("{s:?} vs {base:?} along axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat(xs.to_vec(), axis),
            xs,
        )
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return shape_err("slice", format!("{start}..{} exceeds extent {}", start + len, shape[axis]));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(
            "slice",
            Tensor::from_parts(out_shape, data),
            Op::Slice { x, axis, start },
            &[x],
        )
    }

    /// Rows of `x` (along axis 0) picked by `indices`; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return shape_err("gather_rows", "rank-0 input");
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= shape[0] {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    extent: shape[0],
                });
            }
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        self.push(
            "gather_rows",
            Tensor::from_parts(out_shape, data),
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("sum_axis", Tensor::from_parts(out_shape, data), Op::SumAxis(x, axis), &[x])
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("mean_axis", &shape, axis)?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::one() / T::from_f64(shape[axis] as f64))
    }

    fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&dyn Fn(usize) -> usize, usize)) {
        let (outer, len, inner) = axis_split(shape, axis);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let at = |j: usize| base + j * inner;
                f(&at, len);
            }
        }
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        Self::for_each_lane(&shape, axis, |at, len| {
            let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                let p = at(j);
                out[p] = out[p] / total;
            }
        });
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax(x, axis), &[x])
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("log_softmax", &shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        Self::for_each_lane(&shape, axis, |at, len| {
            let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
            let total = (0..len).map(|j| (src[at(j)] - max).exp()).fold(T::zero(), |a, b| a + b);
            let lse = max + total.ln();
            for j in 0..len {
                out[at(j)] = src[at(j)] - lse;
            }
        });
        self.push(
            "log_softmax",
            Tensor::from_parts(shape, out),
            Op::LogSoftmax(x, axis),
            &[x],
        )
    }

    /// Standardizes each lane along `axis` (biased variance, no affine).
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                detail: format!("eps must be > 0, got {eps}"),
            });
        }
        let shape = self.shape(x).to_vec();
        check_axis("layer_norm", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let eps = T::from_f64(eps);
        let n = T::from_f64(len as f64);
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        Self::for_each_lane(&shape, axis, |at, len| {
            let mean = (0..len).map(|j| src[at(j)]).fold(T::zero(), |a, b| a + b) / n;
            let var = (0..len)
                .map(|j| {
                    let d = src[at(j)] - mean;
                    d * d
                })
                .fold(T::zero(), |a, b| a + b)
                / n;
            let r = T::one() / (var + eps).sqrt();
            for j in 0..len {
                out[at(j)] = (src[at(j)] - mean) * r;
            }
            inv_std.push(r);
        });
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm { x, axis, inv_std },
            &[x],
        )
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| erf_gelu(v).0);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("p must lie in [0, 1), got {p}"),
            });
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    /// `out[b] = x[b, indices[b]]` for a `[B, C]` input.
    pub fn select_per_row(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != indices.len() {
            return shape_err(
                "select_per_row",
                format!("{shape:?} with {} indices", indices.len()),
            );
        }
        let c = shape[1];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            if i >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "select_per_row",
                    index: i,
                    extent: c,
                });
            }
            data.push(src[b * c + i]);
        }
        self.push(
            "select_per_row",
            Tensor::from_parts(vec![indices.len()], data),
            Op::SelectPerRow {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let acc = |v: Var, contrib: Vec<T>, grads: &mut [Option<Tensor<T>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(contrib) {
                        *a = *a + b;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), contrib));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gd.to_vec(), grads);
                acc(*b, gd.to_vec(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec(), grads);
                acc(*b, gd.iter().map(|&v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(tb).map(|(&g, &y)| g * y).collect(), grads);
                acc(*b, gd.iter().zip(ta).map(|(&g, &x)| g * x).collect(), grads);
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, gd.to_vec(), grads);
                let nb = self.value(*b).len();
                let mut db = vec![T::zero(); nb];
                for (i, &v) in gd.iter().enumerate() {
                    db[i % nb] = db[i % nb] + v;
                }
                acc(*b, db, grads);
            }
            Op::MulBroadcast(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let nb = tb.len();
                acc(*a, gd.iter().enumerate().map(|(i, &g)| g * tb[i % nb]).collect(), grads);
                let mut db = vec![T::zero(); nb];
                for (i, (&g, &x)) in gd.iter().zip(ta).enumerate() {
                    db[i % nb] = db[i % nb] + g * x;
                }
                acc(*b, db, grads);
            }
            Op::Scale(a, f) => acc(*a, gd.iter().map(|&v| v * *f).collect(), grads),
            Op::MatMul(a, b) => {
                let (batch, m, k, n, shared_b) = self.matmul_dims(*a, *b).expect("validated in forward");
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let bs = if shared_b { 0 } else { bi * k * n };
                        // da = g @ b^T
                        T::gemm(
                            m, n, k, T::one(), &gd[bi * m * n..], n as isize, 1, &tb[bs..], 1,
                            n as isize, T::zero(), &mut da[bi * m * k..], k as isize, 1,
                        );
                    }
                    acc(*a, da, grads);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); if shared_b { k * n } else { batch * k * n }];
                    for bi in 0..batch {
                        let (bs, beta) = if shared_b {
                            (0, if bi == 0 { T::zero() } else { T::one() })
                        } else {
                            (bi * k * n, T::zero())
                        };
                        // db = a^T @ g
                        T::gemm(
                            k, m, n, T::one(), &ta[bi * m * k..], 1, k as isize, &gd[bi * m * n..],
                            n as isize, 1, beta, &mut db[bs..], n as isize, 1,
                        );
                    }
                    acc(*b, db, grads);
                }
            }
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (_, data) = permute_data(gd, g.shape(), &inverse);
                acc(*x, data, grads);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec(), grads),
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    let mut part = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    offset += len;
                    acc(v, part, grads);
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, extent, inner) = axis_split(shape, *axis);
                let len = g.shape()[*axis];
                let mut dx = vec![T::zero(); numel(shape)];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                acc(*x, dx, grads);
            }
            Op::GatherRows { x, indices } => {
                let shape = self.shape(*x);
                let row: usize = shape[1..].iter().product();
                let mut dx = vec![T::zero(); numel(shape)];
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &v) in dx[i * row..(i + 1) * row].iter_mut().zip(&gd[r * row..(r + 1) * row]) {
                        *d = *d + v;
                    }
                }
                acc(*x, dx, grads);
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).len()], grads),
            Op::SumAxis(x, axis) => {
                let shape = self.shape(*x);
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut dx = Vec::with_capacity(numel(shape));
                for o in 0..outer {
                    for _ in 0..len {
                        dx.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                acc(*x, dx, grads);
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                Self::for_each_lane(node.value.shape(), *axis, |at, len| {
                    let dot = (0..len).map(|j| gd[at(j)] * y[at(j)]).fold(T::zero(), |a, b| a + b);
                    for j in 0..len {
                        let p = at(j);
                        dx[p] = y[p] * (gd[p] - dot);
                    }
                });
                acc(*x, dx, grads);
            }
            Op::LogSoftmax(x, axis) => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                Self::for_each_lane(node.value.shape(), *axis, |at, len| {
                    let total = (0..len).map(|j| gd[at(j)]).fold(T::zero(), |a, b| a + b);
                    for j in 0..len {
                        let p = at(j);
                        dx[p] = gd[p] - y[p].exp() * total;
                    }
                });
                acc(*x, dx, grads);
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                let mut lane = 0;
                Self::for_each_lane(node.value.shape(), *axis, |at, len| {
                    let n = T::from_f64(len as f64);
                    let mut mg = T::zero();
                    let mut mgy = T::zero();
                    for j in 0..len {
                        mg = mg + gd[at(j)];
                        mgy = mgy + gd[at(j)] * y[at(j)];
                    }
                    mg = mg / n;
                    mgy = mgy / n;
                    let r = inv_std[lane];
                    for j in 0..len {
                        let p = at(j);
                        dx[p] = r * (gd[p] - mg - y[p] * mgy);
                    }
                    lane += 1;
                });
                acc(*x, dx, grads);
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                acc(*x, gd.iter().zip(xs).map(|(&g, &v)| g * erf_gelu(v).1).collect(), grads);
            }
            Op::Dropout { x, mask } => {
                acc(*x, gd.iter().zip(mask).map(|(&g, &m)| g * m).collect(), grads);
            }
            Op::SelectPerRow { x, indices } => {
                let c = self.shape(*x)[1];
                let mut dx = vec![T::zero(); indices.len() * c];
                for (b, &i) in indices.iter().enumerate() {
                    dx[b * c + i] = gd[b];
                }
                acc(*x, dx, grads);
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    /// Moves the gradient out, leaving nothing behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(t) => t,
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.layer_norm(x, 0, 1e-12).unwrap();
        let expect = (1.5f64).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] + expect).abs() < 1e-9);
        assert!(out[1].abs() < 1e-12);
        assert!((out[2] - expect).abs() < 1e-9);
    }

    #[test]
    fn matmul_hand_checked() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(tape.shape(c), &[2, 2]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn linear_sum_gradient_is_input_pattern() {
        // loss = sum(x @ W) => dW[i, j] = x[i] (summed over rows of x)
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, -2.0, 0.5]));
        let w = tape.param(Tensor::ones(vec![3, 2]));
        let y = tape.linear(x, w, None).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[3], &[1.0, 1.0, 1.0]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn checked_mode_traps_nan() {
        let mut tape = Tape::new().checked(true);
        let x = tape.constant(t(&[1], &[f64::MAX]));
        assert!(matches!(
            tape.scale(x, 10.0),
            Err(TensorError::NonFiniteValue { op: "scale" })
        ));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(tape.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        let y = tape.dropout(x, 0.5, &mut rng, true).unwrap();
        for (&o, &i) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!(o == 0.0 || o == 2.0 * i);
        }
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        // y[k, i, j] = x[i, j, k]
        assert_eq!(tape.value(y).data()[1 * 6 + 1 * 3 + 2], data[1 * 12 + 2 * 4 + 1]);
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(z).data(), &data[..]);
    }

    #[test]
    fn gather_rows_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            tape.gather_rows(x, &[0, 2]),
            Err(TensorError::IndexOutOfRange { index: 2, .. })
        ));
    }
}
