//! Recorded computation for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes in exact reverse
//! order. Nodes that do not depend on a parameter or variable leaf carry
//! `requires_grad = false` and are skipped.

use super::kernels::{self, NormStats};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Variable,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Option<Var>,
        stats: NormStats<T>,
    },
    Lookup {
        table: Var,
        index: usize,
    },
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Sum(Var),
    AddN(Vec<Var>),
    Scale(Var, T),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A free leaf whose gradient can be read back with [`Tape::gradients`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Variable, true)
    }

    /// Records the current value of a stored parameter. Its gradient is
    /// accumulated into `store` by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// `a[m×k] · b[k×n]`; `b` may also be a vector of length `k`, giving a vector of length `m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 2 && (sb.len() == 1 || sb.len() == 2) && sa[1] == sb[0];
        if !ok {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out_shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let out = kernels::matmul(self.value(a).data(), m, k, self.value(b).data(), n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, s), rg)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let mut last = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            last += s[s.len() - 1];
        }
        let outer: usize = lead.iter().product();
        let mut out = Vec::with_capacity(outer * last);
        for r in 0..outer {
            for &p in parts {
                let s = self.shape(p);
                let w = s[s.len() - 1];
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(last);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", s, &[start, len]));
        }
        let t = Tensor::vector(self.value(x).data()[start..start + len].to_vec());
        let rg = self.rg(x);
        Ok(self.push(t, Op::Slice { x, start }, rg))
    }

    /// Layer normalization of a vector; `bias = None` means a fixed zero bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Option<Var>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(Error::shape("layer_norm", s, self.shape(gain)));
        }
        self.same_shape("layer_norm", x, gain)?;
        if let Some(b) = bias {
            self.same_shape("layer_norm", x, b)?;
        }
        let (y, stats) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gain).data(),
            bias.map(|b| self.value(b).data()),
        );
        let rg = self.rg(x) || self.rg(gain) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::vector(y), Op::LayerNorm { x, gain, bias, stats }, rg))
    }

    /// Row `index` of a rank-2 table.
    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::shape("lookup", s, &[index]));
        }
        if index >= s[0] {
            return Err(Error::Index {
                what: "embedding row",
                index,
                size: s[0],
            });
        }
        let row = self.value(table).row(index).to_vec();
        let rg = self.rg(table);
        Ok(self.push(Tensor::vector(row), Op::Lookup { table, index }, rg))
    }

    /// Fused softmax and cross-entropy (nats) against a class index.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::shape("softmax_xent", s, &[target]));
        }
        if target >= s[0] {
            return Err(Error::Index {
                what: "target class",
                index: target,
                size: s[0],
            });
        }
        let (loss, probs) = kernels::softmax_xent(self.value(logits).data(), target);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, target, probs }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(t, Op::Sum(x), rg)
    }

    /// Elementwise sum of equally shaped values, added in the given order.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("add_n of zero tensors".into()))?;
        let mut acc = self.value(first).data().to_vec();
        for &x in &xs[1..] {
            self.same_shape("add_n", first, x)?;
            kernels::add_assign(&mut acc, self.value(x).data());
        }
        let t = Tensor::new(self.shape(first).to_vec(), acc)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(t, Op::AddN(xs.to_vec()), rg))
    }

    /// Reverse pass from the scalar `loss`, returning gradients for every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `d(loss)/d(param)` into `store` for every parameter recorded on this tape.
    /// Repeated calls accumulate; zeroing is the caller's job.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                if id.0 >= store.len() || store.grad(*id).len() != g.len() {
                    return Err(Error::Contract(format!(
                        "tape parameter {} does not belong to this store",
                        id.0
                    )));
                }
                kernels::add_assign(store.grad_mut(*id).data_mut(), g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let da = self.acc(grads, *a);
                    kernels::matmul_backward(av, bv, g, *m, *k, *n, Some(da), None);
                }
                if self.rg(*b) {
                    let db = self.acc(grads, *b);
                    kernels::matmul_backward(av, bv, g, *m, *k, *n, None, Some(db));
                }
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    if self.rg(x) {
                        kernels::add_assign(self.acc(grads, x), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (x, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(x) {
                        let ov = self.value(other).data();
                        for ((d, &gi), &o) in self.acc(grads, x).iter_mut().zip(g).zip(ov) {
                            *d += gi * o;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                for ((d, &gi), &yi) in self.acc(grads, *x).iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (T::one() - yi);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                for ((d, &gi), &yi) in self.acc(grads, *x).iter_mut().zip(g).zip(y) {
                    *d += gi * (T::one() - yi * yi);
                }
            }
            Op::Scale(x, s) => {
                kernels::axpy(*s, g, self.acc(grads, *x));
            }
            Op::Concat(parts) => {
                let out_last = *node.value.shape().last().unwrap();
                let outer = node.value.len() / out_last;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.rg(p) {
                        let dp = self.acc(grads, p);
                        for r in 0..outer {
                            let src = &g[r * out_last + offset..r * out_last + offset + w];
                            kernels::add_assign(&mut dp[r * w..(r + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start } => {
                let dx = self.acc(grads, *x);
                kernels::add_assign(&mut dx[*start..*start + g.len()], g);
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let gv = self.value(*gain).data();
                if self.rg(*x) {
                    let dx = self.acc(grads, *x);
                    kernels::layer_norm_backward(g, gv, stats, Some(dx), None, None);
                }
                if self.rg(*gain) {
                    let dg = self.acc(grads, *gain);
                    kernels::layer_norm_backward(g, gv, stats, None, Some(dg), None);
                }
                if let Some(b) = bias {
                    if self.rg(*b) {
                        kernels::add_assign(self.acc(grads, *b), g);
                    }
                }
            }
            Op::Lookup { table, index } => {
                let cols = self.shape(*table)[1];
                let dt = self.acc(grads, *table);
                kernels::add_assign(&mut dt[index * cols..(index + 1) * cols], g);
            }
            Op::SoftmaxXent { logits, target, probs } => {
                let dl = self.acc(grads, *logits);
                let gs = g[0];
                for (j, (d, &p)) in dl.iter_mut().zip(probs).enumerate() {
                    let y = if j == *target { T::one() } else { T::zero() };
                    *d += gs * (p - y);
                }
            }
            Op::Sum(x) => {
                let gs = g[0];
                self.acc(grads, *x).iter_mut().for_each(|d| *d += gs);
            }
            Op::AddN(xs) => {
                for &x in xs {
                    if self.rg(x) {
                        kernels::add_assign(self.acc(grads, x), g);
                    }
                }
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}
