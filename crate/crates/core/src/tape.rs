//! Reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Tape`] records each operation with its output. [`Tape::backward`]
//! replays the records in reverse and returns the gradient of a scalar loss
//! with respect to every leaf created with `requires_grad = true`.
//!
//! Leaves may borrow their tensors, so model parameters are not copied for
//! every step:
//!
//! ```
//! use ebn::{Shape4, Tape, Tensor4};
//!
//! let w = Tensor4::from_rows(&[[1.0, 2.0], [3.0, 4.0]])?;
//! let b = Tensor4::channel_vector(vec![0.0, 0.0])?;
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor4::from_rows(&[[1.0, 1.0]])?);
//! let w_var = tape.param(&w);
//! let b_var = tape.param(&b);
//! let y = tape.linear(x, w_var, b_var)?;
//! let loss = tape.sum(y)?;
//! assert_eq!(tape.value(loss)?.data(), &[10.0]);
//!
//! let grads = tape.backward(loss)?;
//! assert_eq!(grads.get(w_var).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
//! assert_eq!(grads.get(b_var).unwrap().shape(), Shape4::channels(2));
//! # Ok::<(), ebn::Error>(())
//! ```

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::norm::{self, BatchStats, NormCache, NormKind};
use crate::tensor::{Shape4, Tensor4};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Relu { x: usize },
    Norm { x: usize, gamma: usize, beta: usize, cache: Box<NormCache> },
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor4 },
    Mul { a: usize, b: usize },
    Sum { x: usize },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor4>,
    op: Op,
    requires_grad: bool,
}

/// Single-writer record of a forward computation.
#[derive(Debug)]
pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, value: &'a Tensor4) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Owned leaf that receives a gradient.
    pub fn param_owned(&mut self, value: Tensor4) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Owned leaf without a gradient, such as an input batch.
    pub fn constant(&mut self, value: Tensor4) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor4> {
        Ok(&self.nodes[self.index(var)?].value)
    }

    /// `y[n, o] = Σ_i w[o, i]·x[n, i] + b[o]` for `x` of shape `(N, I, 1, 1)`,
    /// `w` of shape `(O, I, 1, 1)` and `b` of shape `(1, O, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let y = linear_forward(&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value)?;
        let rg = self.any_requires_grad(&[xi, wi, bi]);
        Ok(self.push(Cow::Owned(y), Op::Linear { x: xi, w: wi, b: bi }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let y = self.nodes[xi].value.map(|v| v.max(0.0));
        let rg = self.any_requires_grad(&[xi]);
        Ok(self.push(Cow::Owned(y), Op::Relu { x: xi }, rg))
    }

    /// Training-mode normalization. The batch statistics are returned so the
    /// caller can update running averages.
    pub fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        kind: NormKind,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (xi, gi, bi) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let input = &self.nodes[xi].value;
        let channels = Shape4::channels(input.shape().c);
        self.nodes[gi].value.expect_shape("normalize gamma", channels)?;
        self.nodes[bi].value.expect_shape("normalize beta", channels)?;
        let (y, cache) = norm::forward_raw(
            input,
            kind,
            self.nodes[gi].value.data(),
            self.nodes[bi].value.data(),
            eps,
        )?;
        let stats = cache.stats.clone();
        let rg = self.any_requires_grad(&[xi, gi, bi]);
        let op = Op::Norm { x: xi, gamma: gi, beta: bi, cache: Box::new(cache) };
        Ok((self.push(Cow::Owned(y), op, rg), stats))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.index(logits)?;
        let (loss, probs) = softmax_cross_entropy_forward(&self.nodes[li].value, labels)?;
        let rg = self.any_requires_grad(&[li]);
        let op = Op::SoftmaxCrossEntropy { logits: li, labels: labels.to_vec(), probs };
        Ok(self.push(Cow::Owned(scalar(loss)), op, rg))
    }

    /// Elementwise product of two same-shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        let y = self.nodes[ai].value.zip_map(&self.nodes[bi].value, |p, q| p * q)?;
        let rg = self.any_requires_grad(&[ai, bi]);
        Ok(self.push(Cow::Owned(y), Op::Mul { a: ai, b: bi }, rg))
    }

    /// Sum of all elements, as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.index(x)?;
        let s = self.nodes[xi].value.sum();
        let rg = self.any_requires_grad(&[xi]);
        Ok(self.push(Cow::Owned(scalar(s)), Op::Sum { x: xi }, rg))
    }

    /// Propagates `∂loss/∂·` back through the tape, consuming it.
    ///
    /// Every gradient-requiring leaf gets an entry, zero if the loss does
    /// not depend on it.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let li = self.index(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor4>> = vec![None; self.nodes.len()];
        grads[li] = Some(Tensor4::full(self.nodes[li].value.shape(), 1.0));

        for idx in (0..=li).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            let wants = |i: usize| self.nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = linear_backward(&upstream, &self.nodes[*x].value, &self.nodes[*w].value);
                    for (i, g) in [(*x, dx), (*w, dw), (*b, db)] {
                        if wants(i) {
                            accumulate(&mut grads[i], g);
                        }
                    }
                }
                Op::Relu { x } => {
                    if wants(*x) {
                        let input = &self.nodes[*x].value;
                        let g = upstream.zip_map(input, |d, v| if v > 0.0 { d } else { 0.0 })?;
                        accumulate(&mut grads[*x], g);
                    }
                }
                Op::Norm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = norm::backward_raw(&upstream, cache)?;
                    let dg = Tensor4::channel_vector(dg)?;
                    let db = Tensor4::channel_vector(db)?;
                    for (i, g) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                        if wants(i) {
                            accumulate(&mut grads[i], g);
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    if wants(*logits) {
                        let scale = upstream.data()[0] / labels.len() as f64;
                        let mut g = probs.clone();
                        let k = probs.shape().c;
                        for (row, &label) in g.data_mut().chunks_exact_mut(k).zip(labels) {
                            row[label] -= 1.0;
                            row.iter_mut().for_each(|v| *v *= scale);
                        }
                        accumulate(&mut grads[*logits], g);
                    }
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if wants(*a) {
                        accumulate(&mut grads[*a], upstream.zip_map(vb, |d, q| d * q)?);
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], upstream.zip_map(va, |d, p| d * p)?);
                    }
                }
                Op::Sum { x } => {
                    if wants(*x) {
                        let d = upstream.data()[0];
                        accumulate(&mut grads[*x], Tensor4::full(self.nodes[*x].value.shape(), d));
                    }
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => {
                    Some(g.unwrap_or_else(|| Tensor4::zeros(node.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }

    fn push(&mut self, value: Cow<'a, Tensor4>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn index(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::Usage("variable was not recorded on this tape".into()));
        }
        Ok(var.index)
    }

    fn any_requires_grad(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }
}

/// Gradients of one loss with respect to the leaves of one tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor4> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index)?.as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor4> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index)?.take()
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn scalar(v: f64) -> Tensor4 {
    Tensor4::full(Shape4::new(1, 1, 1, 1), v)
}

/// Dense layer forward pass; see [`Tape::linear`] for shapes.
pub fn linear_forward(x: &Tensor4, w: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (xs, ws) = (x.shape(), w.shape());
    if !xs.is_nc() {
        return Err(Error::shape("linear input", "(N, C, 1, 1)", xs));
    }
    if !ws.is_nc() || ws.c != xs.c {
        return Err(Error::shape("linear weight", format!("(out, {}, 1, 1)", xs.c), ws));
    }
    b.expect_shape("linear bias", Shape4::channels(ws.n))?;
    let (n, inp, out) = (xs.n, xs.c, ws.n);
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b.data());
    }
    gemm(n, inp, out, x.data(), (inp, 1), w.data(), (1, inp), 1.0, &mut y);
    Tensor4::from_vec(Shape4::nc(n, out), y)
}

fn linear_backward(dy: &Tensor4, x: &Tensor4, w: &Tensor4) -> (Tensor4, Tensor4, Tensor4) {
    let (n, inp, out) = (x.shape().n, x.shape().c, w.shape().n);
    let mut dx = Tensor4::zeros(x.shape());
    gemm(n, out, inp, dy.data(), (out, 1), w.data(), (inp, 1), 0.0, dx.data_mut());
    let mut dw = Tensor4::zeros(w.shape());
    gemm(out, n, inp, dy.data(), (1, out), x.data(), (inp, 1), 0.0, dw.data_mut());
    let mut db = Tensor4::zeros(Shape4::channels(out));
    for row in dy.data().chunks_exact(out) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

/// Mean cross-entropy of row-wise softmax against integer labels, with
/// the softmax probabilities.
pub fn softmax_cross_entropy_forward(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let shape = logits.shape();
    if !shape.is_nc() {
        return Err(Error::shape("softmax_cross_entropy", "(N, K, 1, 1)", shape));
    }
    if labels.len() != shape.n {
        return Err(Error::InvalidInput(format!(
            "{} labels for a batch of {}",
            labels.len(),
            shape.n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape.c) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {} classes", shape.c)));
    }
    let k = shape.c;
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (row, &label) in probs.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target = row[label] - max;
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        // -log p[label] = log z - (logit[label] - max)
        total += z.ln() - target;
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok((total / shape.n as f64, probs))
}
