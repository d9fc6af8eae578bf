//! Reverse-mode autodiff over a recorded op tape.
//!
//! Nodes are appended in execution order, so the tape is already
//! topologically sorted; backward walks it once in reverse, visiting exactly
//! the nodes whose output influences the loss.

use super::ops::{self, Padding};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: usize, k: usize, padding: Padding },
    MaxPool2d { x: usize, argmax: Vec<u32> },
    Dense { x: usize, w: usize, b: usize },
    Matmul { a: usize, b: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Sum { x: usize },
    Reshape { x: usize },
    SelectStep { x: usize, step: usize },
    SliceCols { x: usize, start: usize, len: usize },
    Softmax { x: usize },
    SoftmaxXent { logits: usize, labels: Vec<usize>, softmax: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> impl Iterator<Item = usize> {
        let (ids, len): ([usize; 3], usize) = match self {
            Op::Leaf => ([0; 3], 0),
            Op::Conv2d { x, k, .. } => ([*x, *k, 0], 2),
            Op::MaxPool2d { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::SelectStep { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Softmax { x } => ([*x, 0, 0], 1),
            Op::Dense { x, w, b } => ([*x, *w, *b], 3),
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                ([*a, *b, 0], 2)
            }
            Op::SoftmaxXent { logits, .. } => ([*logits, 0, 0], 1),
        };
        ids.into_iter().take(len)
    }
}

struct Node<E: Element> {
    op: Op,
    value: Tensor<E>,
    requires_grad: bool,
}

/// Recorded compute tape.
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor<E>, requires_grad: bool) -> VarId {
        self.nodes.push(Node { op, value, requires_grad });
        VarId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, id: VarId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, id: VarId) -> Option<&[E]> {
        self.nodes[id.0].value.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf; its `requires_grad` flag decides whether
    /// backward will populate its gradient.
    pub fn leaf(&mut self, value: Tensor<E>) -> VarId {
        let rg = value.requires_grad();
        self.push(Op::Leaf, value, rg)
    }

    /// Leaves that will receive gradients, in insertion order.
    pub fn leaves_requiring_grad(&self) -> Vec<VarId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.requires_grad)
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn conv2d(&mut self, x: VarId, kernel: VarId, padding: Padding) -> Result<VarId> {
        let xs = self.value(x).shape();
        let ks = self.value(kernel).shape();
        if xs.len() != 4 {
            return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::shape("conv2d", format!("kernel must be [K,C,3,3], got {ks:?}")));
        }
        if xs[1] != ks[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} vs kernel channels {}", xs[1], ks[1]),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if padding == Padding::Valid && (h < 3 || w < 3) {
            return Err(Error::shape("conv2d", format!("valid padding needs H,W >= 3, got {h}x{w}")));
        }
        let kout = ks[0];
        let (oh, ow) = padding.out_dims(h, w);
        let data = ops::conv2d_forward(
            self.value(x).data(),
            n,
            c,
            h,
            w,
            self.value(kernel).data(),
            kout,
            padding,
        );
        let value = Tensor::new([n, kout, oh, ow], data)?;
        let rg = self.needs_grad(&[x.0, kernel.0]);
        Ok(self.push(Op::Conv2d { x: x.0, k: kernel.0, padding }, value, rg))
    }

    pub fn maxpool2d(&mut self, x: VarId, stride: usize) -> Result<VarId> {
        let xs = self.value(x).shape();
        if xs.len() != 4 {
            return Err(Error::shape("maxpool2d", format!("input must be [N,C,H,W], got {xs:?}")));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("maxpool2d stride must be 1 or 2, got {stride}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h < 2 || w < 2 {
            return Err(Error::shape("maxpool2d", format!("spatial dims must be >= 2, got {h}x{w}")));
        }
        let (data, argmax, oh, ow) = ops::maxpool2d_forward(self.value(x).data(), n, c, h, w, stride);
        let value = Tensor::new([n, c, oh, ow], data)?;
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Op::MaxPool2d { x: x.0, argmax }, value, rg))
    }

    pub fn dense(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        let bs = self.value(b).shape();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::shape(
                "dense",
                format!("expected [N,D] x [D,M] + [M], got {xs:?} x {ws:?} + {bs:?}"),
            ));
        }
        if xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::shape(
                "dense",
                format!("dim mismatch: {xs:?} x {ws:?} + {bs:?}"),
            ));
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let mut data = vec![E::ZERO; n * m];
        for row in data.chunks_exact_mut(m) {
            row.copy_from_slice(self.value(b).data());
        }
        E::gemm_accumulate(self.value(x).data(), self.value(w).data(), &mut data, n, d, m);
        let value = Tensor::new([n, m], data)?;
        let rg = self.needs_grad(&[x.0, w.0, b.0]);
        Ok(self.push(Op::Dense { x: x.0, w: w.0, b: b.0 }, value, rg))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let as_ = self.value(a).shape();
        let bs = self.value(b).shape();
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::shape("matmul", format!("{as_:?} x {bs:?}")));
        }
        let (n, d, m) = (as_[0], as_[1], bs[1]);
        let mut data = vec![E::ZERO; n * m];
        E::gemm_accumulate(self.value(a).data(), self.value(b).data(), &mut data, n, d, m);
        let value = Tensor::new([n, m], data)?;
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(Op::Matmul { a: a.0, b: b.0 }, value, rg))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| v.maximum(E::ZERO));
        let rg = self.needs_grad(&[x.0]);
        self.push(Op::Relu { x: x.0 }, value, rg)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let value = self
            .value(x)
            .map(|v| E::ONE.div(E::ONE.add(v.neg().exp())));
        let rg = self.needs_grad(&[x.0]);
        self.push(Op::Sigmoid { x: x.0 }, value, rg)
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let value = self.value(x).map(|v| v.tanh());
        let rg = self.needs_grad(&[x.0]);
        self.push(Op::Tanh { x: x.0 }, value, rg)
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: VarId, b: VarId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x.add(y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, value, rg))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x.sub(y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, value, rg))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x.mul(y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, value, rg))
    }

    pub fn scale(&mut self, x: VarId, factor: f64) -> VarId {
        let f = E::from_f64(factor);
        let value = self.value(x).map(|v| v.mul(f));
        let rg = self.needs_grad(&[x.0]);
        self.push(Op::Scale { x: x.0, factor }, value, rg)
    }

    pub fn sum(&mut self, x: VarId) -> VarId {
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc = acc.add(v);
        }
        let rg = self.needs_grad(&[x.0]);
        self.push(Op::Sum { x: x.0 }, Tensor::scalar(acc), rg)
    }

    pub fn reshape(&mut self, x: VarId, shape: impl Into<Vec<usize>>) -> Result<VarId> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Op::Reshape { x: x.0 }, value, rg))
    }

    /// `[N,T,D] -> [N,D]`, picking time step `step`.
    pub fn select_step(&mut self, x: VarId, step: usize) -> Result<VarId> {
        let xs = self.value(x).shape();
        if xs.len() != 3 {
            return Err(Error::shape("select_step", format!("input must be [N,T,D], got {xs:?}")));
        }
        let (n, t, d) = (xs[0], xs[1], xs[2]);
        if step >= t {
            return Err(Error::InvalidArgument(format!("step {step} out of range 0..{t}")));
        }
        let src = self.value(x).data();
        let mut data = vec![E::ZERO; n * d];
        for i in 0..n {
            data[i * d..(i + 1) * d].copy_from_slice(&src[(i * t + step) * d..][..d]);
        }
        let value = Tensor::new([n, d], data)?;
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Op::SelectStep { x: x.0, step }, value, rg))
    }

    /// `[N,D] -> [N,len]`, columns `start..start+len`.
    pub fn slice_cols(&mut self, x: VarId, start: usize, len: usize) -> Result<VarId> {
        let xs = self.value(x).shape();
        if xs.len() != 2 {
            return Err(Error::shape("slice_cols", format!("input must be [N,D], got {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        if start + len > d {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of 0..{d}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut data = vec![E::ZERO; n * len];
        for i in 0..n {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * d + start..][..len]);
        }
        let value = Tensor::new([n, len], data)?;
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Op::SliceCols { x: x.0, start, len }, value, rg))
    }

    /// Row-wise softmax of `[N,M]` logits.
    pub fn softmax(&mut self, x: VarId) -> Result<VarId> {
        let xs = self.value(x).shape();
        if xs.len() != 2 {
            return Err(Error::shape("softmax", format!("input must be [N,M], got {xs:?}")));
        }
        let (n, m) = (xs[0], xs[1]);
        let data = ops::softmax_rows(self.value(x).data(), n, m);
        let value = Tensor::new([n, m], data)?;
        let rg = self.needs_grad(&[x.0]);
        Ok(self.push(Op::Softmax { x: x.0 }, value, rg))
    }

    /// Mean cross-entropy of binary `[N,2]` logits against class labels.
    pub fn softmax_xent(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        let ls = self.value(logits).shape();
        if ls.len() != 2 || ls[1] != 2 {
            return Err(Error::shape(
                "softmax_xent",
                format!("logits must be [N,2] for the binary task, got {ls:?}"),
            ));
        }
        if labels.len() != ls[0] {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} rows",
                labels.len(),
                ls[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {{0,1}}")));
        }
        let (loss, softmax) = ops::softmax_xent_forward(self.value(logits).data(), ls[0], labels);
        let softmax = softmax.iter().map(|v| v.to_f64()).collect();
        let rg = self.needs_grad(&[logits.0]);
        Ok(self.push(
            Op::SoftmaxXent { logits: logits.0, labels: labels.to_vec(), softmax },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Populate gradients of every `requires_grad` leaf reachable from `loss`.
    /// Repeated calls accumulate.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        // Mark ancestors of the loss that need gradients.
        let mut marked = vec![false; self.nodes.len()];
        let mut stack = vec![loss.0];
        while let Some(i) = stack.pop() {
            if marked[i] || !self.nodes[i].requires_grad {
                continue;
            }
            marked[i] = true;
            for inp in self.nodes[i].op.inputs() {
                stack.push(inp);
            }
        }

        let mut bufs: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        bufs[loss.0] = Some(vec![E::ONE]);

        for i in (0..=loss.0).rev() {
            if !marked[i] {
                continue;
            }
            let Some(d_out) = bufs[i].take() else { continue };
            self.backprop_node(i, &d_out, &mut bufs);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&d_out);
            }
        }

        // Leaves that demanded a gradient but never influenced the loss still
        // get a (zero) buffer, so callers can rely on `grad()` being present.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.value.grad().is_none() {
                let zeros = vec![E::ZERO; node.value.numel()];
                node.value.accumulate_grad(&zeros);
            }
        }
        Ok(())
    }

    fn accumulate(&self, bufs: &mut [Option<Vec<E>>], target: usize, update: impl FnOnce(&mut [E])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let buf = bufs[target].get_or_insert_with(|| vec![E::ZERO; self.nodes[target].value.numel()]);
        update(buf);
    }

    fn backprop_node(&self, i: usize, d_out: &[E], bufs: &mut [Option<Vec<E>>]) {
        // Split borrows: the op description is read-only while buffers mutate.
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, padding } => {
                let (x, k, padding) = (*x, *k, *padding);
                let xs = self.nodes[x].value.shape().to_vec();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let kout = self.nodes[k].value.shape()[0];
                let need_dx = self.nodes[x].requires_grad;
                let need_dk = self.nodes[k].requires_grad;
                let mut dx = need_dx.then(|| vec![E::ZERO; self.nodes[x].value.numel()]);
                let mut dk = need_dk.then(|| vec![E::ZERO; self.nodes[k].value.numel()]);
                ops::conv2d_backward(
                    self.nodes[x].value.data(),
                    n,
                    c,
                    h,
                    w,
                    self.nodes[k].value.data(),
                    kout,
                    padding,
                    d_out,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(bufs, x, |b| add_into(b, &dx));
                }
                if let Some(dk) = dk {
                    self.accumulate(bufs, k, |b| add_into(b, &dk));
                }
            }
            Op::MaxPool2d { x, argmax, .. } => {
                let x = *x;
                let xs = self.nodes[x].value.shape().to_vec();
                let os = node.value.shape().to_vec();
                let mut dx = vec![E::ZERO; self.nodes[x].value.numel()];
                ops::maxpool2d_backward(argmax, d_out, xs[0], xs[1], xs[2], xs[3], os[2], os[3], &mut dx);
                self.accumulate(bufs, x, |b| add_into(b, &dx));
            }
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.nodes[x].value.shape().to_vec();
                let ws = self.nodes[w].value.shape().to_vec();
                let (n, d, m) = (xs[0], xs[1], ws[1]);
                if self.nodes[x].requires_grad {
                    let wt = super::simd::transpose(self.nodes[w].value.data(), d, m);
                    let mut dx = vec![E::ZERO; n * d];
                    E::gemm_accumulate(d_out, &wt, &mut dx, n, m, d);
                    self.accumulate(bufs, x, |buf| add_into(buf, &dx));
                }
                if self.nodes[w].requires_grad {
                    let xt = super::simd::transpose(self.nodes[x].value.data(), n, d);
                    let mut dw = vec![E::ZERO; d * m];
                    E::gemm_accumulate(&xt, d_out, &mut dw, d, n, m);
                    self.accumulate(bufs, w, |buf| add_into(buf, &dw));
                }
                if self.nodes[b].requires_grad {
                    self.accumulate(bufs, b, |buf| {
                        for row in d_out.chunks_exact(m) {
                            for (bi, &g) in buf.iter_mut().zip(row) {
                                *bi = bi.add(g);
                            }
                        }
                    });
                }
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let as_ = self.nodes[a].value.shape().to_vec();
                let bs = self.nodes[b].value.shape().to_vec();
                let (n, d, m) = (as_[0], as_[1], bs[1]);
                if self.nodes[a].requires_grad {
                    let bt = super::simd::transpose(self.nodes[b].value.data(), d, m);
                    let mut da = vec![E::ZERO; n * d];
                    E::gemm_accumulate(d_out, &bt, &mut da, n, m, d);
                    self.accumulate(bufs, a, |buf| add_into(buf, &da));
                }
                if self.nodes[b].requires_grad {
                    let at = super::simd::transpose(self.nodes[a].value.data(), n, d);
                    let mut db = vec![E::ZERO; d * m];
                    E::gemm_accumulate(&at, d_out, &mut db, d, n, m);
                    self.accumulate(bufs, b, |buf| add_into(buf, &db));
                }
            }
            Op::Relu { x } => {
                let x = *x;
                let out = node.value.data();
                self.accumulate(bufs, x, |buf| {
                    for ((bi, &o), &g) in buf.iter_mut().zip(out).zip(d_out) {
                        if o > E::ZERO {
                            *bi = bi.add(g);
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let out = node.value.data();
                self.accumulate(bufs, x, |buf| {
                    for ((bi, &s), &g) in buf.iter_mut().zip(out).zip(d_out) {
                        *bi = bi.add(g.mul(s).mul(E::ONE.sub(s)));
                    }
                });
            }
            Op::Tanh { x } => {
                let x = *x;
                let out = node.value.data();
                self.accumulate(bufs, x, |buf| {
                    for ((bi, &t), &g) in buf.iter_mut().zip(out).zip(d_out) {
                        *bi = bi.add(g.mul(E::ONE.sub(t.mul(t))));
                    }
                });
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(bufs, a, |buf| add_into(buf, d_out));
                self.accumulate(bufs, b, |buf| add_into(buf, d_out));
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(bufs, a, |buf| add_into(buf, d_out));
                self.accumulate(bufs, b, |buf| {
                    for (bi, &g) in buf.iter_mut().zip(d_out) {
                        *bi = bi.sub(g);
                    }
                });
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av: Vec<E> = self.nodes[a].value.data().to_vec();
                let bv: Vec<E> = self.nodes[b].value.data().to_vec();
                self.accumulate(bufs, a, |buf| {
                    for ((bi, &y), &g) in buf.iter_mut().zip(&bv).zip(d_out) {
                        *bi = bi.add(g.mul(y));
                    }
                });
                self.accumulate(bufs, b, |buf| {
                    for ((bi, &x2), &g) in buf.iter_mut().zip(&av).zip(d_out) {
                        *bi = bi.add(g.mul(x2));
                    }
                });
            }
            Op::Scale { x, factor } => {
                let (x, f) = (*x, E::from_f64(*factor));
                self.accumulate(bufs, x, |buf| {
                    for (bi, &g) in buf.iter_mut().zip(d_out) {
                        *bi = bi.add(g.mul(f));
                    }
                });
            }
            Op::Sum { x } => {
                let x = *x;
                let g = d_out[0];
                self.accumulate(bufs, x, |buf| {
                    for bi in buf.iter_mut() {
                        *bi = bi.add(g);
                    }
                });
            }
            Op::Reshape { x } => {
                let x = *x;
                self.accumulate(bufs, x, |buf| add_into(buf, d_out));
            }
            Op::SelectStep { x, step } => {
                let (x, step) = (*x, *step);
                let xs = self.nodes[x].value.shape().to_vec();
                let (t, d) = (xs[1], xs[2]);
                self.accumulate(bufs, x, |buf| {
                    for (i, row) in d_out.chunks_exact(d).enumerate() {
                        let dst = &mut buf[(i * t + step) * d..][..d];
                        add_into(dst, row);
                    }
                });
            }
            Op::SliceCols { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let d = self.nodes[x].value.shape()[1];
                self.accumulate(bufs, x, |buf| {
                    for (i, row) in d_out.chunks_exact(len).enumerate() {
                        let dst = &mut buf[i * d + start..][..len];
                        add_into(dst, row);
                    }
                });
            }
            Op::Softmax { x } => {
                let x = *x;
                let p = node.value.data();
                let m = node.value.shape()[1];
                self.accumulate(bufs, x, |buf| {
                    for ((brow, prow), grow) in
                        buf.chunks_exact_mut(m).zip(p.chunks_exact(m)).zip(d_out.chunks_exact(m))
                    {
                        let mut dot = E::ZERO;
                        for (&pi, &gi) in prow.iter().zip(grow) {
                            dot = dot.add(pi.mul(gi));
                        }
                        for ((bi, &pi), &gi) in brow.iter_mut().zip(prow).zip(grow) {
                            *bi = bi.add(pi.mul(gi.sub(dot)));
                        }
                    }
                });
            }
            Op::SoftmaxXent { logits, labels, softmax } => {
                let logits = *logits;
                let n = labels.len();
                let scale = d_out[0].div(E::from_f64(n as f64));
                let labels = labels.clone();
                let softmax: Vec<E> = softmax.iter().map(|&v| E::from_f64(v)).collect();
                self.accumulate(bufs, logits, |buf| {
                    for (i, (brow, prow)) in
                        buf.chunks_exact_mut(2).zip(softmax.chunks_exact(2)).enumerate()
                    {
                        for (j, (bi, &pi)) in brow.iter_mut().zip(prow).enumerate() {
                            let onehot = if labels[i] == j { E::ONE } else { E::ZERO };
                            *bi = bi.add(scale.mul(pi.sub(onehot)));
                        }
                    }
                });
            }
        }
    }
}

fn add_into<E: Element>(dst: &mut [E], src: &[E]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = d.add(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor<E: Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let data: Vec<E> = (0..n).map(|_| E::from_f64(rng.gen_range(-1.0..1.0))).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn conv2d_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::filled([1usize, 1, 64, 64], 0.3));
        let k = g.leaf(Tensor::filled([8usize, 1, 3, 3], 0.1));
        let same = g.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(g.value(same).shape(), &[1, 8, 64, 64]);
        let valid = g.conv2d(x, k, Padding::Valid).unwrap();
        assert_eq!(g.value(valid).shape(), &[1, 8, 62, 62]);
    }

    #[test]
    fn conv2d_zero_kernel_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f32>::new();
        let x = g.leaf(rand_tensor(&mut rng, &[2, 3, 8, 8]));
        let k = g.leaf(Tensor::zeros([4usize, 3, 3, 3]));
        let y = g.conv2d(x, k, Padding::Same).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_channel_mismatch_is_shape_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros([1usize, 2, 8, 8]));
        let k = g.leaf(Tensor::zeros([4usize, 3, 3, 3]));
        assert!(matches!(g.conv2d(x, k, Padding::Same), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv2d_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1: Tensor<f32> = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let x2: Tensor<f32> = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let kt: Tensor<f32> = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let (a, b) = (0.7f32, -1.3f32);
        let run = |x: Tensor<f32>| {
            let mut g = Graph::<f32>::new();
            let xi = g.leaf(x);
            let ki = g.leaf(kt.clone());
            let y = g.conv2d(xi, ki, Padding::Same).unwrap();
            g.value(y).data().to_vec()
        };
        let combo = Tensor::new(
            [1usize, 2, 6, 6],
            x1.data().iter().zip(x2.data()).map(|(&u, &v)| a * u + b * v).collect(),
        )
        .unwrap();
        let lhs = run(combo);
        let y1 = run(x1);
        let y2 = run(x2);
        for ((l, u), v) in lhs.iter().zip(&y1).zip(&y2) {
            assert!((l - (a * u + b * v)).abs() < 1e-4);
        }
    }

    #[test]
    fn maxpool_block_maxima_and_shape() {
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([1usize, 1, 4, 4], data).unwrap());
        let y = g.maxpool2d(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);

        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros([1usize, 1, 64, 64]));
        let y = g.maxpool2d(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn maxpool_ties_route_gradient_to_first_in_scan_order() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::filled([1usize, 1, 4, 4], 1.0).with_grad());
        let y = g.maxpool2d(x, 2).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        let mut expect = vec![0.0f32; 16];
        expect[0] = 1.0;
        expect[2] = 1.0;
        expect[8] = 1.0;
        expect[10] = 1.0;
        assert_eq!(grad, &expect[..]);
        // routed gradient mass equals incoming mass
        assert_eq!(grad.iter().sum::<f32>(), 4.0);
    }

    #[test]
    fn maxpool_backward_zero_except_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f32> = rand_tensor(&mut rng, &[2, 3, 6, 6]);
        let mut g = Graph::<f32>::new();
        let x = g.leaf(t.clone().with_grad());
        let y = g.maxpool2d(x, 2).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        let nonzero = grad.iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= g.value(y).numel());
        assert!((grad.iter().sum::<f32>() - g.value(y).numel() as f32).abs() < 1e-5);
    }

    #[test]
    fn dense_identity_zero_and_hand_sum() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([1usize, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let eye = g.leaf(
            Tensor::new([3usize, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let zb = g.leaf(Tensor::zeros([3]));
        let y = g.dense(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        let zw = g.leaf(Tensor::zeros([3usize, 2]));
        let b = g.leaf(Tensor::new([2], vec![0.5, -0.5]).unwrap());
        let y = g.dense(x, zw, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -0.5]);

        let x2 = g.leaf(Tensor::new([1usize, 2], vec![1.0, 2.0]).unwrap());
        let w = g.leaf(Tensor::new([2usize, 1], vec![1.0, 1.0]).unwrap());
        let b1 = g.leaf(Tensor::zeros([1]));
        let y = g.dense(x2, w, b1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);

        let wbad = g.leaf(Tensor::zeros([4usize, 2]));
        let bb = g.leaf(Tensor::zeros([2]));
        assert!(matches!(g.dense(x, wbad, bb), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_xent_symmetry_and_stability() {
        let mut g = Graph::<f32>::new();
        let l = g.leaf(Tensor::new([1usize, 2], vec![0.0, 0.0]).unwrap());
        let loss = g.softmax_xent(l, &[0]).unwrap();
        assert!((g.value(loss).data()[0] - std::f32::consts::LN_2).abs() < 1e-6);

        let l = g.leaf(Tensor::new([1usize, 2], vec![1000.0, -1000.0]).unwrap());
        let loss = g.softmax_xent(l, &[0]).unwrap();
        let v = g.value(loss).data()[0];
        assert!(v.is_finite() && v >= 0.0 && v < 1e-6, "loss {v}");

        let l = g.leaf(Tensor::new([1usize, 2], vec![0.3, -0.2]).unwrap());
        assert!(matches!(g.softmax_xent(l, &[2]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_loss_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let t: Tensor<f32> = rand_tensor(&mut rng, &[5, 2]);
            let mut g = Graph::<f32>::new();
            let l = g.leaf(t);
            let p = g.softmax(l).unwrap();
            for row in g.value(p).data().chunks_exact(2) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
            let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..2usize)).collect();
            let loss = g.softmax_xent(l, &labels).unwrap();
            assert!(g.value(loss).data()[0] >= 0.0);
        }
    }

    #[test]
    fn softmax_xent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Tensor<f32> = rand_tensor(&mut rng, &[4, 2]);
        let labels = vec![0usize, 1, 1, 0];
        let mut g = Graph::<f32>::new();
        let l = g.leaf(logits.clone().with_grad());
        let loss = g.softmax_xent(l, &labels).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(l).unwrap().to_vec();

        let mut eval = |x: &[f32]| {
            let mut g = Graph::<f32>::new();
            let l = g.leaf(Tensor::new([4usize, 2], x.to_vec()).unwrap());
            let loss = g.softmax_xent(l, &labels).unwrap();
            g.value(loss).data()[0]
        };
        let coords: Vec<usize> = (0..8).collect();
        let (worst, checked) =
            gradcheck::max_rel_err_over(&mut eval, logits.data(), &grad, &coords, 1e-3, 1e-5);
        assert!(checked >= 4);
        assert!(worst < 1e-3, "worst rel err {worst}");
    }

    #[test]
    fn backward_sum_gives_ones_and_square_rule() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([2usize, 3], vec![0.1; 6]).unwrap().with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6][..]);

        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap().with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0][..]);
    }

    #[test]
    fn backward_on_non_scalar_is_argument_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros([2, 2]).with_grad());
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([2], vec![1.0, -1.0]).unwrap().with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0][..]);
    }

    #[test]
    fn disconnected_leaf_still_gets_zero_grad() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
        let unused = g.leaf(Tensor::new([3], vec![1.0; 3]).unwrap().with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &[0.0; 3][..]);
    }

    fn gradcheck_op<E: Element>(
        shapes: &[&[usize]],
        build: impl Fn(&mut Graph<E>, &[VarId]) -> VarId + Copy,
        h: f64,
        tol: f64,
        min_grad: f64,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: Vec<Tensor<E>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        for target in 0..tensors.len() {
            let mut g = Graph::<E>::new();
            let ids: Vec<VarId> = tensors
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut t = t.clone();
                    t.set_requires_grad(i == target);
                    g.leaf(t)
                })
                .collect();
            let loss = build(&mut g, &ids);
            g.backward(loss).unwrap();
            let grad = g.grad(ids[target]).unwrap().to_vec();

            let mut eval = |x: &[E]| {
                let mut g = Graph::<E>::new();
                let ids: Vec<VarId> = tensors
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if i == target {
                            g.leaf(Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap())
                        } else {
                            g.leaf(t.clone())
                        }
                    })
                    .collect();
                let loss = build(&mut g, &ids);
                g.value(loss).data()[0]
            };
            let n = tensors[target].numel();
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let coords: Vec<usize> = (0..25.min(n)).map(|_| rng2.gen_range(0..n)).collect();
            let (worst, checked) = gradcheck::max_rel_err_over(
                &mut eval,
                tensors[target].data(),
                &grad,
                &coords,
                h,
                min_grad,
            );
            assert!(checked > 0, "no checkable coordinates for input {target}");
            assert!(worst < tol, "input {target}: worst rel err {worst}");
        }
    }

    // Autodiff vs central differences for every op, at f32 and in the f64
    // verification instantiation.
    #[test]
    fn every_op_matches_finite_differences() {
        macro_rules! both {
            ($shapes:expr, $build:expr) => {
                gradcheck_op::<f32>($shapes, $build, 1e-3, 1e-2, 5e-3, 11);
                gradcheck_op::<f64>($shapes, $build, 1e-6, 1e-5, 1e-8, 13);
            };
        }
        both!(&[&[1, 2, 5, 5], &[3, 2, 3, 3]], |g, ids| {
            let c = g.conv2d(ids[0], ids[1], Padding::Same).unwrap();
            let r = g.relu(c);
            g.sum(r)
        });
        both!(&[&[1, 2, 5, 5], &[3, 2, 3, 3]], |g, ids| {
            let c = g.conv2d(ids[0], ids[1], Padding::Valid).unwrap();
            g.sum(c)
        });
        both!(&[&[1, 1, 6, 6]], |g, ids| {
            let p = g.maxpool2d(ids[0], 2).unwrap();
            g.sum(p)
        });
        both!(&[&[1, 1, 6, 6]], |g, ids| {
            let p = g.maxpool2d(ids[0], 1).unwrap();
            g.sum(p)
        });
        both!(&[&[3, 4], &[4, 2], &[2]], |g, ids| {
            let d = g.dense(ids[0], ids[1], ids[2]).unwrap();
            let t = g.tanh(d);
            g.sum(t)
        });
        both!(&[&[3, 4], &[4, 3]], |g, ids| {
            let m = g.matmul(ids[0], ids[1]).unwrap();
            let s = g.sigmoid(m);
            g.sum(s)
        });
        both!(&[&[2, 6], &[2, 6]], |g, ids| {
            let a = g.add(ids[0], ids[1]).unwrap();
            let m = g.mul(a, ids[1]).unwrap();
            let d = g.sub(m, ids[0]).unwrap();
            let s = g.scale(d, -0.4);
            g.sum(s)
        });
        both!(&[&[2, 3, 4]], |g, ids| {
            let st = g.select_step(ids[0], 1).unwrap();
            let sl = g.slice_cols(st, 1, 2).unwrap();
            let r = g.reshape(sl, [4usize]).unwrap();
            let r2 = g.reshape(r, [2usize, 2]).unwrap();
            g.sum(r2)
        });
        both!(&[&[3, 2]], |g, ids| {
            let p = g.softmax(ids[0]).unwrap();
            let sq = g.mul(p, p).unwrap();
            g.sum(sq)
        });
        both!(&[&[4, 2]], |g, ids| g.softmax_xent(ids[0], &[0, 1, 1, 0]).unwrap());
    }

    #[test]
    fn engine_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Tensor<f32> = rand_tensor(&mut rng, &[2, 3, 16, 16]);
        let k: Tensor<f32> = rand_tensor(&mut rng, &[8, 3, 3, 3]);
        let run = || {
            let mut g = Graph::<f32>::new();
            let xi = g.leaf(x.clone().with_grad());
            let ki = g.leaf(k.clone());
            let c = g.conv2d(xi, ki, Padding::Same).unwrap();
            let r = g.relu(c);
            let p = g.maxpool2d(r, 2).unwrap();
            let s = g.sum(p);
            g.backward(s).unwrap();
            (g.value(s).data()[0].to_bits(), g.grad(xi).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_outputs_on_finite_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Tensor<f32> = rand_tensor(&mut rng, &[1, 2, 8, 8]);
        let k: Tensor<f32> = rand_tensor(&mut rng, &[4, 2, 3, 3]);
        let mut g = Graph::<f32>::new();
        let xi = g.leaf(x.with_grad());
        let ki = g.leaf(k);
        let c = g.conv2d(xi, ki, Padding::Same).unwrap();
        let r = g.relu(c);
        let p = g.maxpool2d(r, 2).unwrap();
        let t = g.tanh(p);
        let sg = g.sigmoid(t);
        let s = g.sum(sg);
        g.backward(s).unwrap();
        assert!(g.value(s).all_finite());
        assert!(g.grad(xi).unwrap().iter().all(|v| v.is_finite()));
    }
}
