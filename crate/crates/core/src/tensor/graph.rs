//! Eager define-by-run graph with reverse-mode differentiation.
//!
//! Values are computed at op-construction time, so intermediate results can
//! be inspected mid-build (the autoregressive decoder reads the previous
//! frame's output while the graph is still growing). `backward` walks nodes
//! in reverse creation order; parents always precede children, so that order
//! is a valid reverse topological sort.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvSpec, LstmCache};
use super::tensor::{Scalar, ShapeError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, spec: ConvSpec },
    MaxPoolF2 { x: Var, mask: Vec<u8>, in_shape: Vec<usize> },
    Linear { x: Var, w: Var, b: Var },
    LstmCell { x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var, cache: LstmCache<T> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    SoftmaxLast { x: Var },
    Film { x: Var, gamma: Var, beta: Var },
    MultistepGather { x: Var, pitches: usize, unit: usize, w_steps: usize },
    ConcatLast { xs: Vec<Var>, widths: Vec<usize> },
    SliceLast { x: Var, start: usize, len: usize },
    Row { x: Var, index: usize },
    StackRows { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Scale { x: Var, k: T },
    ProjSum { x: Var, weights: Vec<T> },
    FocalLoss { p: Var, targets: Vec<usize>, alpha: T, gamma: T },
    MaskedL2 { pred: Var, target: Vec<T>, mask: Vec<bool> },
    StopGrad { x: Var },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires: bool,
    op: Op<T>,
}

/// Computation tape. One graph per forward/backward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    /// Constant / network input (no gradient tracked).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Trainable leaf; receives a gradient after `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after `backward`; `None` for nodes off the loss
    /// path.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, kf: usize, kt: usize) -> Result<Var, ShapeError> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 3 || ws.len() != 4 || kf % 2 == 0 || kt == 0 {
            return Err(ShapeError::Mismatch { context: "conv2d expects [C,T,F] input, [Co,Ci,kF,kT] weight, odd kF, kT >= 1" });
        }
        let spec = ConvSpec { c_in: xs[0], c_out: ws[0], kf, kt, f: xs[2] };
        if ws != [spec.c_out, spec.c_in, kf, kt] || bs != [spec.c_out] {
            return Err(ShapeError::Mismatch { context: "conv2d weight/bias shape" });
        }
        let value = kernels::conv2d_fwd(self.value(x), self.value(w), self.value(b), &spec);
        let requires = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(value, requires, Op::Conv2d { x, w, b, spec }))
    }

    pub fn maxpool_f2(&mut self, x: Var) -> Result<Var, ShapeError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || xs[2] % 2 != 0 {
            return Err(ShapeError::Mismatch { context: "maxpool_f2 expects [C,T,F] with even F" });
        }
        let (value, mask) = kernels::maxpool_f2_fwd(self.value(x));
        let requires = self.requires(x);
        Ok(self.push(value, requires, Op::MaxPoolF2 { x, mask, in_shape: xs }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, ShapeError> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[1] || bs != [ws[0]] {
            return Err(ShapeError::Mismatch { context: "linear expects x[..,N_in], w[N_out,N_in], b[N_out]" });
        }
        let value = kernels::linear_fwd(self.value(x), self.value(w), self.value(b));
        let requires = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(value, requires, Op::Linear { x, w, b }))
    }

    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var, ShapeError> {
        let (xs, hs) = (self.value(x).shape(), self.value(h).shape());
        if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] {
            return Err(ShapeError::Mismatch { context: "lstm_cell expects x[B,I], h/c[B,H]" });
        }
        let hidden = hs[1];
        if self.value(c).shape() != hs
            || self.value(w_ih).shape() != [4 * hidden, xs[1]]
            || self.value(w_hh).shape() != [4 * hidden, hidden]
            || self.value(b).shape() != [4 * hidden]
        {
            return Err(ShapeError::Mismatch { context: "lstm_cell parameter shapes" });
        }
        let (value, cache) = kernels::lstm_cell_fwd(
            self.value(x),
            self.value(h),
            self.value(c),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b),
        );
        let requires = [x, h, c, w_ih, w_hh, b].iter().any(|v| self.requires(*v));
        Ok(self.push(value, requires, Op::LstmCell { x, h, c, w_ih, w_hh, b, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = kernels::relu_fwd(self.value(x));
        let requires = self.requires(x);
        self.push(value, requires, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = kernels::sigmoid_fwd(self.value(x));
        let requires = self.requires(x);
        self.push(value, requires, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = kernels::tanh_fwd(self.value(x));
        let requires = self.requires(x);
        self.push(value, requires, Op::Tanh { x })
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let value = kernels::softmax_last_fwd(self.value(x));
        let requires = self.requires(x);
        self.push(value, requires, Op::SoftmaxLast { x })
    }

    /// `y[c,t,f] = gamma[f,c] * x[c,t,f] + beta[f,c]`
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let value = kernels::film_fwd(self.value(x), self.value(gamma), self.value(beta));
        let requires = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(value, requires, Op::Film { x, gamma, beta })
    }

    /// From `[M, P*unit]` build `[n_out, P, w_steps*unit]` of concatenated
    /// forward-looking steps.
    pub fn multistep_gather(
        &mut self,
        x: Var,
        pitches: usize,
        unit: usize,
        w_steps: usize,
        n_out: usize,
    ) -> Result<Var, ShapeError> {
        let xs = self.value(x).shape();
        if xs.len() != 2 || xs[1] != pitches * unit || n_out + w_steps - 1 > xs[0] {
            return Err(ShapeError::Mismatch { context: "multistep_gather expects [M, P*unit] with M >= n_out+W-1" });
        }
        let value = kernels::multistep_gather_fwd(self.value(x), pitches, unit, w_steps, n_out);
        let requires = self.requires(x);
        Ok(self.push(value, requires, Op::MultistepGather { x, pitches, unit, w_steps }))
    }

    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let lead = self.value(xs[0]).leading();
        let widths: Vec<usize> = xs.iter().map(|v| self.value(*v).last_dim()).collect();
        for v in xs {
            debug_assert_eq!(self.value(*v).leading(), lead);
        }
        let total: usize = widths.iter().sum();
        let mut shape = self.value(xs[0]).shape().to_vec();
        *shape.last_mut().unwrap() = total;
        let mut out = Tensor::zeros(&shape);
        for r in 0..lead {
            let mut off = 0;
            for (v, w) in xs.iter().zip(widths.iter()) {
                let src = &self.value(*v).data()[r * w..][..*w];
                out.data_mut()[r * total + off..][..*w].copy_from_slice(src);
                off += w;
            }
        }
        let requires = xs.iter().any(|v| self.requires(*v));
        self.push(out, requires, Op::ConcatLast { xs: xs.to_vec(), widths })
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let last = t.last_dim();
        debug_assert!(start + len <= last);
        let lead = t.leading();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(&shape);
        for r in 0..lead {
            out.data_mut()[r * len..][..len].copy_from_slice(&t.data()[r * last + start..][..len]);
        }
        let requires = self.requires(x);
        self.push(out, requires, Op::SliceLast { x, start, len })
    }

    /// Select `x[index]` along the first axis.
    pub fn row(&mut self, x: Var, index: usize) -> Var {
        let t = self.value(x);
        let shape = t.shape();
        debug_assert!(index < shape[0]);
        let rest: usize = shape[1..].iter().product();
        let mut out = Tensor::zeros(&shape[1..]);
        out.data_mut().copy_from_slice(&t.data()[index * rest..][..rest]);
        let requires = self.requires(x);
        self.push(out, requires, Op::Row { x, index })
    }

    /// Stack same-shaped tensors along a new leading axis.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let inner = self.value(xs[0]).shape().to_vec();
        let rest: usize = inner.iter().product();
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&inner);
        let mut out = Tensor::zeros(&shape);
        for (k, v) in xs.iter().enumerate() {
            debug_assert_eq!(self.value(*v).shape(), &inner[..]);
            out.data_mut()[k * rest..][..rest].copy_from_slice(self.value(*v).data());
        }
        let requires = xs.iter().any(|v| self.requires(*v));
        self.push(out, requires, Op::StackRows { xs: xs.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let requires = self.requires(a) || self.requires(b);
        self.push(out, requires, Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(k);
        let requires = self.requires(x);
        self.push(out, requires, Op::Scale { x, k })
    }

    /// Scalar projection `Σ x ⊙ weights`; used to reduce arbitrary outputs
    /// to a loss in tests.
    pub fn proj_sum(&mut self, x: Var, weights: &[T]) -> Var {
        debug_assert_eq!(self.value(x).numel(), weights.len());
        let mut acc = T::zero();
        for (v, w) in self.value(x).data().iter().zip(weights.iter()) {
            acc = acc + *v * *w;
        }
        let requires = self.requires(x);
        self.push(Tensor::scalar(acc), requires, Op::ProjSum { x, weights: weights.to_vec() })
    }

    /// Mean focal loss over the rows of a `[.., K]` probability tensor.
    pub fn focal_loss(&mut self, p: Var, targets: &[usize], alpha: T, gamma: T) -> Var {
        debug_assert_eq!(self.value(p).leading(), targets.len());
        let value = kernels::focal_fwd(self.value(p), targets, alpha, gamma);
        let requires = self.requires(p);
        self.push(
            Tensor::scalar(value),
            requires,
            Op::FocalLoss { p, targets: targets.to_vec(), alpha, gamma },
        )
    }

    pub fn masked_l2(&mut self, pred: Var, target: &[T], mask: &[bool]) -> Var {
        let value = kernels::masked_l2_fwd(self.value(pred), target, mask);
        let requires = self.requires(pred);
        self.push(
            Tensor::scalar(value),
            requires,
            Op::MaskedL2 { pred, target: target.to_vec(), mask: mask.to_vec() },
        )
    }

    /// Identity forward; blocks gradient flow upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, false, Op::StopGrad { x })
    }

    /// Reverse pass from a scalar loss. Populates gradients on every
    /// `param` leaf reachable from the loss.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        if !self.nodes[loss.0].requires {
            return;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = node.grad.take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, spec } => {
                    let (dx, dw, db) =
                        kernels::conv2d_bwd(&before[x.0].value, &before[w.0].value, &gout, spec);
                    acc(before, *x, dx);
                    acc(before, *w, dw);
                    acc(before, *b, db);
                }
                Op::MaxPoolF2 { x, mask, in_shape } => {
                    let dx = kernels::maxpool_f2_bwd(&gout, mask, in_shape);
                    acc(before, *x, dx);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_bwd(&before[x.0].value, &before[w.0].value, &gout);
                    acc(before, *x, dx);
                    acc(before, *w, dw);
                    acc(before, *b, db);
                }
                Op::LstmCell { x, h, c, w_ih, w_hh, b, cache } => {
                    let (dx, dh, dc, dwi, dwh, db) = kernels::lstm_cell_bwd(
                        &before[x.0].value,
                        &before[h.0].value,
                        &before[c.0].value,
                        &before[w_ih.0].value,
                        &before[w_hh.0].value,
                        cache,
                        &gout,
                    );
                    acc(before, *x, dx);
                    acc(before, *h, dh);
                    acc(before, *c, dc);
                    acc(before, *w_ih, dwi);
                    acc(before, *w_hh, dwh);
                    acc(before, *b, db);
                }
                Op::Relu { x } => {
                    let dx = kernels::relu_bwd(&node.value, &gout);
                    acc(before, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let dx = kernels::sigmoid_bwd(&node.value, &gout);
                    acc(before, *x, dx);
                }
                Op::Tanh { x } => {
                    let dx = kernels::tanh_bwd(&node.value, &gout);
                    acc(before, *x, dx);
                }
                Op::SoftmaxLast { x } => {
                    let dx = kernels::softmax_last_bwd(&node.value, &gout);
                    acc(before, *x, dx);
                }
                Op::Film { x, gamma, beta } => {
                    let (dx, dg, db) =
                        kernels::film_bwd(&before[x.0].value, &before[gamma.0].value, &gout);
                    acc(before, *x, dx);
                    acc(before, *gamma, dg);
                    acc(before, *beta, db);
                }
                Op::MultistepGather { x, pitches, unit, w_steps } => {
                    let m = before[x.0].value.shape()[0];
                    let dx = kernels::multistep_gather_bwd(&gout, m, *pitches, *unit, *w_steps);
                    acc(before, *x, dx);
                }
                Op::ConcatLast { xs, widths } => {
                    let total: usize = widths.iter().sum();
                    let lead = gout.numel() / total;
                    let mut off = 0;
                    for (v, w) in xs.iter().zip(widths.iter()) {
                        let mut shape = before[v.0].value.shape().to_vec();
                        *shape.last_mut().unwrap() = *w;
                        let mut dx = Tensor::zeros(&shape);
                        for r in 0..lead {
                            dx.data_mut()[r * w..][..*w]
                                .copy_from_slice(&gout.data()[r * total + off..][..*w]);
                        }
                        acc(before, *v, dx);
                        off += w;
                    }
                }
                Op::SliceLast { x, start, len } => {
                    let parent = &before[x.0].value;
                    let last = parent.last_dim();
                    let lead = parent.leading();
                    let mut dx = Tensor::zeros(parent.shape());
                    for r in 0..lead {
                        dx.data_mut()[r * last + start..][..*len]
                            .copy_from_slice(&gout.data()[r * len..][..*len]);
                    }
                    acc(before, *x, dx);
                }
                Op::Row { x, index } => {
                    let parent = &before[x.0].value;
                    let rest: usize = parent.shape()[1..].iter().product();
                    let mut dx = Tensor::zeros(parent.shape());
                    dx.data_mut()[index * rest..][..rest].copy_from_slice(gout.data());
                    acc(before, *x, dx);
                }
                Op::StackRows { xs } => {
                    let rest = gout.numel() / xs.len();
                    for (k, v) in xs.iter().enumerate() {
                        let mut dx = Tensor::zeros(before[v.0].value.shape());
                        dx.data_mut().copy_from_slice(&gout.data()[k * rest..][..rest]);
                        acc(before, *v, dx);
                    }
                }
                Op::Add { a, b } => {
                    acc(before, *a, gout.clone());
                    acc(before, *b, gout);
                }
                Op::Scale { x, k } => {
                    let mut dx = gout;
                    dx.scale_assign(*k);
                    acc(before, *x, dx);
                }
                Op::ProjSum { x, weights } => {
                    let s = gout.item();
                    let mut dx = Tensor::zeros(before[x.0].value.shape());
                    for (d, w) in dx.data_mut().iter_mut().zip(weights.iter()) {
                        *d = s * *w;
                    }
                    acc(before, *x, dx);
                }
                Op::FocalLoss { p, targets, alpha, gamma } => {
                    let dp = kernels::focal_bwd(&before[p.0].value, targets, *alpha, *gamma, gout.item());
                    acc(before, *p, dp);
                }
                Op::MaskedL2 { pred, target, mask } => {
                    let dp = kernels::masked_l2_bwd(&before[pred.0].value, target, mask, gout.item());
                    acc(before, *pred, dp);
                }
                Op::StopGrad { .. } => {}
            }
        }
    }
}

fn acc<T: Scalar>(nodes: &mut [Node<T>], v: Var, g: Tensor<T>) {
    let node = &mut nodes[v.0];
    if !node.requires {
        return;
    }
    match &mut node.grad {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
