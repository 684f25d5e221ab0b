//! Tape of executed operations and the reverse sweep over it.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order and backward simply walks it in reverse.

use super::scalar::{gemm, MatMut, MatRef};
use super::{AutodiffError, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm running statistics, updated in place by training-mode calls.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode tape. Build a forward pass with the op methods, then call
/// [`Graph::backward`] once on a scalar loss.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::Shape(msg)
}

/// Output positions `lo..hi` of tap `k` that read inside the unpadded input.
fn tap_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // Need 0 <= l*stride + k - pad <= len - 1.
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = len as isize - 1 + pad as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Add an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Move the gradient out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Drop accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// 1D cross-correlation with zero padding on channels-last tensors:
    /// input `B×L×Cin`, weight `Cout×Cin×K`, output `B×Lout×Cout`.
    ///
    /// Each (tap, output position) pair that reads real input is one GEMM over
    /// the batch, so padded positions cost nothing.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] {
            return Err(shape_err(format!("conv1d input {xs:?} vs weight {ws:?}")));
        }
        let (batch, len, cin) = (xs[0], xs[1], xs[2]);
        let (cout, kernel) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err(format!(
                    "conv1d bias {:?} for {cout} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let out_len = conv_out_len(len, kernel, stride, pad)
            .ok_or_else(|| shape_err(format!("conv1d length {len} with kernel {kernel}, pad {pad}, stride {stride}")))?;
        let mut out = match b {
            Some(b) => self.value(b).data().repeat(batch * out_len),
            None => vec![T::zero(); batch * out_len * cout],
        };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for k in 0..kernel {
            let (lo, hi) = tap_range(len, out_len, k, stride, pad);
            let wk_t = MatRef {
                data: wv,
                offset: k,
                rows: cin,
                cols: cout,
                rs: kernel,
                cs: cin * kernel,
            };
            for j in lo..hi {
                let src = j * stride + k - pad;
                let xj = rows_view(xv, batch, src, len, cin);
                let oj = MatMut {
                    data: &mut out,
                    offset: j * cout,
                    rows: batch,
                    cols: cout,
                    rs: out_len * cout,
                    cs: 1,
                };
                gemm(T::one(), xj, wk_t, T::one(), oj);
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(
            Tensor::new(vec![batch, out_len, cout], out)?,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Batch normalization per channel of a channels-last `B×L×C` tensor,
    /// pooling statistics over batch and length.
    ///
    /// Training mode normalizes with the batch's population variance and moves
    /// `running` by `running ← (1 − momentum)·running + momentum·batch`.
    /// Evaluation mode applies `running` as a fixed affine map.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &mut RunningStats<T>,
        momentum: T,
        eps: T,
    ) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(shape_err(format!("batchnorm1d expects B×L×C, got {xs:?}")));
        }
        let ch = xs[2];
        if self.value(gamma).shape() != [ch] || self.value(beta).shape() != [ch] {
            return Err(shape_err(format!("batchnorm1d affine parameters for {ch} channels")));
        }
        if running.mean.len() != ch || running.var.len() != ch {
            return Err(shape_err(format!("batchnorm1d running stats for {ch} channels")));
        }
        let count = xs[0] * xs[1];
        if mode == BnMode::Train && count < 2 {
            return Err(AutodiffError::BatchTooSmall(count));
        }
        let xv = self.value(x).data();
        let (mean, inv_std) = match mode {
            BnMode::Train => {
                let nf = T::of(count as f64);
                let mut mean = vec![T::zero(); ch];
                for row in xv.chunks_exact(ch) {
                    for (m, &e) in mean.iter_mut().zip(row) {
                        *m += e;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / nf);
                let mut var = vec![T::zero(); ch];
                for row in xv.chunks_exact(ch) {
                    for ((v, &m), &e) in var.iter_mut().zip(&mean).zip(row) {
                        *v += (e - m) * (e - m);
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / nf);
                let keep = T::one() - momentum;
                for c in 0..ch {
                    running.mean[c] = keep * running.mean[c] + momentum * mean[c];
                    running.var[c] = keep * running.var[c] + momentum * var[c];
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            BnMode::Eval => (
                running.mean.clone(),
                running.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect::<Vec<_>>(),
            ),
        };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for ((h_row, o_row), row) in xhat.chunks_exact_mut(ch).zip(out.chunks_exact_mut(ch)).zip(xv.chunks_exact(ch)) {
            for (((((h, y), &e), &m), &s), (&gc, &bc)) in h_row
                .iter_mut()
                .zip(o_row)
                .zip(row)
                .zip(&mean)
                .zip(&inv_std)
                .zip(g.iter().zip(bt))
            {
                *h = (e - m) * s;
                *y = gc * *h + bc;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == BnMode::Train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&e| if e > T::zero() { e } else { T::zero() }).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Elementwise sum; the residual connection.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check_same(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check_same(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * c).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean over the length axis, `B×L×C → B×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || xs[1] == 0 {
            return Err(shape_err(format!("global_avg_pool expects B×L×C, got {xs:?}")));
        }
        let (len, ch) = (xs[1], xs[2]);
        let inv = T::one() / T::of(len as f64);
        let mut data = vec![T::zero(); xs[0] * ch];
        for (dst, item) in data.chunks_exact_mut(ch).zip(self.value(x).data().chunks_exact(len * ch)) {
            for row in item.chunks_exact(ch) {
                for (d, &e) in dst.iter_mut().zip(row) {
                    *d += e;
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![xs[0], ch], data)?, Op::GlobalAvgPool(x), rg))
    }

    /// `x·wᵀ + b` with `x B×F`, `w O×F`, `b O`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.value(b).shape() != [ws[0]] {
            return Err(shape_err(format!(
                "linear input {xs:?}, weight {ws:?}, bias {:?}",
                self.value(b).shape()
            )));
        }
        let (batch, feat, outs) = (xs[0], xs[1], ws[0]);
        let bv = self.value(b).data();
        let mut out: Vec<T> = (0..batch).flat_map(|_| bv.iter().copied()).collect();
        gemm(
            T::one(),
            MatRef::dense(self.value(x).data(), batch, feat),
            MatRef::dense(self.value(w).data(), outs, feat).t(),
            T::one(),
            MatMut::dense(&mut out, batch, outs),
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![batch, outs], out)?, Op::Linear { x, w, b }, rg))
    }

    /// Mean softmax cross-entropy over the batch, max-subtracted for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(shape_err(format!(
                "softmax_cross_entropy logits {ls:?} with {} labels",
                labels.len()
            )));
        }
        let (batch, classes) = (ls[0], ls[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::LabelOutOfRange { label: bad, classes });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); z.len()];
        let mut loss = T::zero();
        for (bi, &label) in labels.iter().enumerate() {
            let row = &z[bi * classes..(bi + 1) * classes];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (p, &v) in probs[bi * classes..].iter_mut().zip(row) {
                *p = (v - m).exp();
                s += *p;
            }
            for p in &mut probs[bi * classes..(bi + 1) * classes] {
                *p = *p / s;
            }
            loss += m + s.ln() - row[label];
        }
        loss = loss / T::of(batch as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Accumulate `d loss / d v` into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(AutodiffError::NotScalar(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(AutodiffError::Detached);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(&g) {
                        *e += *v;
                    }
                }
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Add a freshly computed gradient for `v`, moving it in when `v` has none yet.
    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(&d) {
                    *e += *x;
                }
            }
            slot => *slot = Some(d),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data();
                    let d = g.iter().zip(xv).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }).collect();
                    self.add_into(grads, *x, d);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.add_into(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    self.add_into(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, |d| {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |d| {
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let (len, ch) = (self.value(*x).shape()[1], self.value(*x).shape()[2]);
                    let inv = T::one() / T::of(len as f64);
                    let mut d = Vec::with_capacity(g.len() * len);
                    for row in g.chunks_exact(ch) {
                        for _ in 0..len {
                            d.extend(row.iter().map(|&gv| gv * inv));
                        }
                    }
                    self.add_into(grads, *x, d);
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, feat) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let outs = self.value(*w).shape()[0];
                let gm = MatRef::dense(g, batch, outs);
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |d| {
                    gemm(T::one(), gm, MatRef::dense(wv, outs, feat), T::one(), MatMut::dense(d, batch, feat));
                });
                self.accumulate(grads, *w, |d| {
                    gemm(T::one(), gm.t(), MatRef::dense(xv, batch, feat), T::one(), MatMut::dense(d, outs, feat));
                });
                self.accumulate(grads, *b, |d| {
                    for row in g.chunks_exact(outs) {
                        for (d, &gv) in d.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let classes = self.value(*logits).shape()[1];
                let scale = g[0] / T::of(labels.len() as f64);
                self.accumulate(grads, *logits, |d| {
                    for (bi, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { T::one() } else { T::zero() };
                            d[bi * classes + c] += (probs[bi * classes + c] - onehot) * scale;
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let ch = inv_std.len();
                let gv = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); ch];
                let mut sum_gx = vec![T::zero(); ch];
                for (g_row, h_row) in g.chunks_exact(ch).zip(xhat.chunks_exact(ch)) {
                    for (((sg, sgx), &gi), &h) in sum_g.iter_mut().zip(&mut sum_gx).zip(g_row).zip(h_row) {
                        *sg += gi;
                        *sgx += gi * h;
                    }
                }
                if self.wants(*x) {
                    let nf = T::of((g.len() / ch) as f64);
                    let k: Vec<T> = gv.iter().zip(inv_std.iter()).map(|(&a, &b)| a * b).collect();
                    let mut d = vec![T::zero(); g.len()];
                    if *train {
                        let mg: Vec<T> = sum_g.iter().map(|&v| v / nf).collect();
                        let mgx: Vec<T> = sum_gx.iter().map(|&v| v / nf).collect();
                        for ((d_row, g_row), h_row) in d.chunks_exact_mut(ch).zip(g.chunks_exact(ch)).zip(xhat.chunks_exact(ch)) {
                            for (((((d, &gi), &h), &k), &mg), &mgx) in
                                d_row.iter_mut().zip(g_row).zip(h_row).zip(&k).zip(&mg).zip(&mgx)
                            {
                                *d = k * (gi - mg - h * mgx);
                            }
                        }
                    } else {
                        for (d_row, g_row) in d.chunks_exact_mut(ch).zip(g.chunks_exact(ch)) {
                            for ((d, &gi), &k) in d_row.iter_mut().zip(g_row).zip(&k) {
                                *d = k * gi;
                            }
                        }
                    }
                    self.add_into(grads, *x, d);
                }
                self.add_into(grads, *beta, sum_g);
                self.add_into(grads, *gamma, sum_gx);
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (batch, len, cin) = (xs[0], xs[1], xs[2]);
                let (cout, kernel) = (ws[0], ws[2]);
                let out_len = self.nodes[i].value.shape()[1];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); cout];
                        for row in g.chunks_exact(cout) {
                            for (d, &gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                        self.add_into(grads, *b, db);
                    }
                }
                let mut dx = self.wants(*x).then(|| vec![T::zero(); xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); wv.len()]);
                for k in 0..kernel {
                    let (lo, hi) = tap_range(len, out_len, k, *stride, *pad);
                    for j in lo..hi {
                        let src = j * stride + k - pad;
                        let gj = rows_view(g, batch, j, out_len, cout);
                        if let Some(dw) = dw.as_mut() {
                            let dwk = MatMut {
                                data: dw,
                                offset: k,
                                rows: cout,
                                cols: cin,
                                rs: cin * kernel,
                                cs: kernel,
                            };
                            gemm(T::one(), gj.t(), rows_view(xv, batch, src, len, cin), T::one(), dwk);
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wk = MatRef {
                                data: wv,
                                offset: k,
                                rows: cout,
                                cols: cin,
                                rs: cin * kernel,
                                cs: kernel,
                            };
                            let dxj = MatMut {
                                data: dx,
                                offset: src * cin,
                                rows: batch,
                                cols: cin,
                                rs: len * cin,
                                cs: 1,
                            };
                            gemm(T::one(), gj, wk, T::one(), dxj);
                        }
                    }
                }
                if let Some(dx) = dx {
                    self.add_into(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.add_into(grads, *w, dw);
                }
            }
        }
    }
}

/// Rows `(b, pos)` for every batch item `b` of a `B×len×C` tensor, as a `B×C` view.
fn rows_view<T>(data: &[T], batch: usize, pos: usize, len: usize, ch: usize) -> MatRef<'_, T> {
    MatRef {
        data,
        offset: pos * ch,
        rows: batch,
        cols: ch,
        rs: len * ch,
        cs: 1,
    }
}
