//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Ops are coarse (a whole LSTM layer is one node) so the tape stays short
//! and the heavy lifting happens in a handful of GEMM calls.

use std::collections::HashMap;

use crate::{matmul, ParamId, ParamStore, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Record what backward needs.
    Train,
    /// Forward only; no gradients, no saved buffers.
    Eval,
}

enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var>, kernel: usize, dilation: usize, cols: Vec<T> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool, gates: Vec<T>, cells: Vec<T> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, T),
    L2Normalize { x: Var, norms: Vec<T> },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Upsample { x: Var, factor: usize },
    CodeDownsample { x: Var, factor: usize },
    Mse { a: Var, b: Var },
    L1 { a: Var, b: Var },
    MaskedMse { a: Var, b: Var, mask: Vec<T> },
    BceLogits { z: Var, target: Vec<T>, mask: Vec<T> },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Graph<T: Real> {
    mode: Mode,
    nodes: Vec<Node<T>>,
    params: HashMap<(u64, usize), Var>,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self { mode, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn mode(&self) -> Mode {
        self.mode
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

    pub fn into_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = self.training() && parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient in train mode.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let needs_grad = self.training();
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.id(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let entry = store.entry(id);
        let needs_grad = self.training() && entry.trainable;
        self.nodes.push(Node { value: entry.value.clone(), op: Op::Leaf, needs_grad });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    /// `x · W (+ b)` over the last axis; `W` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.last_dim(), din, "linear: input width {} != weight rows {din}", xv.last_dim());
        let rows = xv.rows();
        let mut out = vec![T::zero(); rows * dout];
        matmul(xv.data(), false, wv.data(), false, &mut out, rows, din, dout, false);
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b).data());
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(Tensor::from_vec(&shape, out), Op::Linear { x, w, b }, &parents)
    }

    /// Temporal convolution with "same" zero padding on `[B, T, Cin]`.
    /// `W` is `[kernel * Cin, Cout]` with row index `k * Cin + c`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize, dilation: usize) -> Var {
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let (bsz, t, cin) = self.value(x).dims3();
        let wv = self.value(w);
        assert_eq!(wv.shape()[0], kernel * cin, "conv1d: weight rows do not match kernel*Cin");
        let cout = wv.shape()[1];
        let cols = im2col(self.value(x).data(), bsz, t, cin, kernel, dilation);
        let mut out = vec![T::zero(); bsz * t * cout];
        matmul(&cols, false, self.value(w).data(), false, &mut out, bsz * t, kernel * cin, cout, false);
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b).data());
        }
        let cols = if self.training() { cols } else { Vec::new() };
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::from_vec(&[bsz, t, cout], out),
            Op::Conv1d { x, w, b, kernel, dilation, cols },
            &parents,
        )
    }

    /// Single-direction LSTM layer over `[B, T, Cin]`, gate order i, f, g, o.
    /// `w_ih` is `[Cin, 4H]`, `w_hh` is `[H, 4H]`, `b` is `[4H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, reverse: bool) -> Var {
        let (bsz, t, cin) = self.value(x).dims3();
        let h4 = self.value(w_ih).shape()[1];
        let h = h4 / 4;
        assert_eq!(self.value(w_ih).shape()[0], cin, "lstm: w_ih rows != input width");
        assert_eq!(self.value(w_hh).shape(), &[h, h4], "lstm: w_hh shape");

        let mut xp = vec![T::zero(); bsz * t * h4];
        matmul(self.value(x).data(), false, self.value(w_ih).data(), false, &mut xp, bsz * t, cin, h4, false);
        add_row_bias(&mut xp, self.value(b).data());

        let whh = self.value(w_hh).data();
        let mut hs = vec![T::zero(); bsz * t * h];
        let mut cs = vec![T::zero(); bsz * t * h];
        let mut gates = vec![T::zero(); bsz * t * h4];
        let mut h_prev = vec![T::zero(); bsz * h];
        let mut c_prev = vec![T::zero(); bsz * h];
        let mut a = vec![T::zero(); bsz * h4];
        for step in 0..t {
            let ti = if reverse { t - 1 - step } else { step };
            for bi in 0..bsz {
                let src = (bi * t + ti) * h4;
                a[bi * h4..(bi + 1) * h4].copy_from_slice(&xp[src..src + h4]);
            }
            if step > 0 {
                matmul(&h_prev, false, whh, false, &mut a, bsz, h, h4, true);
            }
            for bi in 0..bsz {
                let ar = &a[bi * h4..(bi + 1) * h4];
                let base = (bi * t + ti) * h;
                let gbase = (bi * t + ti) * h4;
                for j in 0..h {
                    let ig = sigmoid(ar[j]);
                    let fg = sigmoid(ar[h + j]);
                    let gg = ar[2 * h + j].tanh();
                    let og = sigmoid(ar[3 * h + j]);
                    let c = fg * c_prev[bi * h + j] + ig * gg;
                    let hv = og * c.tanh();
                    cs[base + j] = c;
                    hs[base + j] = hv;
                    c_prev[bi * h + j] = c;
                    h_prev[bi * h + j] = hv;
                    gates[gbase + j] = ig;
                    gates[gbase + h + j] = fg;
                    gates[gbase + 2 * h + j] = gg;
                    gates[gbase + 3 * h + j] = og;
                }
            }
        }
        let (gates, cells) = if self.training() { (gates, cs) } else { (Vec::new(), Vec::new()) };
        self.push(
            Tensor::from_vec(&[bsz, t, h], hs),
            Op::Lstm { x, w_ih, w_hh, b, reverse, gates, cells },
            &[x, w_ih, w_hh, b],
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.tanh());
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    /// Scales every row (last axis) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = xv.last_dim();
        let eps = T::lit(1e-12);
        let norms: Vec<T> = xv.data().chunks(k).map(|r| (r.iter().map(|&a| a * a).sum::<T>() + eps).sqrt()).collect();
        let data = xv.data().chunks(k).zip(&norms).flat_map(|(r, &n)| r.iter().map(move |&a| a / n)).collect();
        let v = Tensor::from_vec(xv.shape(), data);
        self.push(v, Op::L2Normalize { x, norms }, &[x])
    }

    /// Standardizes every row (last axis) to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = xv.last_dim();
        let kt = T::lit(k as f64);
        let eps = T::lit(1e-5);
        let mut data = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in xv.data().chunks(k) {
            let mean = r.iter().copied().sum::<T>() / kt;
            let var = r.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / kt;
            let is = T::one() / (var + eps).sqrt();
            data.extend(r.iter().map(|&a| (a - mean) * is));
            inv_std.push(is);
        }
        let v = Tensor::from_vec(xv.shape(), data);
        self.push(v, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Concatenation along the last axis; leading dims must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let lead = &self.value(xs[0]).shape()[..self.value(xs[0]).shape().len() - 1];
        let rows = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.value(v).shape();
                assert_eq!(&s[..s.len() - 1], lead, "concat: leading dims differ");
                self.value(v).last_dim()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let src = self.value(v).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push(Tensor::from_vec(&shape, out), Op::Concat(xs.to_vec()), xs)
    }

    /// `x[..., start..start + len]`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let w = xv.last_dim();
        assert!(start + len <= w, "slice_last out of range");
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::from_vec(&shape, out), Op::Slice { x, start }, &[x])
    }

    /// Repeats every time step `factor` times: `[B, N, C] -> [B, N*factor, C]`.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let (b, n, c) = self.value(x).dims3();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * n * factor * c);
        for bi in 0..b {
            for ni in 0..n {
                let row = &src[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                for _ in 0..factor {
                    out.extend_from_slice(row);
                }
            }
        }
        self.push(Tensor::from_vec(&[b, n * factor, c], out), Op::Upsample { x, factor }, &[x])
    }

    /// Bidirectional bottleneck sampling on `[B, T, 2H]` (forward half first):
    /// code `n` takes the forward state at the last frame of its block and the
    /// backward state at the first frame.
    pub fn code_downsample(&mut self, x: Var, factor: usize) -> Var {
        let (b, t, c2) = self.value(x).dims3();
        assert!(t % factor == 0, "code_downsample: {t} frames not divisible by {factor}");
        assert!(c2 % 2 == 0, "code_downsample needs an even channel count");
        let h = c2 / 2;
        let n = t / factor;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * n * c2];
        for bi in 0..b {
            for ni in 0..n {
                let fwd = (bi * t + ni * factor + factor - 1) * c2;
                let bwd = (bi * t + ni * factor) * c2;
                let dst = (bi * n + ni) * c2;
                out[dst..dst + h].copy_from_slice(&src[fwd..fwd + h]);
                out[dst + h..dst + c2].copy_from_slice(&src[bwd + h..bwd + c2]);
            }
        }
        self.push(Tensor::from_vec(&[b, n, c2], out), Op::CodeDownsample { x, factor }, &[x])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mse: shape mismatch");
        let n = T::lit(av.numel().max(1) as f64);
        let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse { a, b }, &[a, b])
    }

    /// Mean absolute error over all elements.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "l1: shape mismatch");
        let n = T::lit(av.numel().max(1) as f64);
        let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y).abs()).sum();
        self.push(Tensor::scalar(s / n), Op::L1 { a, b }, &[a, b])
    }

    /// Squared error averaged over elements with nonzero `mask` weight.
    pub fn masked_mse(&mut self, a: Var, b: Var, mask: Vec<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "masked_mse: shape mismatch");
        assert_eq!(mask.len(), av.numel(), "masked_mse: mask length");
        let denom: T = mask.iter().copied().sum();
        let s: T = av
            .data()
            .iter()
            .zip(bv.data())
            .zip(&mask)
            .map(|((&x, &y), &m)| m * (x - y) * (x - y))
            .sum();
        let v = if denom > T::zero() { s / denom } else { T::zero() };
        self.push(Tensor::scalar(v), Op::MaskedMse { a, b, mask }, &[a, b])
    }

    /// Binary cross-entropy on logits, averaged with `mask` weights.
    pub fn bce_with_logits(&mut self, z: Var, target: Vec<T>, mask: Vec<T>) -> Var {
        let zv = self.value(z);
        assert_eq!(target.len(), zv.numel(), "bce: target length");
        assert_eq!(mask.len(), zv.numel(), "bce: mask length");
        let denom: T = mask.iter().copied().sum();
        let s: T = zv
            .data()
            .iter()
            .zip(&target)
            .zip(&mask)
            .map(|((&x, &y), &m)| m * (x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln()))
            .sum();
        let v = if denom > T::zero() { s / denom } else { T::zero() };
        self.push(Tensor::scalar(v), Op::BceLogits { z, target, mask }, &[z])
    }

    /// Mean categorical cross-entropy of `logits` (`[..., K]`) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        let k = lv.last_dim();
        let rows = lv.rows();
        assert_eq!(targets.len(), rows, "softmax_cross_entropy: one target per row");
        let probs = softmax_rows(lv.data(), k);
        let mut s = T::zero();
        for (r, &tgt) in targets.iter().enumerate() {
            assert!(tgt < k, "target class {tgt} out of range {k}");
            s -= probs[r * k + tgt].max(T::min_positive_value()).ln();
        }
        let v = s / T::lit(rows.max(1) as f64);
        let probs = if self.training() { probs } else { Vec::new() };
        self.push(Tensor::scalar(v), Op::SoftmaxXent { logits, targets, probs }, &[logits])
    }

    /// Reverse-mode pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.mode, Mode::Train, "backward on an eval-mode graph");
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    /// Gradients of every parameter of `store` that took part in this graph,
    /// ordered by parameter id.
    pub fn param_grads(&self, grads: &Grads<T>, store: &ParamStore<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = store
            .ids()
            .filter_map(|id| {
                let v = self.params.get(&(store.id(), id.index()))?;
                grads.get(*v).map(|g| (id, g.clone()))
            })
            .collect();
        out.sort_by_key(|(id, _)| id.index());
        out
    }

    fn backprop(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); rows * din];
                    matmul(gy.data(), false, wv.data(), true, &mut dx, rows, dout, din, false);
                    accumulate(grads, *x, xv.shape(), dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); din * dout];
                    matmul(xv.data(), true, gy.data(), false, &mut dw, din, rows, dout, false);
                    accumulate(grads, *w, wv.shape(), dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        accumulate(grads, *b, &[dout], column_sums(gy.data(), dout));
                    }
                }
            }
            Op::Conv1d { x, w, b, kernel, dilation, cols } => {
                let (bsz, t, cin) = self.value(*x).dims3();
                let wv = self.value(*w);
                let cout = wv.shape()[1];
                let kc = kernel * cin;
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); kc * cout];
                    matmul(cols, true, gy.data(), false, &mut dw, kc, bsz * t, cout, false);
                    accumulate(grads, *w, wv.shape(), dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        accumulate(grads, *b, &[cout], column_sums(gy.data(), cout));
                    }
                }
                if self.needs(*x) {
                    let mut dcols = vec![T::zero(); bsz * t * kc];
                    matmul(gy.data(), false, wv.data(), true, &mut dcols, bsz * t, cout, kc, false);
                    let dx = col2im(&dcols, bsz, t, cin, *kernel, *dilation);
                    accumulate(grads, *x, &[bsz, t, cin], dx);
                }
            }
            Op::Lstm { x, w_ih, w_hh, b, reverse, gates, cells } => {
                self.lstm_backward(gy, y, *x, *w_ih, *w_hh, *b, *reverse, gates, cells, grads);
            }
            Op::Relu(x) => {
                let d = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, y.shape(), d);
            }
            Op::Tanh(x) => {
                let d = gy.data().iter().zip(y.data()).map(|(&g, &o)| g * (T::one() - o * o)).collect();
                accumulate(grads, *x, y.shape(), d);
            }
            Op::Sigmoid(x) => {
                let d = gy.data().iter().zip(y.data()).map(|(&g, &o)| g * o * (T::one() - o)).collect();
                accumulate(grads, *x, y.shape(), d);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, y.shape(), gy.data().to_vec());
                    }
                }
            }
            Op::Scale(x, s) => {
                let d = gy.data().iter().map(|&g| g * *s).collect();
                accumulate(grads, *x, y.shape(), d);
            }
            Op::L2Normalize { x, norms } => {
                let k = y.last_dim();
                let mut d = Vec::with_capacity(y.numel());
                for ((gr, yr), &n) in gy.data().chunks(k).zip(y.data().chunks(k)).zip(norms) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    d.extend(gr.iter().zip(yr).map(|(&a, &b)| (a - b * dot) / n));
                }
                accumulate(grads, *x, y.shape(), d);
            }
            Op::LayerNorm { x, inv_std } => {
                let k = y.last_dim();
                let kt = T::lit(k as f64);
                let mut d = Vec::with_capacity(y.numel());
                for ((gr, yr), &is) in gy.data().chunks(k).zip(y.data().chunks(k)).zip(inv_std) {
                    let mg = gr.iter().copied().sum::<T>() / kt;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / kt;
                    d.extend(gr.iter().zip(yr).map(|(&a, &b)| is * (a - mg - b * mgy)));
                }
                accumulate(grads, *x, y.shape(), d);
            }
            Op::Concat(xs) => {
                let total = y.last_dim();
                let rows = y.rows();
                let mut off = 0;
                for &v in xs {
                    let w = self.value(v).last_dim();
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gy.data()[r * total + off..r * total + off + w]);
                        }
                        accumulate(grads, v, self.value(v).shape(), d);
                    }
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let (w, len) = (xv.last_dim(), y.last_dim());
                let mut d = vec![T::zero(); xv.numel()];
                for r in 0..y.rows() {
                    d[r * w + start..r * w + start + len].copy_from_slice(&gy.data()[r * len..(r + 1) * len]);
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::Upsample { x, factor } => {
                let (b, n, c) = self.value(*x).dims3();
                let mut d = vec![T::zero(); b * n * c];
                for bi in 0..b {
                    for ni in 0..n {
                        let dst = &mut d[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                        for r in 0..*factor {
                            let src = ((bi * n + ni) * factor + r) * c;
                            for (o, &g) in dst.iter_mut().zip(&gy.data()[src..src + c]) {
                                *o += g;
                            }
                        }
                    }
                }
                accumulate(grads, *x, &[b, n, c], d);
            }
            Op::CodeDownsample { x, factor } => {
                let (b, t, c2) = self.value(*x).dims3();
                let h = c2 / 2;
                let n = t / factor;
                let mut d = vec![T::zero(); b * t * c2];
                for bi in 0..b {
                    for ni in 0..n {
                        let src = (bi * n + ni) * c2;
                        let fwd = (bi * t + ni * factor + factor - 1) * c2;
                        let bwd = (bi * t + ni * factor) * c2;
                        for j in 0..h {
                            d[fwd + j] += gy.data()[src + j];
                            d[bwd + h + j] += gy.data()[src + h + j];
                        }
                    }
                }
                accumulate(grads, *x, &[b, t, c2], d);
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = gy.item() * T::lit(2.0) / T::lit(av.numel().max(1) as f64);
                let d: Vec<T> = av.data().iter().zip(bv.data()).map(|(&p, &q)| k * (p - q)).collect();
                self.split_pair(grads, *a, *b, av.shape(), d);
            }
            Op::L1 { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = gy.item() / T::lit(av.numel().max(1) as f64);
                let d: Vec<T> = av.data().iter().zip(bv.data()).map(|(&p, &q)| k * sign(p - q)).collect();
                self.split_pair(grads, *a, *b, av.shape(), d);
            }
            Op::MaskedMse { a, b, mask } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let denom: T = mask.iter().copied().sum();
                if denom > T::zero() {
                    let k = gy.item() * T::lit(2.0) / denom;
                    let d: Vec<T> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .zip(mask)
                        .map(|((&p, &q), &m)| k * m * (p - q))
                        .collect();
                    self.split_pair(grads, *a, *b, av.shape(), d);
                }
            }
            Op::BceLogits { z, target, mask } => {
                let zv = self.value(*z);
                let denom: T = mask.iter().copied().sum();
                if denom > T::zero() {
                    let k = gy.item() / denom;
                    let d = zv
                        .data()
                        .iter()
                        .zip(target)
                        .zip(mask)
                        .map(|((&x, &t), &m)| k * m * (sigmoid(x) - t))
                        .collect();
                    accumulate(grads, *z, zv.shape(), d);
                }
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let lv = self.value(*logits);
                let kdim = lv.last_dim();
                let scale = gy.item() / T::lit(targets.len().max(1) as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &tgt) in targets.iter().enumerate() {
                    d[r * kdim + tgt] -= scale;
                }
                accumulate(grads, *logits, lv.shape(), d);
            }
        }
    }

    fn split_pair(&self, grads: &mut [Option<Tensor<T>>], a: Var, b: Var, shape: &[usize], d: Vec<T>) {
        if self.needs(b) {
            let neg = d.iter().map(|&v| -v).collect();
            accumulate(grads, b, shape, neg);
        }
        if self.needs(a) {
            accumulate(grads, a, shape, d);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        gy: &Tensor<T>,
        hs: &Tensor<T>,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        reverse: bool,
        gates: &[T],
        cells: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (bsz, t, cin) = self.value(x).dims3();
        let whh = self.value(w_hh).data();
        let h4 = self.value(w_ih).shape()[1];
        let h = h4 / 4;
        let one = T::one();

        let mut da_all = vec![T::zero(); bsz * t * h4];
        let mut dwhh = vec![T::zero(); h * h4];
        let mut dh_next = vec![T::zero(); bsz * h];
        let mut dc_next = vec![T::zero(); bsz * h];
        let mut da = vec![T::zero(); bsz * h4];
        let mut h_prev = vec![T::zero(); bsz * h];

        for step in (0..t).rev() {
            let ti = if reverse { t - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else if reverse {
                Some(ti + 1)
            } else {
                Some(ti - 1)
            };
            for bi in 0..bsz {
                let base = (bi * t + ti) * h;
                let gbase = (bi * t + ti) * h4;
                for j in 0..h {
                    let ig = gates[gbase + j];
                    let fg = gates[gbase + h + j];
                    let gg = gates[gbase + 2 * h + j];
                    let og = gates[gbase + 3 * h + j];
                    let c = cells[base + j];
                    let tc = c.tanh();
                    let dh = gy.data()[base + j] + dh_next[bi * h + j];
                    let c_prev = prev.map_or(T::zero(), |p| cells[(bi * t + p) * h + j]);
                    let d_o = dh * tc;
                    let dc = dh * og * (one - tc * tc) + dc_next[bi * h + j];
                    let d_i = dc * gg;
                    let d_g = dc * ig;
                    let d_f = dc * c_prev;
                    dc_next[bi * h + j] = dc * fg;
                    let row = &mut da[bi * h4..(bi + 1) * h4];
                    row[j] = d_i * ig * (one - ig);
                    row[h + j] = d_f * fg * (one - fg);
                    row[2 * h + j] = d_g * (one - gg * gg);
                    row[3 * h + j] = d_o * og * (one - og);
                }
                let dst = (bi * t + ti) * h4;
                da_all[dst..dst + h4].copy_from_slice(&da[bi * h4..(bi + 1) * h4]);
            }
            if let Some(p) = prev {
                for bi in 0..bsz {
                    let src = (bi * t + p) * h;
                    h_prev[bi * h..(bi + 1) * h].copy_from_slice(&hs.data()[src..src + h]);
                }
                matmul(&h_prev, true, &da, false, &mut dwhh, h, bsz, h4, true);
                matmul(&da, false, whh, true, &mut dh_next, bsz, h4, h, false);
            }
        }

        if self.needs(w_hh) {
            accumulate(grads, w_hh, &[h, h4], dwhh);
        }
        if self.needs(w_ih) {
            let mut dw = vec![T::zero(); cin * h4];
            matmul(self.value(x).data(), true, &da_all, false, &mut dw, cin, bsz * t, h4, false);
            accumulate(grads, w_ih, &[cin, h4], dw);
        }
        if self.needs(b) {
            accumulate(grads, b, &[h4], column_sums(&da_all, h4));
        }
        if self.needs(x) {
            let mut dx = vec![T::zero(); bsz * t * cin];
            matmul(&da_all, false, self.value(w_ih).data(), true, &mut dx, bsz * t, h4, cin, false);
            accumulate(grads, x, &[bsz, t, cin], dx);
        }
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], d: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(d) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::from_vec(shape, d)),
    }
}

fn add_row_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn column_sums<T: Real>(data: &[T], width: usize) -> Vec<T> {
    let mut s = vec![T::zero(); width];
    for row in data.chunks_exact(width) {
        for (a, &b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

fn softmax_rows<T: Real>(data: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (src, dst) in data.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let m = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

/// Row-wise softmax of `[..., K]` values, outside any graph.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(logits.shape(), softmax_rows(logits.data(), logits.last_dim()))
}

fn im2col<T: Real>(x: &[T], b: usize, t: usize, cin: usize, kernel: usize, dilation: usize) -> Vec<T> {
    let pad = (kernel / 2) * dilation;
    let kc = kernel * cin;
    let mut cols = vec![T::zero(); b * t * kc];
    for bi in 0..b {
        for ti in 0..t {
            let row = &mut cols[(bi * t + ti) * kc..(bi * t + ti + 1) * kc];
            for k in 0..kernel {
                let src = ti as isize + (k * dilation) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let s = (bi * t + src as usize) * cin;
                    row[k * cin..(k + 1) * cin].copy_from_slice(&x[s..s + cin]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], b: usize, t: usize, cin: usize, kernel: usize, dilation: usize) -> Vec<T> {
    let pad = (kernel / 2) * dilation;
    let kc = kernel * cin;
    let mut x = vec![T::zero(); b * t * cin];
    for bi in 0..b {
        for ti in 0..t {
            let row = &cols[(bi * t + ti) * kc..(bi * t + ti + 1) * kc];
            for k in 0..kernel {
                let src = ti as isize + (k * dilation) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let s = (bi * t + src as usize) * cin;
                    for (o, &v) in x[s..s + cin].iter_mut().zip(&row[k * cin..(k + 1) * cin]) {
                        *o += v;
                    }
                }
            }
        }
    }
    x
}
