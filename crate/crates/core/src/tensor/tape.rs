use super::flops;
use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Softmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(usize),
    Linear { x: usize, w: usize, b: usize },
    MeanRows(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    RepeatRows(usize),
    CrossEntropy { logits: usize, target: usize },
    SigmoidCrossEntropy { logits: usize, targets: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Softmax(x)
            | Op::Gelu(x)
            | Op::MeanRows(x)
            | Op::RepeatRows(x)
            | Op::SliceCols { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
            Op::CrossEntropy { logits, .. } | Op::SigmoidCrossEntropy { logits, .. } => {
                vec![*logits]
            }
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of executed primitives.
///
/// Every primitive appends a node holding its output and whatever it needs
/// for its adjoint, and charges its FLOPs to a running counter. `backward`
/// replays the adjoints in reverse record order; a tape can be consumed once.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    flops: u64,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), consumed: false, flops: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// FLOPs charged by every primitive recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
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

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("gradient matches value shape"))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_node(value, Op::Leaf, requires_grad))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, cost: u64) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.flops += cost;
        Ok(self.push_node(value, op, requires_grad))
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Matrix product of `p×q` and `q×r` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.val(a).expect_matrix("matmul")?;
        let (q2, r) = self.val(b).expect_matrix("matmul")?;
        if q != q2 {
            return Err(Error::dim("matmul", format!("inner axes {q} and {q2}")));
        }
        let mut out = vec![T::zero(); p * r];
        kernels::matmul(self.val(a).data(), self.val(b).data(), &mut out, p, q, r);
        let value = Tensor::new([p, r], out)?;
        let cost = flops::matmul(p as u64, q as u64, r as u64);
        self.push("matmul", value, Op::MatMul(a.0, b.0), cost)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x).transpose()?;
        self.push("transpose", value, Op::Transpose(x.0), 0)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("shapes {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let n = value.numel() as u64;
        self.push("add", value, Op::Add(a.0, b.0), n)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let n = value.numel() as u64;
        self.push("mul", value, Op::Mul(a.0, b.0), n)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let value = self.val(x).map(|v| v * s);
        let n = value.numel() as u64;
        self.push("scale", value, Op::Scale(x.0, s), n)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: T = self.val(x).data().iter().copied().sum();
        let n = self.val(x).numel() as u64;
        self.push("sum", Tensor::scalar(total), Op::Sum(x.0), n)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last_axis(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x);
        let cols = xv.last_dim();
        if cols == 0 || xv.numel() == 0 {
            return Err(Error::dim("softmax", "empty last axis"));
        }
        let mut out = vec![T::zero(); xv.numel()];
        kernels::softmax_rows(xv.data(), &mut out, cols);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let cost = flops::SOFTMAX_PER_SCALAR * value.numel() as u64;
        self.push("softmax", value, Op::Softmax(x.0), cost)
    }

    /// Layer normalization over the last axis followed by a per-channel
    /// affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.val(x);
        let c = xv.last_dim();
        if c == 0 {
            return Err(Error::dim("layer_norm", "empty channel axis"));
        }
        if self.val(gain).numel() != c || self.val(bias).numel() != c {
            return Err(Error::dim(
                "layer_norm",
                format!("gain/bias of {}/{} elements for {c} channels", self.val(gain).numel(), self.val(bias).numel()),
            ));
        }
        if !(eps > T::zero()) {
            return Err(Error::Domain("layer_norm eps must be positive".into()));
        }
        let g = self.val(gain).data();
        let b = self.val(bias).data();
        let rows = xv.rows();
        let inv_c = T::of(c as f64).recip();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean: T = row.iter().copied().sum::<T>() * inv_c;
            let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let rs = (var + eps).sqrt().recip();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let cost = flops::LAYER_NORM_PER_SCALAR * value.numel() as u64;
        let op = Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd };
        self.push("layer_norm", value, op, cost)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x).map(kernels::gelu);
        let cost = flops::GELU_PER_SCALAR * value.numel() as u64;
        self.push("gelu", value, Op::Gelu(x.0), cost)
    }

    /// Affine map over the last axis, tiled over every leading index.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.val(x);
        let cin = xv.last_dim();
        let (win, cout) = self.val(w).expect_matrix("linear")?;
        if win != cin {
            return Err(Error::dim("linear", format!("input has {cin} channels, weight expects {win}")));
        }
        if self.val(b).numel() != cout {
            return Err(Error::dim("linear", format!("bias of {} for {cout} outputs", self.val(b).numel())));
        }
        let rows = xv.rows();
        let mut out = vec![T::zero(); rows * cout];
        kernels::matmul(xv.data(), self.val(w).data(), &mut out, rows, cin, cout);
        let bias = self.val(b).data();
        for row in out.chunks_exact_mut(cout) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let mut shape = xv.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = cout,
            None => shape.push(cout),
        }
        let value = Tensor::new(shape, out)?;
        let cost = flops::linear(rows as u64, cin as u64, cout as u64);
        self.push("linear", value, Op::Linear { x: x.0, w: w.0, b: b.0 }, cost)
    }

    /// Arithmetic mean over the first (index) axis of an `N×C` matrix.
    pub fn mean_over_index(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.val(x).expect_matrix("mean_over_index")?;
        if n == 0 {
            return Err(Error::dim("mean_over_index", "zero rows"));
        }
        let xv = self.val(x);
        let mut out = vec![T::zero(); c];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let inv = T::of(n as f64).recip();
        out.iter_mut().for_each(|o| *o *= inv);
        let value = Tensor::new([c], out)?;
        let cost = flops::mean_over_index(n as u64, c as u64);
        self.push("mean_over_index", value, Op::MeanRows(x.0), cost)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.val(x).slice_cols(start, len)?;
        self.push("slice_cols", value, Op::SliceCols { x: x.0, start }, 0)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.val(v)).collect();
        let value = Tensor::concat_cols(&parts)?;
        self.push("concat_cols", value, Op::ConcatCols(xs.iter().map(|v| v.0).collect()), 0)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.val(v)).collect();
        let value = Tensor::concat_rows(&parts)?;
        self.push("concat_rows", value, Op::ConcatRows(xs.iter().map(|v| v.0).collect()), 0)
    }

    /// Broadcasts a vector (`[C]` or `[1, C]`) to `n` identical rows.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.val(x);
        let c = xv.numel();
        if xv.rows() != 1 {
            return Err(Error::dim("repeat_rows", format!("expected one row, got {:?}", xv.shape())));
        }
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let value = Tensor::new([n, c], data)?;
        self.push("repeat_rows", value, Op::RepeatRows(x.0), 0)
    }

    /// Softmax cross-entropy of a logit vector against a class index,
    /// stabilized with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.val(logits);
        let k = lv.numel();
        if lv.rows() != 1 {
            return Err(Error::dim("cross_entropy", format!("logits of shape {:?}", lv.shape())));
        }
        if target >= k {
            return Err(Error::InvalidTarget(format!("class {target} of {k}")));
        }
        let loss = kernels::log_sum_exp(lv.data()) - lv.data()[target];
        let cost = flops::SOFTMAX_PER_SCALAR * k as u64;
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropy { logits: logits.0, target }, cost)
    }

    /// Summed sigmoid cross-entropy over independent binary labels.
    pub fn sigmoid_cross_entropy(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let lv = self.val(logits);
        if lv.rows() != 1 || lv.numel() != targets.len() {
            return Err(Error::InvalidTarget(format!(
                "{} targets for logits of shape {:?}",
                targets.len(),
                lv.shape()
            )));
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::InvalidTarget("multi-label targets must be 0 or 1".into()));
        }
        // max(z, 0) - z·y + ln(1 + e^{-|z|})
        let loss: T =
            lv.data().iter().zip(targets).map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()).sum();
        let cost = flops::SOFTMAX_PER_SCALAR * targets.len() as u64;
        self.push(
            "sigmoid_cross_entropy",
            Tensor::scalar(loss),
            Op::SigmoidCrossEntropy { logits: logits.0, targets: targets.to_vec() },
            cost,
        )
    }

    /// Reverse pass from a scalar loss. Afterwards [`Tape::grad`] returns
    /// `dLoss/dv` for every value that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.val(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let numel = |j: usize| nodes[j].value.numel();
        fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], j: usize, n: usize) -> &mut [T] {
            grads[j].get_or_insert_with(|| vec![T::zero(); n])
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = bv.shape()[1];
                if wants(*a) {
                    kernels::matmul_add_bt(g, bv.data(), slot(grads, *a, p * q), p, q, r);
                }
                if wants(*b) {
                    kernels::matmul_add_at(av.data(), g, slot(grads, *b, q * r), p, q, r);
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let s = nodes[*x].value.shape();
                    let (r, c) = (s[0], s[1]);
                    let dst = slot(grads, *x, r * c);
                    // g is c×r
                    for a in 0..r {
                        for b in 0..c {
                            dst[a * c + b] += g[b * r + a];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &j in [a, b] {
                    if wants(j) {
                        let dst = slot(grads, j, g.len());
                        dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                if wants(*a) {
                    let dst = slot(grads, *a, g.len());
                    for k in 0..g.len() {
                        dst[k] += g[k] * bv[k];
                    }
                }
                if wants(*b) {
                    let dst = slot(grads, *b, g.len());
                    for k in 0..g.len() {
                        dst[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(x, s) => {
                if wants(*x) {
                    let dst = slot(grads, *x, g.len());
                    dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let n = numel(*x);
                    slot(grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let y = nodes[i].value.data();
                    let c = nodes[i].value.last_dim();
                    let dst = slot(grads, *x, y.len());
                    for ((yr, gr), dr) in y.chunks_exact(c).zip(g.chunks_exact(c)).zip(dst.chunks_exact_mut(c)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for k in 0..c {
                            dr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = nodes[*x].value.last_dim();
                let gv = nodes[*gain].value.data();
                if wants(*gain) {
                    let dst = slot(grads, *gain, c);
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for k in 0..c {
                            dst[k] += gr[k] * hr[k];
                        }
                    }
                }
                if wants(*bias) {
                    let dst = slot(grads, *bias, c);
                    for gr in g.chunks_exact(c) {
                        for k in 0..c {
                            dst[k] += gr[k];
                        }
                    }
                }
                if wants(*x) {
                    let inv_c = T::of(c as f64).recip();
                    let dst = slot(grads, *x, g.len());
                    for (r, (gr, hr)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for k in 0..c {
                            let dh = gr[k] * gv[k];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[k];
                        }
                        let rs = rstd[r];
                        let dr = &mut dst[r * c..(r + 1) * c];
                        for k in 0..c {
                            let dh = gr[k] * gv[k];
                            dr[k] += rs * (dh - inv_c * sum_dh - hr[k] * inv_c * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let xv = nodes[*x].value.data();
                    let dst = slot(grads, *x, g.len());
                    for k in 0..g.len() {
                        dst[k] += g[k] * kernels::gelu_grad(xv[k]);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xv = &nodes[*x].value;
                let wv = &nodes[*w].value;
                let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if wants(*x) {
                    kernels::matmul_add_bt(g, wv.data(), slot(grads, *x, rows * cin), rows, cin, cout);
                }
                if wants(*w) {
                    kernels::matmul_add_at(xv.data(), g, slot(grads, *w, cin * cout), rows, cin, cout);
                }
                if wants(*b) {
                    let dst = slot(grads, *b, cout);
                    for gr in g.chunks_exact(cout) {
                        for k in 0..cout {
                            dst[k] += gr[k];
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                if wants(*x) {
                    let n = nodes[*x].value.rows();
                    let c = g.len();
                    let inv = T::of(n as f64).recip();
                    let dst = slot(grads, *x, n * c);
                    for r in 0..n {
                        for k in 0..c {
                            dst[r * c + k] += g[k] * inv;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let src = &nodes[*x].value;
                    let (rows, c) = (src.rows(), src.last_dim());
                    let len = nodes[i].value.last_dim();
                    let dst = slot(grads, *x, rows * c);
                    for r in 0..rows {
                        for k in 0..len {
                            dst[r * c + start + k] += g[r * len + k];
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = nodes[i].value.last_dim();
                let rows = nodes[i].value.rows();
                let mut offset = 0;
                for &j in xs {
                    let w = nodes[j].value.last_dim();
                    if wants(j) {
                        let dst = slot(grads, j, rows * w);
                        for r in 0..rows {
                            for k in 0..w {
                                dst[r * w + k] += g[r * total + offset + k];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &j in xs {
                    let n = numel(j);
                    if wants(j) {
                        let dst = slot(grads, j, n);
                        for k in 0..n {
                            dst[k] += g[offset + k];
                        }
                    }
                    offset += n;
                }
            }
            Op::RepeatRows(x) => {
                if wants(*x) {
                    let c = numel(*x);
                    let dst = slot(grads, *x, c);
                    for gr in g.chunks_exact(c) {
                        for k in 0..c {
                            dst[k] += gr[k];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, target } => {
                if wants(*logits) {
                    let z = nodes[*logits].value.data();
                    let mut p = vec![T::zero(); z.len()];
                    kernels::softmax_rows(z, &mut p, z.len());
                    let dst = slot(grads, *logits, z.len());
                    for k in 0..z.len() {
                        let onehot = if k == *target { T::one() } else { T::zero() };
                        dst[k] += g[0] * (p[k] - onehot);
                    }
                }
            }
            Op::SigmoidCrossEntropy { logits, targets } => {
                if wants(*logits) {
                    let z = nodes[*logits].value.data();
                    let dst = slot(grads, *logits, z.len());
                    for k in 0..z.len() {
                        dst[k] += g[0] * (kernels::sigmoid(z[k]) - targets[k]);
                    }
                }
            }
        }
    }
}
