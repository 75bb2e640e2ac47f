//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every forward op appends a node holding the output tensor plus an
//! [`OpRecord`] describing how to push gradients back to its inputs.
//! `backward` does a single reverse scan, accumulating cotangents only for
//! vars whose tensors have `requires_grad` set; subgraphs that cannot reach
//! a differentiable leaf are skipped entirely.

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Handle to a value on the tape. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum OpRecord {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    Matmul(Var, Var),
    /// x @ w + b with x:[n,d], w:[d,k], b:[k]
    Dense(Var, Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        /// In-plane source index of each output element (first max on ties).
        argmax: Vec<u32>,
    },
    Relu(Var),
    Reshape(Var),
    Softmax(Var),
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
        /// Cached softmax probabilities from the forward pass.
        probs: Vec<f32>,
    },
    Dropout {
        x: Var,
        /// Per-element multiplier (0 or 1/(1-rate)), same length as x.
        mask: Vec<f32>,
    },
    /// Sum over the batch of one logit column: scalar = sum_n x[n, col].
    PickColumnSum(Var, usize),
}

struct Node {
    tensor: Tensor,
    op: OpRecord,
}

/// How dropout draws its thinning mask.
#[derive(Debug)]
pub enum DropoutMode<'a> {
    /// Identity; used at inference time.
    Off,
    /// Sample a fresh Bernoulli mask from the stream (training / MC dropout).
    Sample { rate: f32, stream: &'a mut RngStream },
    /// Reuse a previously materialised mask (values 0 or 1/(1-rate)).
    Fixed { mask: &'a [f32] },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].tensor.grad()
    }

    /// Move the tensor (with any gradient) out of the tape.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].tensor, Tensor::scalar(0.0))
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::invalid_argument(
                "tape already consumed by backward; build a fresh tape",
            ));
        }
        Ok(())
    }

    fn push(&mut self, tensor: Tensor, op: OpRecord) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, OpRecord::Leaf)
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_open()?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape_mismatch(op_name, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?
            .with_requires_grad(self.rg(a) || self.rg(b));
        Ok(self.push(t, OpRecord::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?
            .with_requires_grad(self.rg(a) || self.rg(b));
        Ok(self.push(t, OpRecord::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?
            .with_requires_grad(self.rg(a) || self.rg(b));
        Ok(self.push(t, OpRecord::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.check_open()?;
        let data: Vec<f32> = self.value(a).data().iter().map(|&x| x + s).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?.with_requires_grad(self.rg(a));
        Ok(self.push(t, OpRecord::AddScalar(a)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.check_open()?;
        let data: Vec<f32> = self.value(a).data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?.with_requires_grad(self.rg(a));
        Ok(self.push(t, OpRecord::MulScalar(a, s)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape_mismatch("matmul", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * p];
        kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, p, &mut out);
        let t = Tensor::new(vec![m, p], out)?.with_requires_grad(self.rg(a) || self.rg(b));
        Ok(self.push(t, OpRecord::Matmul(a, b)))
    }

    /// Fully connected layer: `x @ w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let (sx, sw, sb) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape_mismatch("dense", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(Error::shape_mismatch("dense bias", sw, sb));
        }
        let (n, d, k) = (sx[0], sx[1], sw[1]);
        let mut out = vec![0.0f32; n * k];
        kernels::matmul_nn(self.value(x).data(), self.value(w).data(), n, d, k, &mut out);
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(k) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![n, k], out)?
            .with_requires_grad(self.rg(x) || self.rg(w) || self.rg(b));
        Ok(self.push(t, OpRecord::Dense(x, w, b)))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.check_open()?;
        if stride == 0 {
            return Err(Error::invalid_argument("conv2d stride must be >= 1"));
        }
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape_mismatch("conv2d", sx, sw));
        }
        let (n, ci, h, wdim) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wdim + 2 * pad < kw {
            return Err(Error::shape_mismatch("conv2d kernel larger than input", sx, sw));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [co] {
                return Err(Error::shape_mismatch("conv2d bias", sw, self.value(b).shape()));
            }
        }
        let ho = kernels::conv2d_out_dim(h, kh, stride, pad);
        let wo = kernels::conv2d_out_dim(wdim, kw, stride, pad);
        let mut out = vec![0.0f32; n * co * ho * wo];
        kernels::conv2d_forward(
            self.value(x).data(),
            (n, ci, h, wdim),
            self.value(w).data(),
            (co, kh, kw),
            b.map(|b| self.value(b).data()),
            stride,
            pad,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![n, co, ho, wo], out)?.with_requires_grad(rg);
        Ok(self.push(t, OpRecord::Conv2d { x, w, b, stride, pad }))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check_open()?;
        let sx = self.value(x).shape();
        if sx.len() != 4 {
            return Err(Error::shape_mismatch("maxpool2d", sx, &[k, k]));
        }
        if k == 0 || sx[2] < k || sx[3] < k {
            return Err(Error::invalid_argument(
                "maxpool2d window must be >= 1 and fit in the input",
            ));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (ho, wo) = (h / k, w / k);
        let mut out = vec![0.0f32; n * c * ho * wo];
        let mut argmax = vec![0u32; n * c * ho * wo];
        kernels::maxpool2d_forward(self.value(x).data(), (n, c, h, w), k, &mut out, &mut argmax);
        let t = Tensor::new(vec![n, c, ho, wo], out)?.with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::MaxPool2d { x, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let data: Vec<f32> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?.with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::Relu(x)))
    }

    /// Collapse all trailing dims: [n, ...] -> [n, prod].
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let sx = self.value(x).shape();
        if sx.len() < 2 {
            return Err(Error::invalid_argument("flatten needs rank >= 2"));
        }
        let n = sx[0];
        let rest = self.value(x).numel() / n;
        let t = Tensor::new(vec![n, rest], self.value(x).data().to_vec())?
            .with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::Reshape(x)))
    }

    /// Row-wise softmax over a [n, c] tensor, computed with the max-shift
    /// trick so constant offsets cancel exactly.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let sx = self.value(x).shape();
        if sx.len() != 2 {
            return Err(Error::invalid_argument("softmax expects a [n, classes] tensor"));
        }
        let (n, c) = (sx[0], sx[1]);
        let mut out = vec![0.0f32; n * c];
        softmax_rows(self.value(x).data(), c, &mut out);
        let t = Tensor::new(vec![n, c], out)?.with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::Softmax(x)))
    }

    /// Mean cross-entropy of logits against integer targets. Softmax is fused
    /// in (the stored probabilities drive the backward pass).
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check_open()?;
        let sx = self.value(logits).shape();
        if sx.len() != 2 {
            return Err(Error::invalid_argument("cross_entropy expects [n, classes] logits"));
        }
        let (n, c) = (sx[0], sx[1]);
        if targets.len() != n {
            return Err(Error::shape_mismatch("cross_entropy targets", sx, &[targets.len()]));
        }
        if n == 0 {
            return Err(Error::invalid_argument("cross_entropy on an empty batch"));
        }
        for &t in targets {
            if t >= c {
                return Err(Error::InvalidLabel { label: t, classes: c });
            }
        }
        let mut probs = vec![0.0f32; n * c];
        softmax_rows(self.value(logits).data(), c, &mut probs);
        let mut loss = 0f64;
        for (row, &t) in probs.chunks_exact(c).zip(targets) {
            // Clamp away from zero so a fully confident wrong row stays finite.
            loss -= (row[t].max(f32::MIN_POSITIVE) as f64).ln();
        }
        let t = Tensor::scalar((loss / n as f64) as f32).with_requires_grad(self.rg(logits));
        Ok(self.push(
            t,
            OpRecord::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Inverted dropout: kept elements are scaled by 1/(1-rate) so the
    /// expected value matches the identity path.
    pub fn dropout(&mut self, x: Var, mode: DropoutMode) -> Result<Var> {
        self.check_open()?;
        match mode {
            DropoutMode::Off => Ok(x),
            DropoutMode::Sample { rate, stream } => {
                if rate == 0.0 {
                    return Ok(x);
                }
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::invalid_argument(format!(
                        "dropout rate must be in [0, 1), got {rate}"
                    )));
                }
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f32> = (0..self.value(x).numel())
                    .map(|_| if stream.next_f32() < rate { 0.0 } else { scale })
                    .collect();
                self.apply_dropout_mask(x, mask)
            }
            DropoutMode::Fixed { mask } => {
                if mask.len() != self.value(x).numel() {
                    return Err(Error::shape_mismatch(
                        "dropout mask",
                        self.value(x).shape(),
                        &[mask.len()],
                    ));
                }
                self.apply_dropout_mask(x, mask.to_vec())
            }
        }
    }

    fn apply_dropout_mask(&mut self, x: Var, mask: Vec<f32>) -> Result<Var> {
        let data: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?.with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::Dropout { x, mask }))
    }

    /// Scalar objective for attribution: the sum over the batch of one logit
    /// column. With a single-row batch this is just `logits[0, col]`.
    pub fn pick_column_sum(&mut self, x: Var, col: usize) -> Result<Var> {
        self.check_open()?;
        let sx = self.value(x).shape();
        if sx.len() != 2 {
            return Err(Error::invalid_argument("pick_column_sum expects [n, classes]"));
        }
        let (n, c) = (sx[0], sx[1]);
        if col >= c {
            return Err(Error::InvalidLabel { label: col, classes: c });
        }
        let mut acc = 0f64;
        let data = self.value(x).data();
        for row in 0..n {
            acc += data[row * c + col] as f64;
        }
        let t = Tensor::scalar(acc as f32).with_requires_grad(self.rg(x));
        Ok(self.push(t, OpRecord::PickColumnSum(x, col)))
    }

    /// Reverse pass from a scalar. Gradients land on every tape tensor with
    /// `requires_grad`; the tape is consumed (no further ops or backward).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_open()?;
        let lt = &self.nodes[loss.0].tensor;
        if lt.numel() != 1 {
            return Err(Error::invalid_argument(format!(
                "backward needs a scalar target, got shape {:?}",
                lt.shape()
            )));
        }
        if !lt.requires_grad() {
            return Err(Error::invalid_argument(
                "backward target is detached: no input on its subgraph has requires_grad",
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let gout = grads[i].take().unwrap();
            self.dispatch(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.tensor.requires_grad() {
                if let Some(g) = g {
                    node.tensor.set_grad(g);
                }
            }
        }
        Ok(())
    }

    fn dispatch(&self, i: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let nodes = &self.nodes;
        let rg = |v: Var| nodes[v.0].tensor.requires_grad();
        let numel = |v: Var| nodes[v.0].tensor.numel();
        let mut sink = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if rg(v) {
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; numel(v)]);
                f(g);
            }
        };
        match &nodes[i].op {
            OpRecord::Leaf => {}
            OpRecord::Add(a, b) => {
                for v in [*a, *b] {
                    sink(v, &mut |g| {
                        for (gi, &go) in g.iter_mut().zip(gout) {
                            *gi += go;
                        }
                    });
                }
            }
            OpRecord::Sub(a, b) => {
                sink(*a, &mut |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                sink(*b, &mut |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                });
            }
            OpRecord::Mul(a, b) => {
                let (da, db) = (nodes[a.0].tensor.data(), nodes[b.0].tensor.data());
                sink(*a, &mut |g| {
                    for ((gi, &go), &bv) in g.iter_mut().zip(gout).zip(db) {
                        *gi += go * bv;
                    }
                });
                sink(*b, &mut |g| {
                    for ((gi, &go), &av) in g.iter_mut().zip(gout).zip(da) {
                        *gi += go * av;
                    }
                });
            }
            OpRecord::AddScalar(a) | OpRecord::Reshape(a) => {
                sink(*a, &mut |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            OpRecord::MulScalar(a, s) => {
                let s = *s;
                sink(*a, &mut |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go * s;
                    }
                });
            }
            OpRecord::Matmul(a, b) => {
                let (sa, sb) = (nodes[a.0].tensor.shape(), nodes[b.0].tensor.shape());
                let (m, k, p) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    // dA = dOut @ B^T
                    let mut acc = vec![0f64; m * k];
                    kernels::matmul_nt_acc(gout, nodes[b.0].tensor.data(), m, p, k, &mut acc);
                    add_f64(grads, *a, &acc);
                }
                if rg(*b) {
                    // dB = A^T @ dOut
                    let mut acc = vec![0f64; k * p];
                    kernels::matmul_tn_acc(nodes[a.0].tensor.data(), gout, m, k, p, &mut acc);
                    add_f64(grads, *b, &acc);
                }
            }
            OpRecord::Dense(x, w, b) => {
                let (sx, sw) = (nodes[x.0].tensor.shape(), nodes[w.0].tensor.shape());
                let (n, d, k) = (sx[0], sx[1], sw[1]);
                if rg(*x) {
                    let mut acc = vec![0f64; n * d];
                    kernels::matmul_nt_acc(gout, nodes[w.0].tensor.data(), n, k, d, &mut acc);
                    add_f64(grads, *x, &acc);
                }
                if rg(*w) {
                    let mut acc = vec![0f64; d * k];
                    kernels::matmul_tn_acc(nodes[x.0].tensor.data(), gout, n, d, k, &mut acc);
                    add_f64(grads, *w, &acc);
                }
                if rg(*b) {
                    let mut acc = vec![0f64; k];
                    for row in gout.chunks_exact(k) {
                        for (a, &g) in acc.iter_mut().zip(row) {
                            *a += g as f64;
                        }
                    }
                    add_f64(grads, *b, &acc);
                }
            }
            OpRecord::Conv2d { x, w, b, stride, pad } => {
                let sx = nodes[x.0].tensor.shape();
                let sw = nodes[w.0].tensor.shape();
                let dims = (sx[0], sx[1], sx[2], sx[3]);
                let ksz = (sw[0], sw[2], sw[3]);
                if rg(*x) {
                    let mut acc = vec![0f64; nodes[x.0].tensor.numel()];
                    kernels::conv2d_backward_input(
                        gout,
                        dims,
                        nodes[w.0].tensor.data(),
                        ksz,
                        *stride,
                        *pad,
                        &mut acc,
                    );
                    add_f64(grads, *x, &acc);
                }
                let want_b = b.map(|b| rg(b)).unwrap_or(false);
                if rg(*w) || want_b {
                    let mut dw = vec![0f64; nodes[w.0].tensor.numel()];
                    let mut db = if want_b { vec![0f64; ksz.0] } else { Vec::new() };
                    kernels::conv2d_backward_weights(
                        gout,
                        nodes[x.0].tensor.data(),
                        dims,
                        ksz,
                        *stride,
                        *pad,
                        &mut dw,
                        want_b.then_some(&mut db[..]),
                    );
                    if rg(*w) {
                        add_f64(grads, *w, &dw);
                    }
                    if want_b {
                        add_f64(grads, b.unwrap(), &db);
                    }
                }
            }
            OpRecord::MaxPool2d { x, argmax, .. } => {
                let sx = nodes[x.0].tensor.shape();
                let plane = sx[2] * sx[3];
                let nplanes = sx[0] * sx[1];
                let per_plane = argmax.len() / nplanes;
                sink(*x, &mut |g| {
                    for p in 0..nplanes {
                        let base = p * plane;
                        for j in 0..per_plane {
                            let src = p * per_plane + j;
                            g[base + argmax[src] as usize] += gout[src];
                        }
                    }
                });
            }
            OpRecord::Relu(x) => {
                let vals = nodes[i].tensor.data();
                sink(*x, &mut |g| {
                    for ((gi, &go), &v) in g.iter_mut().zip(gout).zip(vals) {
                        if v > 0.0 {
                            *gi += go;
                        }
                    }
                });
            }
            OpRecord::Softmax(x) => {
                let probs = nodes[i].tensor.data();
                let c = nodes[i].tensor.shape()[1];
                sink(*x, &mut |g| {
                    for (row, (prow, grow)) in probs.chunks_exact(c).zip(gout.chunks_exact(c)).enumerate() {
                        let dot: f64 = prow
                            .iter()
                            .zip(grow)
                            .map(|(&p, &go)| p as f64 * go as f64)
                            .sum();
                        let gr = &mut g[row * c..][..c];
                        for ((gi, &p), &go) in gr.iter_mut().zip(prow).zip(grow) {
                            *gi += (p as f64 * (go as f64 - dot)) as f32;
                        }
                    }
                });
            }
            OpRecord::CrossEntropyMean { logits, targets, probs } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = gout[0] as f64 / n as f64;
                sink(*logits, &mut |g| {
                    for (row, &t) in targets.iter().enumerate() {
                        let prow = &probs[row * c..][..c];
                        let gr = &mut g[row * c..][..c];
                        for (j, (gi, &p)) in gr.iter_mut().zip(prow).enumerate() {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            *gi += (scale * (p as f64 - ind)) as f32;
                        }
                    }
                });
            }
            OpRecord::Dropout { x, mask } => {
                sink(*x, &mut |g| {
                    for ((gi, &go), &m) in g.iter_mut().zip(gout).zip(mask) {
                        *gi += go * m;
                    }
                });
            }
            OpRecord::PickColumnSum(x, col) => {
                let c = nodes[x.0].tensor.shape()[1];
                let (col, go) = (*col, gout[0]);
                sink(*x, &mut |g| {
                    for row in g.chunks_exact_mut(c) {
                        row[col] += go;
                    }
                });
            }
        }
    }
}

fn add_f64(grads: &mut [Option<Vec<f32>>], v: Var, contrib: &[f64]) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; contrib.len()]);
    for (gi, &c) in g.iter_mut().zip(contrib) {
        *gi += c as f32;
    }
}

pub(crate) fn softmax_rows(x: &[f32], c: usize, out: &mut [f32]) {
    for (row, orow) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0f64;
        for &v in row {
            sum += ((v - max) as f64).exp();
        }
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (((v - max) as f64).exp() / sum) as f32;
        }
    }
}
