//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node whose inputs were created earlier, so the
//! tape is topologically ordered by construction and the backward pass is a
//! single reverse sweep.

use super::kernels::{self, Activation, ConvGeom};
use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order. `None` means
    /// the input receives no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormStats<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x {
        input: Var,
    },
    BatchNorm {
        input: Var,
        weight: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    ConcatChannels {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    NegLogMean {
        input: Var,
        complement: bool,
        clamp: f64,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A recorded computation. Build one per forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("conv2d input")?;
        let [o, kc, kh, kw] = self.value(kernel).dims4("conv2d kernel")?;
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d: input has {c} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be positive".into()));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(Error::Shape(format!(
                    "conv2d: bias shape {:?}, expected [{o}]",
                    self.value(b).shape()
                )));
            }
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < kh || pw < kw {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(vec![n, o, geom.oh, geom.ow], out)?;
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &ins,
        ))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("upsample_nearest2x")?;
        let out = kernels::upsample2x_forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2x { input }, &[input]))
    }

    /// Per-channel batch normalization over the N×H×W axes.
    pub fn batch_norm(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        mode: BnMode,
        stats: &mut BatchNormStats<T>,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("batch_norm")?;
        for (what, v) in [("weight", weight), ("bias", bias)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch_norm: {what} shape {:?}, expected [{c}]",
                    self.value(v).shape()
                )));
            }
        }
        if stats.running_mean.len() != c || stats.running_var.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm: running stats sized for {} channels, input has {c}",
                stats.running_mean.len()
            )));
        }
        if mode == BnMode::Train && n < 2 {
            return Err(Error::Shape(
                "batch_norm: train mode needs a batch of at least 2".into(),
            ));
        }
        let hw = h * w;
        let m = n * hw;
        let x = self.value(input).data();
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        match mode {
            BnMode::Train => {
                for ch in 0..c {
                    let mut s = 0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * hw;
                        s += x[base..base + hw].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * hw;
                        ss += x[base..base + hw]
                            .iter()
                            .map(|v| {
                                let d = v.f64() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / m as f64;
                }
                let mom = stats.momentum;
                let unbias = m as f64 / (m as f64 - 1.0);
                for ch in 0..c {
                    let rm = stats.running_mean[ch].f64();
                    let rv = stats.running_var[ch].f64();
                    stats.running_mean[ch] = T::of((1.0 - mom) * rm + mom * mean[ch]);
                    stats.running_var[ch] = T::of((1.0 - mom) * rv + mom * var[ch] * unbias);
                }
            }
            BnMode::Eval => {
                for ch in 0..c {
                    mean[ch] = stats.running_mean[ch].f64();
                    var[ch] = stats.running_var[ch].f64();
                }
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::of(1.0 / (v + stats.eps).sqrt()))
            .collect();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                let mu = T::of(mean[ch]);
                for i in base..base + hw {
                    let xh = (x[i] - mu) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = wt[ch] * xh + bs[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                weight,
                bias,
                xhat,
                inv_std,
                mode,
            },
            &[input, weight, bias],
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input).map(|v| kind.apply(v));
        self.push(value, Op::Activation { input, kind }, &[input])
    }

    /// `input (N×F) · weight (F×O) + bias (O)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = match self.value(input).shape() {
            &[n, f] => (n, f),
            s => return Err(Error::Shape(format!("linear: input must be N×F, got {s:?}"))),
        };
        let o = match self.value(weight).shape() {
            &[wf, o] if wf == f => o,
            s => {
                return Err(Error::Shape(format!(
                    "linear: weight shape {s:?} incompatible with {f} input features"
                )))
            }
        };
        if self.value(bias).shape() != [o] {
            return Err(Error::Shape(format!(
                "linear: bias shape {:?}, expected [{o}]",
                self.value(bias).shape()
            )));
        }
        let mut out = vec![T::zero(); n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(bias).data());
        }
        matmul(
            n,
            f,
            o,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            false,
            &mut out,
            true,
        );
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Shape("concat_channels: no inputs".into()))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat_channels")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels: {:?} does not match N,H,W of {:?}",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for ni in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[ni * c * hw..(ni + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push(
            value,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
            inputs,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let value = self.value(input).map(|v| v * f);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum { input }, &[input])
    }

    /// `mean(-ln p)`, or `mean(-ln(1 - p))` when `complement` is set, with
    /// `p` clamped to `[clamp, 1 - clamp]`. Clamped entries get no gradient.
    pub fn neg_log_mean(&mut self, input: Var, complement: bool, clamp: f64) -> Var {
        let t = self.value(input);
        let m = t.numel() as f64;
        let lo = clamp;
        let hi = 1.0 - clamp;
        let s: f64 = t
            .data()
            .iter()
            .map(|p| {
                let p = p.f64().clamp(lo, hi);
                if complement {
                    -(1.0 - p).ln()
                } else {
                    -p.ln()
                }
            })
            .sum();
        let value = Tensor::scalar(T::of(s / m));
        self.push(
            value,
            Op::NegLogMean {
                input,
                complement,
                clamp,
            },
            &[input],
        )
    }

    /// Record an externally computed operation with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Accumulate d`loss`/d`leaf` into every gradient-requiring node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this graph; rebuild the forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let shape = self.value(loss).shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &gy)?;
            for (v, g) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, i: usize, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let need_db = bias.is_some_and(|b| self.wants(b));
                let (dx, dk, db) = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gy.data(),
                    geom,
                    self.wants(*input),
                    self.wants(*kernel),
                    need_db,
                );
                if let Some(dx) = dx {
                    out.push((*input, Tensor::new(self.value(*input).shape().to_vec(), dx)?));
                }
                if let Some(dk) = dk {
                    out.push((*kernel, Tensor::new(self.value(*kernel).shape().to_vec(), dk)?));
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    out.push((*b, Tensor::new(vec![geom.o], db)?));
                }
            }
            Op::Upsample2x { input } => {
                let [n, c, h, w] = self.value(*input).dims4("upsample backward")?;
                let dx = kernels::upsample2x_backward(gy.data(), n * c, h, w);
                out.push((*input, Tensor::new(vec![n, c, h, w], dx)?));
            }
            Op::BatchNorm {
                input,
                weight,
                bias,
                xhat,
                inv_std,
                mode,
            } => {
                let [n, c, h, w] = self.value(*input).dims4("batch_norm backward")?;
                let hw = h * w;
                let m = (n * hw) as f64;
                let wt = self.value(*weight).data();
                let g = gy.data();
                let mut sum_dy = vec![0f64; c];
                let mut sum_dy_xhat = vec![0f64; c];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * hw;
                        for k in base..base + hw {
                            sum_dy[ch] += g[k].f64();
                            sum_dy_xhat[ch] += (g[k] * xhat[k]).f64();
                        }
                    }
                }
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); g.len()];
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * hw;
                            let scale = wt[ch] * inv_std[ch];
                            match mode {
                                BnMode::Train => {
                                    let mean_dy = T::of(sum_dy[ch] / m);
                                    let mean_dyx = T::of(sum_dy_xhat[ch] / m);
                                    for k in base..base + hw {
                                        dx[k] = scale * (g[k] - mean_dy - xhat[k] * mean_dyx);
                                    }
                                }
                                BnMode::Eval => {
                                    for k in base..base + hw {
                                        dx[k] = scale * g[k];
                                    }
                                }
                            }
                        }
                    }
                    out.push((*input, Tensor::new(vec![n, c, h, w], dx)?));
                }
                if self.wants(*weight) {
                    let dw = sum_dy_xhat.iter().map(|&v| T::of(v)).collect();
                    out.push((*weight, Tensor::new(vec![c], dw)?));
                }
                if self.wants(*bias) {
                    let db = sum_dy.iter().map(|&v| T::of(v)).collect();
                    out.push((*bias, Tensor::new(vec![c], db)?));
                }
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let data = x
                    .iter()
                    .zip(y.data())
                    .zip(gy.data())
                    .map(|((&xv, &yv), &g)| g * kind.derivative(xv, yv))
                    .collect();
                out.push((*input, Tensor::new(y.shape().to_vec(), data)?));
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (n, f) = (self.value(*input).shape()[0], self.value(*input).shape()[1]);
                let o = self.value(*weight).shape()[1];
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * f];
                    matmul(n, o, f, gy.data(), false, self.value(*weight).data(), true, &mut dx, false);
                    out.push((*input, Tensor::new(vec![n, f], dx)?));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); f * o];
                    matmul(f, n, o, self.value(*input).data(), true, gy.data(), false, &mut dw, false);
                    out.push((*weight, Tensor::new(vec![f, o], dw)?));
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); o];
                    for row in gy.data().chunks(o) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    out.push((*bias, Tensor::new(vec![o], db)?));
                }
            }
            Op::Reshape { input } => {
                let g = gy.clone().reshape(self.value(*input).shape())?;
                out.push((*input, g));
            }
            Op::ConcatChannels { inputs } => {
                let [n, total, h, w] = y.dims4("concat backward")?;
                let hw = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[1];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for ni in 0..n {
                            let start = (ni * total + offset) * hw;
                            d.extend_from_slice(&gy.data()[start..start + c * hw]);
                        }
                        out.push((v, Tensor::new(vec![n, c, h, w], d)?));
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = gy.data().iter().zip(vb.data()).map(|(&g, &v)| g * v).collect();
                let db = gy.data().iter().zip(va.data()).map(|(&g, &v)| g * v).collect();
                out.push((*a, Tensor::new(va.shape().to_vec(), da)?));
                out.push((*b, Tensor::new(vb.shape().to_vec(), db)?));
            }
            Op::Scale { input, factor } => {
                let f = T::of(*factor);
                out.push((*input, gy.map(|g| g * f)));
            }
            Op::Sum { input } => {
                let g = gy.data()[0];
                out.push((*input, Tensor::full(self.value(*input).shape(), g)));
            }
            Op::NegLogMean {
                input,
                complement,
                clamp,
            } => {
                let x = self.value(*input);
                let g = gy.data()[0].f64();
                let m = x.numel() as f64;
                let (lo, hi) = (*clamp, 1.0 - *clamp);
                let data = x
                    .data()
                    .iter()
                    .map(|p| {
                        let p = p.f64();
                        if p < lo || p > hi {
                            T::zero()
                        } else if *complement {
                            T::of(g / ((1.0 - p) * m))
                        } else {
                            T::of(-g / (p * m))
                        }
                    })
                    .collect();
                out.push((*input, Tensor::new(x.shape().to_vec(), data)?));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = op.backward(&ins, y, gy)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Graph(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (&v, g) in inputs.iter().zip(grads) {
                    if let Some(g) = g {
                        if g.shape() != self.value(v).shape() {
                            return Err(Error::Graph(format!(
                                "custom op {} produced gradient {:?} for input {:?}",
                                op.name(),
                                g.shape(),
                                self.value(v).shape()
                            )));
                        }
                        out.push((v, g));
                    }
                }
            }
        }
        Ok(out)
    }
}
