//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, so the tape is always topologically sorted. Calling
//! [`Graph::backward`] consumes the tape and returns the gradient of a scalar
//! loss with respect to every leaf created with [`Graph::variable`].

use crate::error::{Error, Result};
use crate::tensor::{self, col2im, gemm, im2col, nchw_to_rows, rows_to_nchw, Tensor, KERNEL};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceLast(Var, usize, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    LstmCell {
        gates: Var,
        h: Var,
        c: Var,
        mask: Option<Vec<f64>>,
        /// Per row: i, f, g, o and tanh(c'), each `H` wide.
        acts: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a `variable` leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// The recorded differentiation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.needs(a) || self.needs(b);
        self.push(name, value, op, rg)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.needs(a);
        self.push(name, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    /// Adds a `[n]` bias to every row of a tensor whose last axis is `n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vb.len();
        if vb.shape().len() != 1 || vx.last_dim() != n {
            return Err(Error::shape("add_bias", vx.shape(), vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (d, b) in row.iter_mut().zip(vb.data()) {
                *d += b;
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.needs(x) || self.needs(bias);
        self.push("add_bias", value, Op::AddBias(x, bias), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log; non-positive inputs yield a non-finite error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, tensor::softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs(a);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sums over the last axis, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = v.last_dim();
        let data: Vec<f64> = v.data().chunks(n).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = 1,
            None => shape.push(1),
        }
        let rg = self.needs(a);
        self.push("sum_last", Tensor::from_parts(shape, data), Op::SumLast(a), rg)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len().saturating_sub(1)];
        for &p in &parts[1..] {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(Error::shape("concat", self.shape(first), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks along the first axis; trailing axes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat_rows", self.shape(first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", Tensor::from_parts(shape, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let n = v.last_dim();
        if start >= end || end > n || v.shape().is_empty() {
            return Err(Error::InvalidShape {
                op: "slice_last",
                detail: format!("range {start}..{end} of {:?}", v.shape()),
            });
        }
        let data: Vec<f64> = v.data().chunks(n).flat_map(|r| r[start..end].iter().copied()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let rg = self.needs(a);
        self.push("slice_last", Tensor::from_parts(shape, data), Op::SliceLast(a, start, end), rg)
    }

    /// Rows `start..end` of the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if v.shape().is_empty() || start >= end || end > v.shape()[0] {
            return Err(Error::InvalidShape {
                op: "slice_rows",
                detail: format!("range {start}..{end} of {:?}", v.shape()),
            });
        }
        let row = v.len() / v.shape()[0];
        let data = v.data()[start * row..end * row].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = end - start;
        let rg = self.needs(a);
        self.push("slice_rows", Tensor::from_parts(shape, data), Op::SliceRows(a, start), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.needs(a);
        self.push("reshape", value, Op::Reshape(a), rg)
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    fn conv_bias_check(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// 4×4 cross-correlation, stride 2, zero padding 1.
    ///
    /// `input: [B, C_in, H, W]` with even `H`, `W`; `kernel: [C_out, C_in, 4, 4]`;
    /// output `[B, C_out, H/2, W/2]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || sk[1] != si[1] || sk[2] != KERNEL || sk[3] != KERNEL {
            return Err(Error::shape("conv2d", &si, &sk));
        }
        let (b, c, h, w) = (si[0], si[1], si[2], si[3]);
        if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("spatial size {h}x{w} must be even"),
            });
        }
        let o = sk[0];
        self.conv_bias_check("conv2d", bias, o)?;
        let (oh, ow) = (h / 2, w / 2);
        let cols = im2col(self.value(input).data(), b, c, h, w);
        let rows = b * oh * ow;
        let mut out = vec![0.0; rows * o];
        gemm(rows, c * KERNEL * KERNEL, o, &cols, false, self.value(kernel).data(), true, &mut out, false);
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for r in out.chunks_mut(o) {
                for (x, bb) in r.iter_mut().zip(bd) {
                    *x += bb;
                }
            }
        }
        let data = rows_to_nchw(&out, b, o, oh * ow);
        let rg = self.needs(input) || self.needs(kernel) || bias.is_some_and(|v| self.needs(v));
        self.push(
            "conv2d",
            Tensor::from_parts(vec![b, o, oh, ow], data),
            Op::Conv2d { input, kernel, bias },
            rg,
        )
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same geometry.
    ///
    /// `input: [B, C_in, H, W]`; `kernel: [C_in, C_out, 4, 4]`; output `[B, C_out, 2H, 2W]`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || sk[0] != si[1] || sk[2] != KERNEL || sk[3] != KERNEL {
            return Err(Error::shape("conv_transpose2d", &si, &sk));
        }
        let (b, ci, h, w) = (si[0], si[1], si[2], si[3]);
        let co = sk[1];
        self.conv_bias_check("conv_transpose2d", bias, co)?;
        let (oh, ow) = (2 * h, 2 * w);
        let x_rows = nchw_to_rows(self.value(input).data(), b, ci, h * w);
        let ncols = co * KERNEL * KERNEL;
        let mut cols = vec![0.0; b * h * w * ncols];
        gemm(b * h * w, ci, ncols, &x_rows, false, self.value(kernel).data(), false, &mut cols, false);
        let mut data = col2im(&cols, b, co, oh, ow);
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (plane, chunk) in data.chunks_mut(oh * ow).enumerate() {
                let bb = bd[plane % co];
                chunk.iter_mut().for_each(|x| *x += bb);
            }
        }
        let rg = self.needs(input) || self.needs(kernel) || bias.is_some_and(|v| self.needs(v));
        self.push(
            "conv_transpose2d",
            Tensor::from_parts(vec![b, co, oh, ow], data),
            Op::ConvTranspose2d { input, kernel, bias },
            rg,
        )
    }

    /// Fused LSTM cell nonlinearity.
    ///
    /// `gates: [B, 4H]` are pre-activations laid out as input, forget, candidate,
    /// output. Returns `[B, 2H]` holding `h'` then `c'`. Rows whose `mask` entry
    /// is zero carry `h` and `c` through unchanged.
    pub fn lstm_cell(&mut self, gates: Var, h: Var, c: Var, mask: Option<Vec<f64>>) -> Result<Var> {
        let sg = self.shape(gates);
        if sg.len() != 2 || sg[1] % 4 != 0 {
            return Err(Error::InvalidShape {
                op: "lstm_cell",
                detail: format!("gates shape {sg:?}"),
            });
        }
        let (b, hd) = (sg[0], sg[1] / 4);
        for v in [h, c] {
            if self.shape(v) != [b, hd] {
                return Err(Error::shape("lstm_cell", self.shape(gates), self.shape(v)));
            }
        }
        if let Some(m) = &mask {
            if m.len() != b {
                return Err(Error::shape("lstm_cell", &[m.len()], &[b]));
            }
        }
        let (gv, hv, cv) = (self.value(gates).data(), self.value(h).data(), self.value(c).data());
        let mut out = vec![0.0; b * 2 * hd];
        let mut acts = vec![0.0; b * 5 * hd];
        for r in 0..b {
            let orow = &mut out[r * 2 * hd..(r + 1) * 2 * hd];
            if mask.as_ref().is_some_and(|m| m[r] == 0.0) {
                orow[..hd].copy_from_slice(&hv[r * hd..(r + 1) * hd]);
                orow[hd..].copy_from_slice(&cv[r * hd..(r + 1) * hd]);
                continue;
            }
            let g = &gv[r * 4 * hd..(r + 1) * 4 * hd];
            let a = &mut acts[r * 5 * hd..(r + 1) * 5 * hd];
            for j in 0..hd {
                let i = tensor::sigmoid(g[j]);
                let f = tensor::sigmoid(g[hd + j]);
                let cand = g[2 * hd + j].tanh();
                let o = tensor::sigmoid(g[3 * hd + j]);
                let c_new = f * cv[r * hd + j] + i * cand;
                let tc = c_new.tanh();
                orow[j] = o * tc;
                orow[hd + j] = c_new;
                a[j] = i;
                a[hd + j] = f;
                a[2 * hd + j] = cand;
                a[3 * hd + j] = o;
                a[4 * hd + j] = tc;
            }
        }
        let rg = self.needs(gates) || self.needs(h) || self.needs(c);
        self.push(
            "lstm_cell",
            Tensor::from_parts(vec![b, 2 * hd], out),
            Op::LstmCell {
                gates,
                h,
                c,
                mask,
                acts,
            },
            rg,
        )
    }

    /// Runs reverse-mode accumulation from a scalar `loss` and resets the tape.
    ///
    /// Every `variable` leaf gets a gradient of its own shape; leaves the loss
    /// does not depend on get zeros.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let loss_value = &nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(loss_value.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, t: Tensor| accumulate(&mut grads, v, t);
            let like = |v: Var, data: Vec<f64>| Tensor::from_parts(nodes[v.0].value.shape().to_vec(), data);
            let gd = g.data();

            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(*a, g.clone());
                    }
                    if needs(*b) {
                        acc(*b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        acc(*a, g.clone());
                    }
                    if needs(*b) {
                        acc(*b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let d = gd.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                        acc(*a, like(*a, d));
                    }
                    if needs(*b) {
                        let d = gd.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                        acc(*b, like(*b, d));
                    }
                }
                Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::AddBias(x, b) => {
                    if needs(*b) {
                        let n = val(*b).len();
                        let mut d = vec![0.0; n];
                        for row in gd.chunks(n) {
                            for (s, v) in d.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc(*b, like(*b, d));
                    }
                    if needs(*x) {
                        acc(*x, g.clone());
                    }
                }
                Op::Exp(a) => {
                    let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                    acc(*a, like(*a, d));
                }
                Op::Log(a) => {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
                    acc(*a, like(*a, d));
                }
                Op::Tanh(a) => {
                    let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(*a, like(*a, d));
                }
                Op::Sigmoid(a) => {
                    let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(*a, like(*a, d));
                }
                Op::Softplus(a) => {
                    let d = gd
                        .iter()
                        .zip(val(*a).data())
                        .map(|(g, &x)| g * tensor::sigmoid(x))
                        .collect();
                    acc(*a, like(*a, d));
                }
                Op::Relu(a) => {
                    let d = gd
                        .iter()
                        .zip(val(*a).data())
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    acc(*a, like(*a, d));
                }
                Op::Sum(a) => {
                    let n = val(*a).len();
                    acc(*a, like(*a, vec![gd[0]; n]));
                }
                Op::Mean(a) => {
                    let n = val(*a).len();
                    acc(*a, like(*a, vec![gd[0] / n as f64; n]));
                }
                Op::SumLast(a) => {
                    let n = val(*a).last_dim();
                    let d = gd.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
                    acc(*a, like(*a, d));
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let rows = node.value.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).last_dim();
                        if needs(p) {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                            }
                            acc(p, like(p, d));
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        if needs(p) {
                            acc(p, like(p, gd[offset..offset + n].to_vec()));
                        }
                        offset += n;
                    }
                }
                Op::SliceLast(a, start, end) => {
                    let n = val(*a).last_dim();
                    let w = end - start;
                    let mut d = vec![0.0; val(*a).len()];
                    for (r, chunk) in gd.chunks(w).enumerate() {
                        d[r * n + start..r * n + end].copy_from_slice(chunk);
                    }
                    acc(*a, like(*a, d));
                }
                Op::SliceRows(a, start) => {
                    let va = val(*a);
                    let row = va.len() / va.shape()[0];
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(va.shape()));
                    for (s, g) in slot.data_mut()[start * row..start * row + gd.len()].iter_mut().zip(gd) {
                        *s += g;
                    }
                }
                Op::Reshape(a) => acc(*a, like(*a, gd.to_vec())),
                Op::MatMul(a, b) => {
                    let (sa, sb) = (val(*a).shape(), val(*b).shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if needs(*a) {
                        let mut d = vec![0.0; m * k];
                        gemm(m, n, k, gd, false, val(*b).data(), true, &mut d, false);
                        acc(*a, like(*a, d));
                    }
                    if needs(*b) {
                        let mut d = vec![0.0; k * n];
                        gemm(k, m, n, val(*a).data(), true, gd, false, &mut d, false);
                        acc(*b, like(*b, d));
                    }
                }
                Op::Conv2d { input, kernel, bias } => {
                    let si = val(*input).shape();
                    let (b, c, h, w) = (si[0], si[1], si[2], si[3]);
                    let o = val(*kernel).shape()[0];
                    let (oh, ow) = (h / 2, w / 2);
                    let rows = b * oh * ow;
                    let kk = c * KERNEL * KERNEL;
                    let g_rows = nchw_to_rows(gd, b, o, oh * ow);
                    if let Some(bv) = bias.filter(|&v| needs(v)) {
                        let mut d = vec![0.0; o];
                        for r in g_rows.chunks(o) {
                            for (s, v) in d.iter_mut().zip(r) {
                                *s += v;
                            }
                        }
                        acc(bv, like(bv, d));
                    }
                    if needs(*kernel) {
                        let cols = im2col(val(*input).data(), b, c, h, w);
                        let mut d = vec![0.0; o * kk];
                        gemm(o, rows, kk, &g_rows, true, &cols, false, &mut d, false);
                        acc(*kernel, like(*kernel, d));
                    }
                    if needs(*input) {
                        let mut dcols = vec![0.0; rows * kk];
                        gemm(rows, o, kk, &g_rows, false, val(*kernel).data(), false, &mut dcols, false);
                        acc(*input, like(*input, col2im(&dcols, b, c, h, w)));
                    }
                }
                Op::ConvTranspose2d { input, kernel, bias } => {
                    let si = val(*input).shape();
                    let (b, ci, h, w) = (si[0], si[1], si[2], si[3]);
                    let co = val(*kernel).shape()[1];
                    let (oh, ow) = (2 * h, 2 * w);
                    let ncols = co * KERNEL * KERNEL;
                    if let Some(bv) = bias.filter(|&v| needs(v)) {
                        let mut d = vec![0.0; co];
                        for (plane, chunk) in gd.chunks(oh * ow).enumerate() {
                            d[plane % co] += chunk.iter().sum::<f64>();
                        }
                        acc(bv, like(bv, d));
                    }
                    let gcols = im2col(gd, b, co, oh, ow);
                    if needs(*kernel) {
                        let x_rows = nchw_to_rows(val(*input).data(), b, ci, h * w);
                        let mut d = vec![0.0; ci * ncols];
                        gemm(ci, b * h * w, ncols, &x_rows, true, &gcols, false, &mut d, false);
                        acc(*kernel, like(*kernel, d));
                    }
                    if needs(*input) {
                        let mut d = vec![0.0; b * h * w * ci];
                        gemm(b * h * w, ncols, ci, &gcols, false, val(*kernel).data(), true, &mut d, false);
                        acc(*input, like(*input, rows_to_nchw(&d, b, ci, h * w)));
                    }
                }
                Op::LstmCell {
                    gates,
                    h,
                    c,
                    mask,
                    acts,
                } => {
                    let cv = val(*c).data();
                    let b = val(*gates).shape()[0];
                    let hd = val(*c).shape()[1];
                    let mut dg = vec![0.0; b * 4 * hd];
                    let mut dh = vec![0.0; b * hd];
                    let mut dc = vec![0.0; b * hd];
                    for r in 0..b {
                        let go = &gd[r * 2 * hd..(r + 1) * 2 * hd];
                        if mask.as_ref().is_some_and(|m| m[r] == 0.0) {
                            dh[r * hd..(r + 1) * hd].copy_from_slice(&go[..hd]);
                            dc[r * hd..(r + 1) * hd].copy_from_slice(&go[hd..]);
                            continue;
                        }
                        let a = &acts[r * 5 * hd..(r + 1) * 5 * hd];
                        let dgr = &mut dg[r * 4 * hd..(r + 1) * 4 * hd];
                        for j in 0..hd {
                            let (i, f, cand, o, tc) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j], a[4 * hd + j]);
                            let dh_new = go[j];
                            let dc_new = go[hd + j] + dh_new * o * (1.0 - tc * tc);
                            dgr[j] = dc_new * cand * i * (1.0 - i);
                            dgr[hd + j] = dc_new * cv[r * hd + j] * f * (1.0 - f);
                            dgr[2 * hd + j] = dc_new * i * (1.0 - cand * cand);
                            dgr[3 * hd + j] = dh_new * tc * o * (1.0 - o);
                            dc[r * hd + j] = dc_new * f;
                        }
                    }
                    if needs(*gates) {
                        acc(*gates, like(*gates, dg));
                    }
                    if needs(*h) {
                        acc(*h, like(*h, dh));
                    }
                    if needs(*c) {
                        acc(*c, like(*c, dc));
                    }
                }
            }
        }

        for (idx, node) in nodes.iter().enumerate() {
            let is_variable = node.requires_grad && matches!(node.op, Op::Leaf);
            if !is_variable {
                grads[idx] = None;
            } else if grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

/// Weights of a single-layer LSTM: `w_ih: [D_in, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM step on a batch: `x: [B, D_in]`, `h, c: [B, H]` → `(h', c')`.
pub fn lstm_step(g: &mut Graph, x: Var, h: Var, c: Var, p: LstmVars) -> Result<(Var, Var)> {
    let xw = g.matmul(x, p.w_ih)?;
    let hw = g.matmul(h, p.w_hh)?;
    let pre = g.add(xw, hw)?;
    let gates = g.add_bias(pre, p.bias)?;
    split_cell(g, gates, h, c, None)
}

/// Applies [`Graph::lstm_cell`] and splits the result into `(h', c')`.
pub fn split_cell(g: &mut Graph, gates: Var, h: Var, c: Var, mask: Option<Vec<f64>>) -> Result<(Var, Var)> {
    let hd = g.shape(c)[1];
    let hc = g.lstm_cell(gates, h, c, mask)?;
    let h_new = g.slice_last(hc, 0, hd)?;
    let c_new = g.slice_last(hc, hd, 2 * hd)?;
    Ok((h_new, c_new))
}
