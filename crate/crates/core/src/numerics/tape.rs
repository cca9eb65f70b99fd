//! Computation record for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and enough information
//! to replay its local vector-Jacobian product. Nodes are stored in creation
//! order, which is already a topological order, so the backward pass is a
//! single reverse sweep.

use super::tensor::{split_axis, Tensor};
use super::NumericsError;

/// Log argument floor used by [`Tape::cross_entropy`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Threshold(Var, f64),
    Softmax { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Transpose(Var),
    Reshape(Var),
    SlicePad { x: Var, axis: usize, start: isize },
    RowNormalize(Var),
    CausalConv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    },
    CrossEntropy { probs: Var, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A single-writer computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), NumericsError> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(NumericsError::Axis { op, axis, rank });
        }
        Ok(())
    }

    // ---------------------------------------------------------------- ops

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add(a, b), rg))
    }

    /// Adds a vector along the trailing axis: `[.., n] + [n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(&shape, data)?, Op::AddBias(x, bias), rg))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul(a, b), rg))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        if self.value(s).len() != 1 {
            return Err(self.shape_err("mul_scalar", x, s));
        }
        let k = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Tensor::new(&shape, data)?, Op::MulScalar(x, s), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = map_tensor(self.value(x), |v| v * k);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = map_tensor(self.value(x), |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Keeps entries `>= theta`, zeroes the rest.
    pub fn threshold(&mut self, x: Var, theta: f64) -> Var {
        let value = map_tensor(self.value(x), |v| if v >= theta { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(value, Op::Threshold(x, theta), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n)
                    .map(|k| src[base + k * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (src[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..n {
                    out[base + k * inner] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = *inputs.first().ok_or(NumericsError::Empty("concat"))?;
        self.check_axis("concat", first, axis)?;
        let base_shape = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(self.shape_err("concat", first, v));
            }
            total += s[axis];
        }
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let chunk = n * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("sum", x, axis)?;
        let (shape, out) = self.reduce(x, axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Sum { x, axis }, rg))
    }

    /// Averages over `axis`, removing it from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("mean", x, axis)?;
        let n = self.shape(x)[axis] as f64;
        let (shape, mut out) = self.reduce(x, axis);
        out.iter_mut().for_each(|v| *v /= n);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mean { x, axis }, rg))
    }

    fn reduce(&self, x: Var, axis: usize) -> (Vec<usize>, Vec<f64>) {
        let src_shape = self.shape(x);
        let (outer, n, inner) = split_axis(src_shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = src_shape.to_vec();
        shape.remove(axis);
        (shape, out)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumericsError::Axis {
                op: "transpose",
                axis: 1,
                rank: s.len(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let value = transpose_raw(self.value(x).data(), r, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[c, r], value)?, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Window of `len` positions along `axis` starting at `start`.
    ///
    /// Positions outside `0..shape[axis]` read as zero, so a negative `start`
    /// left-pads and an overlong window right-pads.
    pub fn slice_pad(
        &mut self,
        x: Var,
        axis: usize,
        start: isize,
        len: usize,
    ) -> Result<Var, NumericsError> {
        self.check_axis("slice_pad", x, axis)?;
        let src_shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&src_shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for k in 0..len {
                let s = start + k as isize;
                if s < 0 || s as usize >= n {
                    continue;
                }
                let from = (o * n + s as usize) * inner;
                let to = (o * len + k) * inner;
                out[to..to + inner].copy_from_slice(&src[from..from + inner]);
            }
        }
        let mut shape = src_shape;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::SlicePad { x, axis, start },
            rg,
        ))
    }

    /// Divides each row of a non-negative matrix by its sum; zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumericsError::Axis {
                op: "row_normalize",
                axis: 1,
                rank: s.len(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let total: f64 = row.iter().sum();
            if total != 0.0 {
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o = v / total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[r, c], out)?, Op::RowNormalize(x), rg))
    }

    /// Causal dilated 1-D convolution.
    ///
    /// `input` is `[C_in, L]` or `[B, C_in, L]`, `kernel` is `[C_out, C_in, k]`
    /// and `bias` is `[C_out]`. The input is left-padded with `(k-1)*dilation`
    /// zeros so the output keeps length `L`, and kernel tap `k-1` lines up with
    /// the current time step.
    pub fn causal_conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    ) -> Result<Var, NumericsError> {
        let in_shape = self.shape(input).to_vec();
        let k_shape = self.shape(kernel).to_vec();
        let (batch, c_in, len) = match in_shape.as_slice() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => return Err(self.shape_err("causal_conv1d", input, kernel)),
        };
        if k_shape.len() != 3 || k_shape[1] != c_in || k_shape[2] == 0 || dilation == 0 {
            return Err(self.shape_err("causal_conv1d", input, kernel));
        }
        let (c_out, taps) = (k_shape[0], k_shape[2]);
        if self.shape(bias) != [c_out] {
            return Err(self.shape_err("causal_conv1d", kernel, bias));
        }
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; batch * c_out * len];
        for bi in 0..batch {
            for o in 0..c_out {
                let dst = &mut out[(bi * c_out + o) * len..(bi * c_out + o + 1) * len];
                dst.iter_mut().for_each(|v| *v = b[o]);
                for c in 0..c_in {
                    let src = &x[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                    for j in 0..taps {
                        let wv = w[(o * c_in + c) * taps + j];
                        if wv == 0.0 {
                            continue;
                        }
                        let lag = (taps - 1 - j) * dilation;
                        if lag >= len {
                            continue;
                        }
                        for (d, s) in dst[lag..].iter_mut().zip(&src[..len - lag]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        let shape = if in_shape.len() == 2 {
            vec![c_out, len]
        } else {
            vec![batch, c_out, len]
        };
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::CausalConv1d {
                input,
                kernel,
                bias,
                dilation,
            },
            rg,
        ))
    }

    /// Mean categorical cross-entropy between probability rows and one-hot
    /// targets, with the log argument clamped at [`LOG_CLAMP`].
    pub fn cross_entropy(&mut self, probs: Var, target: Tensor) -> Result<Var, NumericsError> {
        let ps = self.shape(probs);
        if ps.len() != 2 || ps != target.shape() {
            return Err(NumericsError::Shape {
                op: "cross_entropy",
                lhs: ps.to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = ps[0] as f64;
        let loss = -self
            .value(probs)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, y)| if *y == 0.0 { 0.0 } else { y * p.max(LOG_CLAMP).ln() })
            .sum::<f64>()
            / n;
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, target }, rg))
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`, adding into leaf gradients.
    ///
    /// Leaf gradients persist across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    self.accumulate(grads, *a, |acc| add_into(acc, &da));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    self.accumulate(grads, *b, |acc| add_into(acc, &db));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        self.accumulate(grads, v, |acc| add_into(acc, g));
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.rg(*x) {
                    self.accumulate(grads, *x, |acc| add_into(acc, g));
                }
                if self.rg(*bias) {
                    let n = self.value(*bias).len();
                    self.accumulate(grads, *bias, |acc| {
                        for (j, gv) in g.iter().enumerate() {
                            acc[j % n] += gv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    self.accumulate(grads, *a, |acc| {
                        for ((d, gv), y) in acc.iter_mut().zip(g).zip(bv) {
                            *d += gv * y;
                        }
                    });
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    self.accumulate(grads, *b, |acc| {
                        for ((d, gv), x) in acc.iter_mut().zip(g).zip(av) {
                            *d += gv * x;
                        }
                    });
                }
            }
            Op::MulScalar(x, s) => {
                let k = self.value(*s).data()[0];
                if self.rg(*x) {
                    self.accumulate(grads, *x, |acc| {
                        acc.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * k)
                    });
                }
                if self.rg(*s) {
                    let dot: f64 = g.iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    self.accumulate(grads, *s, |acc| acc[0] += dot);
                }
            }
            Op::Scale(x, k) => {
                self.accumulate(grads, *x, |acc| {
                    acc.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * k)
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for ((d, gv), v) in acc.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Threshold(x, theta) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for ((d, gv), v) in acc.iter_mut().zip(g).zip(xv) {
                        if *v >= *theta {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                self.accumulate(grads, *x, |acc| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let dot: f64 =
                                (0..n).map(|k| g[base + k * inner] * y[base + k * inner]).sum();
                            for k in 0..n {
                                let idx = base + k * inner;
                                acc[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.rg(v) {
                        self.accumulate(grads, v, |acc| {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * n * inner;
                                add_into(&mut acc[dst..dst + n * inner], &g[src..src + n * inner]);
                            }
                        });
                    }
                    offset += n;
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let factor = if matches!(node.op, Op::Mean { .. }) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                self.accumulate(grads, *x, |acc| {
                    for o in 0..outer {
                        for k in 0..n {
                            let dst = (o * n + k) * inner;
                            for i in 0..inner {
                                acc[dst + i] += g[o * inner + i] * factor;
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let gt = transpose_raw(g, s[0], s[1]);
                self.accumulate(grads, *x, |acc| add_into(acc, &gt));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |acc| add_into(acc, g));
            }
            Op::SlicePad { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |acc| {
                    for o in 0..outer {
                        for k in 0..len {
                            let s = start + k as isize;
                            if s < 0 || s as usize >= n {
                                continue;
                            }
                            let dst = (o * n + s as usize) * inner;
                            let src = (o * len + k) * inner;
                            add_into(&mut acc[dst..dst + inner], &g[src..src + inner]);
                        }
                    }
                });
            }
            Op::RowNormalize(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let y = node.value.data();
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for i in 0..r {
                        let total: f64 = xv[i * c..(i + 1) * c].iter().sum();
                        if total == 0.0 {
                            continue;
                        }
                        let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                        for j in 0..c {
                            acc[i * c + j] += (g[i * c + j] - dot) / total;
                        }
                    }
                });
            }
            Op::CausalConv1d {
                input,
                kernel,
                bias,
                dilation,
            } => {
                self.conv_backward(*input, *kernel, *bias, *dilation, g, grads);
            }
            Op::CrossEntropy { probs, target } => {
                let p = self.value(*probs).data();
                let n = self.shape(*probs)[0] as f64;
                let seed = g[0];
                self.accumulate(grads, *probs, |acc| {
                    for ((d, pv), y) in acc.iter_mut().zip(p).zip(target.data()) {
                        if *y != 0.0 && *pv > LOG_CLAMP {
                            *d -= seed * y / (pv * n);
                        }
                    }
                });
            }
        }
    }

    fn conv_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let in_shape = self.shape(input);
        let (batch, c_in, len) = match in_shape {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => unreachable!("validated in forward"),
        };
        let k_shape = self.shape(kernel);
        let (c_out, taps) = (k_shape[0], k_shape[2]);
        let x = self.value(input).data();
        let w = self.value(kernel).data();

        if self.rg(bias) {
            self.accumulate(grads, bias, |acc| {
                for bi in 0..batch {
                    for (o, a) in acc.iter_mut().enumerate() {
                        let row = &g[(bi * c_out + o) * len..(bi * c_out + o + 1) * len];
                        *a += row.iter().sum::<f64>();
                    }
                }
            });
        }
        if self.rg(kernel) {
            self.accumulate(grads, kernel, |acc| {
                for bi in 0..batch {
                    for o in 0..c_out {
                        let go = &g[(bi * c_out + o) * len..(bi * c_out + o + 1) * len];
                        for c in 0..c_in {
                            let src = &x[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                            for j in 0..taps {
                                let lag = (taps - 1 - j) * dilation;
                                if lag >= len {
                                    continue;
                                }
                                let dot: f64 =
                                    go[lag..].iter().zip(&src[..len - lag]).map(|(a, b)| a * b).sum();
                                acc[(o * c_in + c) * taps + j] += dot;
                            }
                        }
                    }
                }
            });
        }
        if self.rg(input) {
            self.accumulate(grads, input, |acc| {
                for bi in 0..batch {
                    for o in 0..c_out {
                        let go = &g[(bi * c_out + o) * len..(bi * c_out + o + 1) * len];
                        for c in 0..c_in {
                            let dst = &mut acc[(bi * c_in + c) * len..(bi * c_in + c + 1) * len];
                            for j in 0..taps {
                                let wv = w[(o * c_in + c) * taps + j];
                                let lag = (taps - 1 - j) * dilation;
                                if lag >= len || wv == 0.0 {
                                    continue;
                                }
                                for (d, gv) in dst[..len - lag].iter_mut().zip(&go[lag..]) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                }
            });
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.rg(v) {
            return;
        }
        let len = self.value(v).len();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape(), data).expect("shape preserved")
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
