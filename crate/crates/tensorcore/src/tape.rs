//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to compute its vector-Jacobian product. Nodes only reference
//! earlier nodes, so walking the tape from the loss down to index 0 is a
//! reverse topological traversal.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{col2im, gemm, im2col, nchw_to_rows, rows_to_nchw, PatchGeometry};
use crate::param::{BatchNormStats, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Lower clamp applied to predictions before taking logs in [`Tape::bce_sum`];
/// the upper clamp is `1 - PREDICTION_CLAMP`.
pub const PREDICTION_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Logistic,
    Tanh,
    Relu,
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Logistic => logistic(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Act(Var, Activation),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        geom: PatchGeometry,
        filters: usize,
    },
    /// `geom` describes the forward correlation from the (large) output image
    /// back onto the (small) input grid.
    ConvTranspose2d {
        x: Var,
        k: Var,
        b: Var,
        geom: PatchGeometry,
        in_channels: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Reshape(Var),
    RowSlice {
        x: Var,
        start: usize,
    },
    ColSlice {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
    BceSum {
        pred: Var,
        target: Vec<f64>,
    },
    KlTerm {
        mu: Var,
        log_var: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(TensorError::Dimension {
            op,
            axis: "rank",
            expected: a.rank(),
            found: b.rank(),
        });
    }
    for (&x, &y) in a.shape().iter().zip(b.shape()) {
        if x != y {
            return Err(TensorError::Dimension {
                op,
                axis: "extent",
                expected: x,
                found: y,
            });
        }
    }
    Ok(())
}

fn expect_dim(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TensorError::Dimension {
            op,
            axis,
            expected,
            found,
        })
    }
}

fn expect_vector(op: &'static str, axis: &'static str, t: &Tensor, len: usize) -> Result<()> {
    expect_dim(op, "rank", 1, t.rank())?;
    expect_dim(op, axis, len, t.shape()[0])
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records the current value of a parameter. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.push(value, op)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |v| v * factor, Op::Scale(a, factor))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        self.unary(a, |v| kind.apply(v), Op::Act(a, kind))
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Logistic)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// `out[n, o] = sum_i weight[o, i] * input[n, i] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, din] = self.value(x).dims2("linear")?;
        let [dout, win] = self.value(w).dims2("linear")?;
        expect_dim("linear", "input features", win, din)?;
        let mut out = vec![0.0; n * dout];
        gemm(n, din, dout, 1.0, self.value(x).data(), false, self.value(w).data(), true, 0.0, &mut out);
        if let Some(b) = b {
            let bias = self.value(b);
            expect_vector("linear", "output features", bias, dout)?;
            for row in out.chunks_exact_mut(dout) {
                for (o, bv) in row.iter_mut().zip(bias.data()) {
                    *o += bv;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, dout], out), Op::Linear { x, w, b }))
    }

    /// 2-D cross-correlation of `[N, C, H, W]` input with `[F, C, kh, kw]`
    /// kernels; zero padding on every side.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let [f, kc, kh, kw] = self.value(kernel).dims4(OP)?;
        expect_dim(OP, "channels", kc, c)?;
        expect_vector(OP, "filters", self.value(bias), f)?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "stride must be at least 1".into(),
            });
        }
        if h + 2 * padding < kh {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "height",
                expected: kh,
                found: h + 2 * padding,
            });
        }
        if w + 2 * padding < kw {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "width",
                expected: kw,
                found: w + 2 * padding,
            });
        }
        let geom = PatchGeometry {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad: padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let mut rows = vec![0.0; geom.rows() * f];
        gemm(geom.rows(), geom.cols(), f, 1.0, &cols, false, self.value(kernel).data(), true, 0.0, &mut rows);
        let plane = geom.out_h * geom.out_w;
        let mut out = rows_to_nchw(&rows, n, f, plane);
        for (ch, chunk) in out.chunks_exact_mut(plane).enumerate() {
            let b = self.value(bias).data()[ch % f];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::from_parts(vec![n, f, geom.out_h, geom.out_w], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                geom,
                filters: f,
            },
        ))
    }

    /// Transposed convolution (the input-gradient of [`Tape::conv2d`]) of a
    /// `[N, Cin, H, W]` input with `[Cin, Cout, kh, kw]` kernels. The output
    /// extent is `(H - 1) * stride - 2 * padding + kh + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let [n, cin, h, w] = self.value(x).dims4(OP)?;
        let [kc, cout, kh, kw] = self.value(kernel).dims4(OP)?;
        expect_dim(OP, "channels", kc, cin)?;
        expect_vector(OP, "filters", self.value(bias), cout)?;
        if stride == 0 || output_padding >= stride {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("need stride >= 1 and output_padding < stride, got {stride} and {output_padding}"),
            });
        }
        let out_h = ((h - 1) * stride + kh + output_padding)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or(TensorError::Dimension {
                op: OP,
                axis: "height",
                expected: 2 * padding + 1,
                found: (h - 1) * stride + kh + output_padding,
            })?;
        let out_w = ((w - 1) * stride + kw + output_padding)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or(TensorError::Dimension {
                op: OP,
                axis: "width",
                expected: 2 * padding + 1,
                found: (w - 1) * stride + kw + output_padding,
            })?;
        let geom = PatchGeometry {
            batch: n,
            channels: cout,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            pad: padding,
            out_h: h,
            out_w: w,
        };
        let x_rows = nchw_to_rows(self.value(x).data(), n, cin, h * w);
        let mut cols = vec![0.0; geom.rows() * geom.cols()];
        gemm(geom.rows(), cin, geom.cols(), 1.0, &x_rows, false, self.value(kernel).data(), false, 0.0, &mut cols);
        let mut out = vec![0.0; n * cout * out_h * out_w];
        col2im(&cols, &geom, &mut out);
        let plane = out_h * out_w;
        for (ch, chunk) in out.chunks_exact_mut(plane).enumerate() {
            let b = self.value(bias).data()[ch % cout];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let value = Tensor::from_parts(vec![n, cout, out_h, out_w], out);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                k: kernel,
                b: bias,
                geom,
                in_channels: cin,
            },
        ))
    }

    /// Per-channel batch normalization over axis 1 of a `[N, C]` or
    /// `[N, C, H, W]` input. Train mode normalizes by batch statistics and
    /// folds them into `stats`; eval mode reads `stats` only.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, stats: &mut BatchNormStats, mode: Mode) -> Result<Var> {
        const OP: &str = "batchnorm";
        let input = self.value(x);
        let (n, c, spatial) = match input.shape() {
            [n, c] => (*n, *c, 1),
            [n, c, h, w] => (*n, *c, h * w),
            _ => {
                return Err(TensorError::Dimension {
                    op: OP,
                    axis: "rank",
                    expected: 4,
                    found: input.rank(),
                })
            }
        };
        expect_vector(OP, "channels", self.value(gamma), c)?;
        expect_vector(OP, "channels", self.value(beta), c)?;
        expect_dim(OP, "channels", stats.channels(), c)?;
        if stats.epsilon <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("epsilon must be positive, got {}", stats.epsilon),
            });
        }
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(TensorError::DegenerateBatch { op: OP, batch: n });
        }
        let data = input.data();
        let count = (n * spatial) as f64;
        let mut mean = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (m, var) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    sum += data[(b * c + ch) * spatial..(b * c + ch + 1) * spatial].iter().sum::<f64>();
                }
                let m = sum / count;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += data[(b * c + ch) * spatial..(b * c + ch + 1) * spatial]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                let var = sq / count;
                let mo = stats.momentum;
                stats.mean[ch] = (1.0 - mo) * stats.mean[ch] + mo * m;
                stats.var[ch] = (1.0 - mo) * stats.var[ch] + mo * var * count / (count - 1.0);
                (m, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            mean[ch] = m;
            inv_std[ch] = 1.0 / (var + stats.epsilon).sqrt();
        }
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                for i in range {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::from_parts(input.shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Slice `len` entries along axis 0.
    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let rows = *t.shape().first().ok_or(TensorError::Dimension {
            op: "row_slice",
            axis: "rank",
            expected: 1,
            found: 0,
        })?;
        if len == 0 || start + len > rows {
            return Err(TensorError::InvalidArgument {
                op: "row_slice",
                reason: format!("rows {start}..{} out of 0..{rows}", start + len),
            });
        }
        let inner = t.len() / rows;
        let data = t.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        Ok(self.push(Tensor::from_parts(shape, data), Op::RowSlice { x, start }))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, d] = self.value(x).dims2("col_slice")?;
        if len == 0 || start + len > d {
            return Err(TensorError::InvalidArgument {
                op: "col_slice",
                reason: format!("columns {start}..{} out of 0..{d}", start + len),
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len);
        for row in src.chunks_exact(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![n, len], data), Op::ColSlice { x, start }))
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_rows",
            reason: "nothing to concatenate".into(),
        })?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(TensorError::Dimension {
                    op: "concat_rows",
                    axis: "trailing extents",
                    expected: tail.iter().product(),
                    found: t.shape().get(1..).map_or(0, |s| s.iter().product()),
                });
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Ok(self.push(Tensor::from_parts(shape, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Bernoulli log-likelihood `sum_i t_i ln y_i + (1 - t_i) ln(1 - y_i)`
    /// with predictions clamped to `[PREDICTION_CLAMP, 1 - PREDICTION_CLAMP]`.
    /// The gradient is evaluated at the clamped prediction.
    pub fn bce_sum(&mut self, target: &Tensor, pred: Var) -> Result<Var> {
        const OP: &str = "bce_sum";
        same_shape(OP, target, self.value(pred))?;
        if let Some((index, &value)) = target
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TensorError::InvalidTarget { op: OP, index, value });
        }
        let total = bce_sum_values(target.data(), self.value(pred).data());
        Ok(self.push(
            Tensor::scalar(total),
            Op::BceSum {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    /// `0.5 * sum_j (1 + log_var_j - mu_j^2 - exp(log_var_j))`, the negated
    /// KL divergence of `N(mu, diag(exp(log_var)))` from `N(0, I)`.
    pub fn kl_term(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        same_shape("kl_term", self.value(mu), self.value(log_var))?;
        let total = kl_term_values(self.value(mu).data(), self.value(log_var).data());
        Ok(self.push(Tensor::scalar(total), Op::KlTerm { mu, log_var }))
    }

    /// Accumulates `d loss / d param` into the `grad` of every parameter the
    /// loss depends on.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let len_of = |v: Var| self.value(v).len();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let slot = grad_slot(grads, v, g.len());
                    slot.iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let slot = grad_slot(grads, *a, g.len());
                for ((s, d), y) in slot.iter_mut().zip(g).zip(vb) {
                    *s += d * y;
                }
                let slot = grad_slot(grads, *b, g.len());
                for ((s, d), x) in slot.iter_mut().zip(g).zip(va) {
                    *s += d * x;
                }
            }
            Op::Scale(a, factor) => {
                let slot = grad_slot(grads, *a, g.len());
                slot.iter_mut().zip(g).for_each(|(s, d)| *s += factor * d);
            }
            Op::Exp(a) => {
                let out = node.value.data();
                let slot = grad_slot(grads, *a, g.len());
                for ((s, d), y) in slot.iter_mut().zip(g).zip(out) {
                    *s += d * y;
                }
            }
            Op::Act(a, kind) => {
                let out = node.value.data();
                let input = self.value(*a).data();
                let slot = grad_slot(grads, *a, g.len());
                match kind {
                    Activation::Logistic => {
                        for ((s, d), y) in slot.iter_mut().zip(g).zip(out) {
                            *s += d * y * (1.0 - y);
                        }
                    }
                    Activation::Tanh => {
                        for ((s, d), y) in slot.iter_mut().zip(g).zip(out) {
                            *s += d * (1.0 - y * y);
                        }
                    }
                    Activation::Relu => {
                        for ((s, d), x) in slot.iter_mut().zip(g).zip(input) {
                            if *x > 0.0 {
                                *s += d;
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let [n, din] = [self.value(*x).shape()[0], self.value(*x).shape()[1]];
                let dout = self.value(*w).shape()[0];
                let slot = grad_slot(grads, *x, n * din);
                gemm(n, dout, din, 1.0, g, false, self.value(*w).data(), false, 1.0, slot);
                let slot = grad_slot(grads, *w, dout * din);
                gemm(dout, n, din, 1.0, g, true, self.value(*x).data(), false, 1.0, slot);
                if let Some(b) = b {
                    let slot = grad_slot(grads, *b, dout);
                    for row in g.chunks_exact(dout) {
                        slot.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                    }
                }
            }
            Op::Conv2d {
                x,
                k,
                b,
                geom,
                filters,
            } => {
                let f = *filters;
                let plane = geom.out_h * geom.out_w;
                let dy_rows = nchw_to_rows(g, geom.batch, f, plane);
                let cols = im2col(self.value(*x).data(), geom);
                let slot = grad_slot(grads, *k, f * geom.cols());
                gemm(f, geom.rows(), geom.cols(), 1.0, &dy_rows, true, &cols, false, 1.0, slot);
                let slot = grad_slot(grads, *b, f);
                for row in dy_rows.chunks_exact(f) {
                    slot.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                }
                let mut dcols = cols;
                gemm(geom.rows(), f, geom.cols(), 1.0, &dy_rows, false, self.value(*k).data(), false, 0.0, &mut dcols);
                let slot = grad_slot(grads, *x, len_of(*x));
                col2im(&dcols, geom, slot);
            }
            Op::ConvTranspose2d {
                x,
                k,
                b,
                geom,
                in_channels,
            } => {
                let cin = *in_channels;
                let cout = geom.channels;
                let dcols = im2col(g, geom);
                let x_rows = nchw_to_rows(self.value(*x).data(), geom.batch, cin, geom.out_h * geom.out_w);
                let slot = grad_slot(grads, *k, cin * geom.cols());
                gemm(cin, geom.rows(), geom.cols(), 1.0, &x_rows, true, &dcols, false, 1.0, slot);
                let mut dx_rows = vec![0.0; geom.rows() * cin];
                gemm(geom.rows(), geom.cols(), cin, 1.0, &dcols, false, self.value(*k).data(), true, 0.0, &mut dx_rows);
                let dx = rows_to_nchw(&dx_rows, geom.batch, cin, geom.out_h * geom.out_w);
                let slot = grad_slot(grads, *x, dx.len());
                slot.iter_mut().zip(&dx).for_each(|(s, d)| *s += d);
                let plane = geom.height * geom.width;
                let slot = grad_slot(grads, *b, cout);
                for (ch, chunk) in g.chunks_exact(plane).enumerate() {
                    slot[ch % cout] += chunk.iter().sum::<f64>();
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.value(*x).shape();
                let (n, c) = (shape[0], shape[1]);
                let spatial = g.len() / (n * c);
                let count = (n * spatial) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                        for i in r {
                            sum_dy[ch] += g[i];
                            sum_dy_xhat[ch] += g[i] * xhat[i];
                        }
                    }
                }
                let gv = self.value(*gamma).data().to_vec();
                let slot = grad_slot(grads, *x, g.len());
                for b in 0..n {
                    for ch in 0..c {
                        let scale = gv[ch] * inv_std[ch];
                        let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                        if *train {
                            for i in r {
                                slot[i] += scale * (g[i] - sum_dy[ch] / count - xhat[i] * sum_dy_xhat[ch] / count);
                            }
                        } else {
                            for i in r {
                                slot[i] += scale * g[i];
                            }
                        }
                    }
                }
                let slot = grad_slot(grads, *gamma, c);
                slot.iter_mut().zip(&sum_dy_xhat).for_each(|(s, d)| *s += d);
                let slot = grad_slot(grads, *beta, c);
                slot.iter_mut().zip(&sum_dy).for_each(|(s, d)| *s += d);
            }
            Op::Reshape(a) => {
                let slot = grad_slot(grads, *a, g.len());
                slot.iter_mut().zip(g).for_each(|(s, d)| *s += d);
            }
            Op::RowSlice { x, start } => {
                let total = len_of(*x);
                let inner = total / self.value(*x).shape()[0];
                let slot = grad_slot(grads, *x, total);
                slot[start * inner..start * inner + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, d)| *s += d);
            }
            Op::ColSlice { x, start } => {
                let d = self.value(*x).shape()[1];
                let len = node.value.shape()[1];
                let slot = grad_slot(grads, *x, len_of(*x));
                for (row, grow) in slot.chunks_exact_mut(d).zip(g.chunks_exact(len)) {
                    row[*start..start + len].iter_mut().zip(grow).for_each(|(s, v)| *s += v);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = len_of(p);
                    let slot = grad_slot(grads, p, n);
                    slot.iter_mut().zip(&g[offset..offset + n]).for_each(|(s, d)| *s += d);
                    offset += n;
                }
            }
            Op::Sum(a) => {
                let slot = grad_slot(grads, *a, len_of(*a));
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
            Op::BceSum { pred, target } => {
                let y = self.value(*pred).data();
                let slot = grad_slot(grads, *pred, y.len());
                for ((s, &t), &p) in slot.iter_mut().zip(target).zip(y) {
                    let yc = p.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
                    *s += g[0] * (t / yc - (1.0 - t) / (1.0 - yc));
                }
            }
            Op::KlTerm { mu, log_var } => {
                let m = self.value(*mu).data();
                let slot = grad_slot(grads, *mu, m.len());
                slot.iter_mut().zip(m).for_each(|(s, v)| *s -= g[0] * v);
                let lv = self.value(*log_var).data();
                let slot = grad_slot(grads, *log_var, lv.len());
                slot.iter_mut().zip(lv).for_each(|(s, v)| *s += g[0] * 0.5 * (1.0 - v.exp()));
            }
        }
    }
}

/// Untaped evaluation of the clamped Bernoulli log-likelihood sum.
pub fn bce_sum_values(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let y = p.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
            t * y.ln() + (1.0 - t) * (1.0 - y).ln()
        })
        .sum()
}

/// Untaped evaluation of the Gaussian KL term; see [`Tape::kl_term`].
pub fn kl_term_values(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}
