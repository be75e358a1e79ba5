use std::collections::HashMap;

use super::kernels::{self, ConvGeometry};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How batch normalization obtains its statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with the statistics of the current batch. When `record`
    /// names the running-mean/variance buffers, a [`StatUpdate`] is queued.
    Batch { record: Option<(ParamId, ParamId)> },
    /// Normalize with stored running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// A pending running-statistics update produced by a training-mode
/// batch-norm. Applied by the caller once the step is accepted.
#[derive(Clone, Debug, PartialEq)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl StatUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        for (r, b) in store.get_mut(self.mean).values_mut().iter_mut().zip(&self.batch_mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in store.get_mut(self.var).values_mut().iter_mut().zip(&self.batch_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

enum Op {
    Leaf,
    MatMul { m: usize, k: usize, n: usize },
    Add,
    Sub,
    Mul,
    AddBias,
    Scale(f64),
    AddScalar,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Sum,
    Mean,
    Transpose { rows: usize, cols: usize },
    Reshape,
    SoftmaxXent { probs: Vec<f64>, labels: Vec<usize>, classes: usize },
    LogSoftmax { classes: usize },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, channels: usize, batch_stats: bool },
    MeanOf,
    Concat { sizes: Vec<usize>, outer: usize, inner: usize },
    Narrow { start: usize, len: usize, full: usize, outer: usize, inner: usize },
    Conv2d { geom: ConvGeometry, cols: Vec<f64>, cout: usize },
    DepthwiseConv2d { geom: ConvGeometry },
    MaxPool { argmax: Vec<usize> },
    AvgPool { geom: ConvGeometry },
    GlobalAvgPool { spatial: usize, channels: usize },
    Embedding { ids: Vec<usize>, width: usize },
    MulConst { factor: Vec<f64> },
    Pick { indices: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    vars: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Parameter gradients in the order the parameters were first read.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(p, g)| (*p, g))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.iter().map(|(p, _)| *p).collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|(_, g)| g.values())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn from_params(params: Vec<(ParamId, Tensor)>) -> Self {
        Gradients { vars: Vec::new(), params }
    }

    /// Elementwise scale of every parameter gradient.
    pub fn scale(&mut self, s: f64) {
        for (_, g) in &mut self.params {
            g.values_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Ordered record of one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it and the backward pass walks the record in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
    stat_updates: Vec<StatUpdate>,
    track_kinks: bool,
    kink_hash: u64,
    at_kink: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Drops every recorded node, cached parameter and pending stat update.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
        self.param_order.clear();
        self.stat_updates.clear();
        self.kink_hash = 0;
        self.at_kink = false;
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn set_track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    /// Fingerprint of every piecewise branch taken (relu signs, max-pool
    /// winners) and whether any relu input sat exactly on its kink.
    pub(crate) fn kink_signature(&self) -> (u64, bool) {
        (self.kink_hash, self.at_kink)
    }

    fn mix_kink(&mut self, v: u64) {
        self.kink_hash = (self.kink_hash ^ v).wrapping_mul(0x100_0000_01b3).rotate_left(5);
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericFault(name.to_string()));
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf_node(&mut self, value: Tensor, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericFault("leaf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant: receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf_node(value, false)
    }

    /// A free input whose gradient is reported through [`Gradients::var`].
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf_node(value, true)
    }

    /// Reads a parameter. Repeated reads within one pass share a node so
    /// the gradient accumulates once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.param_vars.get(&id) {
            return Ok(*v);
        }
        let v = self.leaf_node(store.get(id).clone(), store.is_trainable(id))?;
        self.param_vars.insert(id, v);
        self.param_order.push((id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(av.values(), bv.values(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { m, k, n }, vec![a, b], "matmul")
    }

    fn zip_op(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let out: Vec<f64> = av.values().iter().zip(bv.values()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        self.push(t, op, vec![a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = bv.len();
        if xv.shape().last() != Some(&n) {
            return Err(shape_err("add_bias", xv, bv));
        }
        let out: Vec<f64> = xv
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.values()[i % n])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, Op::AddBias, vec![x, bias], "add_bias")
    }

    fn map_op(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<f64> = xv.values().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, op, vec![x], name)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map_op(x, Op::Scale(s), "scale", |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map_op(x, Op::AddScalar, "add_scalar", |v| v + s)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, Op::Sigmoid, "sigmoid", kernels::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, Op::Tanh, "tanh", f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        if self.track_kinks {
            let mut hits = Vec::new();
            let mut zero = false;
            for v in self.value(x).values() {
                hits.push(if *v > 0.0 {
                    1
                } else if *v < 0.0 {
                    2
                } else {
                    zero = true;
                    3
                });
            }
            for h in hits {
                self.mix_kink(h);
            }
            self.at_kink |= zero;
        }
        self.map_op(x, Op::Relu, "relu", |v| v.max(0.0))
    }

    pub fn identity(&mut self, x: Var) -> Result<Var> {
        Ok(x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, Op::Exp, "exp", f64::exp)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Empty("mean of empty tensor".into()));
        }
        let s = xv.values().iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean, vec![x], "mean")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(shape_err("transpose", xv, xv));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xv.values()[r * cols + c];
            }
        }
        self.push(Tensor::new(vec![cols, rows], out)?, Op::Transpose { rows, cols }, vec![x], "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape, vec![x], "reshape")
    }

    /// Mean cross-entropy of row-wise softmax over `logits[rows, classes]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape()[0] != labels.len() || labels.is_empty() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = lv.shape()[1];
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (r, row) in lv.values().chunks(classes).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (c, v) in row.iter().enumerate() {
                probs[r * classes + c] = (v - max).exp() / z;
            }
            loss += z.ln() + max - row[labels[r]];
        }
        loss /= labels.len() as f64;
        let op = Op::SoftmaxXent {
            probs,
            labels: labels.to_vec(),
            classes,
        };
        self.push(Tensor::scalar(loss), op, vec![logits], "softmax_cross_entropy")
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let classes = *xv.shape().last().ok_or_else(|| Error::Empty("log_softmax of scalar".into()))?;
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.values().chunks(classes).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lz = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for (c, v) in row.iter().enumerate() {
                out[r * classes + c] = v - lz;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, Op::LogSoftmax { classes }, vec![x], "log_softmax")
    }

    /// Batch normalization over every axis but the last (channel) axis.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<Var> {
        let xv = self.value(x);
        let channels = *xv.shape().last().ok_or_else(|| Error::Empty("batch_norm of scalar".into()))?;
        if self.value(gamma).len() != channels || self.value(beta).len() != channels {
            return Err(shape_err("batch_norm", xv, self.value(gamma)));
        }
        let rows = xv.len() / channels;
        if rows == 0 {
            return Err(Error::Empty("batch_norm over empty batch".into()));
        }
        let (mean, var, batch_stats, record) = match mode {
            BnMode::Batch { record } => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for row in xv.values().chunks(channels) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                for row in xv.values().chunks(channels) {
                    for c in 0..channels {
                        let d = row[c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, true, record)
            }
            BnMode::Running { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(Error::Shape {
                        op: "batch_norm",
                        lhs: vec![channels],
                        rhs: vec![mean.len()],
                    });
                }
                (mean.to_vec(), var.to_vec(), false, None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.value(gamma).values(), self.value(beta).values());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, v) in xv.values().iter().enumerate() {
            let c = i % channels;
            xhat[i] = (v - mean[c]) * inv_std[c];
            out[i] = g[c] * xhat[i] + b[c];
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        if let Some((mean_id, var_id)) = record {
            self.stat_updates.push(StatUpdate {
                mean: mean_id,
                var: var_id,
                batch_mean: mean,
                batch_var: var,
            });
        }
        let op = Op::BatchNorm {
            xhat,
            inv_std,
            channels,
            batch_stats,
        };
        self.push(t, op, vec![x, gamma, beta], "batch_norm")
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Empty("mean_of with no inputs".into()))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for x in xs {
            let xv = self.value(*x);
            if xv.shape() != shape.as_slice() {
                return Err(shape_err("mean_of", self.value(first), xv));
            }
            for (o, v) in out.iter_mut().zip(xv.values()) {
                *o += v;
            }
        }
        let n = xs.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Tensor::new(shape, out)?, Op::MeanOf, xs.to_vec(), "mean_of")
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Empty("concat with no inputs".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidArgument(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for x in xs {
            let s = self.shape(*x);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", self.value(first), self.value(*x)));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (x, &s) in xs.iter().zip(&sizes) {
                let v = self.value(*x).values();
                out.extend_from_slice(&v[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat { sizes, outer, inner };
        self.push(Tensor::new(shape, out)?, op, xs.to_vec(), "concat")
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "narrow [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let full = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let v = self.value(x).values();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * full + start) * inner;
            out.extend_from_slice(&v[off..off + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let op = Op::Narrow {
            start,
            len,
            full,
            outer,
            inner,
        };
        self.push(Tensor::new(oshape, out)?, op, vec![x], "narrow")
    }

    fn nhwc(&self, x: Var, op: &'static str) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0, 0, 0],
            });
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// 2-D convolution, NHWC input, `[k, k, cin, cout]` kernel, "same"
    /// zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let [n, h, wd, cin] = self.nhwc(x, "conv2d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != ws[1] || ws[2] != cin || stride == 0 {
            return Err(shape_err("conv2d", self.value(x), self.value(w)));
        }
        let (k, cout) = (ws[0], ws[3]);
        let geom = ConvGeometry::same(n, h, wd, cin, k, stride);
        let cols = kernels::im2col(self.value(x).values(), &geom);
        let p = geom.out_positions();
        let mut out = vec![0.0; p * cout];
        kernels::gemm_acc(&cols, self.value(w).values(), &mut out, p, k * k * cin, cout);
        let t = Tensor::new(vec![n, geom.out_h, geom.out_w, cout], out)?;
        self.push(t, Op::Conv2d { geom, cols, cout }, vec![x, w], "conv2d")
    }

    /// Depthwise convolution with one `[k, k]` filter per channel.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let [n, h, wd, c] = self.nhwc(x, "depthwise_conv2d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[0] != ws[1] || ws[2] != c || stride == 0 {
            return Err(shape_err("depthwise_conv2d", self.value(x), self.value(w)));
        }
        let geom = ConvGeometry::same(n, h, wd, c, ws[0], stride);
        let (xv, wv) = (self.value(x).values(), self.value(w).values());
        let mut out = vec![0.0; geom.out_positions() * c];
        for b in 0..n {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let o = ((b * geom.out_h + oy) * geom.out_w + ox) * c;
                    for ky in 0..geom.kernel {
                        for kx in 0..geom.kernel {
                            if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                let s = ((b * h + y) * wd + xx) * c;
                                let f = (ky * geom.kernel + kx) * c;
                                for ch in 0..c {
                                    out[o + ch] += xv[s + ch] * wv[f + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, geom.out_h, geom.out_w, c], out)?;
        self.push(t, Op::DepthwiseConv2d { geom }, vec![x, w], "depthwise_conv2d")
    }

    /// Depthwise then pointwise convolution.
    pub fn separable_conv2d(&mut self, x: Var, depthwise: Var, pointwise: Var, stride: usize) -> Result<Var> {
        let d = self.depthwise_conv2d(x, depthwise, stride)?;
        self.conv2d(d, pointwise, 1)
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, h, w, c] = self.nhwc(x, "max_pool")?;
        let geom = ConvGeometry::same(n, h, w, c, kernel, stride);
        let xv = self.value(x).values();
        let mut out = vec![0.0; geom.out_positions() * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..n {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let o = ((b * geom.out_h + oy) * geom.out_w + ox) * c;
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = 0;
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                    let s = ((b * h + y) * w + xx) * c + ch;
                                    if xv[s] > best {
                                        best = xv[s];
                                        at = s;
                                    }
                                }
                            }
                        }
                        out[o + ch] = best;
                        argmax[o + ch] = at;
                    }
                }
            }
        }
        if self.track_kinks {
            for a in argmax.clone() {
                self.mix_kink(a as u64);
            }
        }
        let t = Tensor::new(vec![n, geom.out_h, geom.out_w, c], out)?;
        self.push(t, Op::MaxPool { argmax }, vec![x], "max_pool")
    }

    /// Average pooling over the in-bounds part of each window.
    pub fn avg_pool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, h, w, c] = self.nhwc(x, "avg_pool")?;
        let geom = ConvGeometry::same(n, h, w, c, kernel, stride);
        let xv = self.value(x).values();
        let mut out = vec![0.0; geom.out_positions() * c];
        for b in 0..n {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let o = ((b * geom.out_h + oy) * geom.out_w + ox) * c;
                    let mut count = 0usize;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                count += 1;
                                let s = ((b * h + y) * w + xx) * c;
                                for ch in 0..c {
                                    out[o + ch] += xv[s + ch];
                                }
                            }
                        }
                    }
                    for ch in 0..c {
                        out[o + ch] /= count as f64;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, geom.out_h, geom.out_w, c], out)?;
        self.push(t, Op::AvgPool { geom }, vec![x], "avg_pool")
    }

    /// `[n, h, w, c] -> [n, c]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.nhwc(x, "global_avg_pool")?;
        let spatial = h * w;
        let xv = self.value(x).values();
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            for p in 0..spatial {
                for ch in 0..c {
                    out[b * c + ch] += xv[(b * spatial + p) * c + ch];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= spatial as f64);
        let op = Op::GlobalAvgPool { spatial, channels: c };
        self.push(Tensor::new(vec![n, c], out)?, op, vec![x], "global_avg_pool")
    }

    /// Row lookup into `table[vocab, width]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape_err("embedding", tv, tv));
        }
        let (vocab, width) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= vocab {
                return Err(Error::InvalidArgument(format!("token id {id} outside vocabulary of {vocab}")));
            }
            out.extend_from_slice(&tv.values()[id * width..(id + 1) * width]);
        }
        let op = Op::Embedding {
            ids: ids.to_vec(),
            width,
        };
        self.push(Tensor::new(vec![ids.len(), width], out)?, op, vec![table], "embedding")
    }

    /// Elementwise product with a fixed mask (dropout with an explicit,
    /// already-scaled keep mask).
    pub fn dropout(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(shape_err("dropout", xv, mask));
        }
        let out: Vec<f64> = xv.values().iter().zip(mask.values()).map(|(a, b)| a * b).collect();
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::MulConst {
            factor: mask.values().to_vec(),
        };
        self.push(t, op, vec![x], "dropout")
    }

    /// Gathers the given flat indices into a 1-D tensor.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let v = xv
                .values()
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("pick index {i} of {}", xv.len())))?;
            out.push(*v);
        }
        let op = Op::Pick {
            indices: indices.to_vec(),
        };
        self.push(Tensor::new(vec![indices.len()], out)?, op, vec![x], "pick")
    }

    /// Reverse pass from a scalar `loss`. Clears the recorded nodes;
    /// pending stat updates are kept for [`Tape::take_stat_updates`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let lv = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::InvalidArgument("loss is not on this tape".into()))?;
        if lv.value.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.value.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad && !matches!(node.op, Op::Leaf) {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let mut params = Vec::with_capacity(self.param_order.len());
        for (id, v) in &self.param_order {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            let shape = self.nodes[v.0].value.shape().to_vec();
            let g = grads[v.0].take().unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
            grads[v.0] = Some(g.clone());
            params.push((*id, Tensor::new(shape, g)?));
        }
        let vars = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.needs_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        self.nodes.clear();
        self.param_vars.clear();
        self.param_order.clear();
        Ok(Gradients { vars, params })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        let val = |v: Var| self.nodes[v.0].value.values();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { m, k, n } => {
                let (a, b) = (ins[0], ins[1]);
                if wants(a) {
                    let bv = val(b);
                    acc(a, &mut |d| kernels::gemm_nt_acc(g, bv, d, *m, *n, *k));
                }
                if wants(b) {
                    let av = val(a);
                    acc(b, &mut |d| kernels::gemm_tn_acc(av, g, d, *m, *k, *n));
                }
            }
            Op::Add => {
                for &i in ins {
                    acc(i, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Sub => {
                acc(ins[0], &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(ins[1], &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddBias => {
                acc(ins[0], &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(ins[1], &mut |d| {
                    let n = d.len();
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                });
            }
            Op::Scale(s) => acc(ins[0], &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)),
            Op::AddScalar | Op::Reshape => acc(ins[0], &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Sigmoid => {
                let y = node.value.values();
                acc(ins[0], &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh => {
                let y = node.value.values();
                acc(ins[0], &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu => {
                let x = val(ins[0]);
                acc(ins[0], &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Exp => {
                let y = node.value.values();
                acc(ins[0], &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i];
                    }
                });
            }
            Op::Sum => acc(ins[0], &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean => acc(ins[0], &mut |d| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|d| *d += s);
            }),
            Op::Transpose { rows, cols } => acc(ins[0], &mut |d| {
                for r in 0..*rows {
                    for c in 0..*cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }),
            Op::SoftmaxXent { probs, labels, classes } => acc(ins[0], &mut |d| {
                let scale = g[0] / labels.len() as f64;
                for (r, &l) in labels.iter().enumerate() {
                    for c in 0..*classes {
                        let i = r * classes + c;
                        let onehot = if c == l { 1.0 } else { 0.0 };
                        d[i] += scale * (probs[i] - onehot);
                    }
                }
            }),
            Op::LogSoftmax { classes } => {
                let y = node.value.values();
                acc(ins[0], &mut |d| {
                    for (r, grow) in g.chunks(*classes).enumerate() {
                        let total: f64 = grow.iter().sum();
                        for c in 0..*classes {
                            let i = r * classes + c;
                            d[i] += grow[c] - y[i].exp() * total;
                        }
                    }
                });
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                channels,
                batch_stats,
            } => {
                let c = *channels;
                let rows = (g.len() / c) as f64;
                let gamma = val(ins[1]);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..g.len() {
                    sum_g[i % c] += g[i];
                    sum_gx[i % c] += g[i] * xhat[i];
                }
                acc(ins[0], &mut |d| {
                    for i in 0..d.len() {
                        let ch = i % c;
                        if *batch_stats {
                            d[i] += gamma[ch] * inv_std[ch] / rows
                                * (rows * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        } else {
                            d[i] += g[i] * gamma[ch] * inv_std[ch];
                        }
                    }
                });
                acc(ins[1], &mut |d| d.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s));
                acc(ins[2], &mut |d| d.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s));
            }
            Op::MeanOf => {
                let s = 1.0 / ins.len() as f64;
                for &i in ins {
                    acc(i, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
                }
            }
            Op::Concat { sizes, outer, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&i, &s) in ins.iter().zip(sizes) {
                    acc(i, &mut |d| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * s * inner;
                            for j in 0..s * inner {
                                d[dst + j] += g[src + j];
                            }
                        }
                    });
                    offset += s;
                }
            }
            Op::Narrow {
                start,
                len,
                full,
                outer,
                inner,
            } => acc(ins[0], &mut |d| {
                for o in 0..*outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for j in 0..len * inner {
                        d[dst + j] += g[src + j];
                    }
                }
            }),
            Op::Conv2d { geom, cols, cout } => {
                let (x, w) = (ins[0], ins[1]);
                let p = geom.out_positions();
                let kkc = geom.kernel * geom.kernel * geom.channels;
                if wants(w) {
                    acc(w, &mut |d| kernels::gemm_tn_acc(cols, g, d, p, kkc, *cout));
                }
                if wants(x) {
                    let wv = val(w);
                    let mut dcols = vec![0.0; p * kkc];
                    kernels::gemm_nt_acc(g, wv, &mut dcols, p, *cout, kkc);
                    acc(x, &mut |d| kernels::col2im_acc(&dcols, geom, d));
                }
            }
            Op::DepthwiseConv2d { geom } => {
                let (x, w) = (ins[0], ins[1]);
                let (xv, wv) = (val(x), val(w));
                let c = geom.channels;
                let each = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for b in 0..geom.batch {
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let o = ((b * geom.out_h + oy) * geom.out_w + ox) * c;
                                for ky in 0..geom.kernel {
                                    for kx in 0..geom.kernel {
                                        if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                            let s = ((b * geom.in_h + y) * geom.in_w + xx) * c;
                                            f(o, s, (ky * geom.kernel + kx) * c);
                                        }
                                    }
                                }
                            }
                        }
                    }
                };
                acc(x, &mut |d| {
                    each(&mut |o, s, f| {
                        for ch in 0..c {
                            d[s + ch] += g[o + ch] * wv[f + ch];
                        }
                    })
                });
                acc(w, &mut |d| {
                    each(&mut |o, s, f| {
                        for ch in 0..c {
                            d[f + ch] += g[o + ch] * xv[s + ch];
                        }
                    })
                });
            }
            Op::MaxPool { argmax } => acc(ins[0], &mut |d| {
                for (o, &s) in argmax.iter().enumerate() {
                    d[s] += g[o];
                }
            }),
            Op::AvgPool { geom } => acc(ins[0], &mut |d| {
                let c = geom.channels;
                for b in 0..geom.batch {
                    for oy in 0..geom.out_h {
                        for ox in 0..geom.out_w {
                            let o = ((b * geom.out_h + oy) * geom.out_w + ox) * c;
                            let mut srcs = Vec::with_capacity(geom.kernel * geom.kernel);
                            for ky in 0..geom.kernel {
                                for kx in 0..geom.kernel {
                                    if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                        srcs.push(((b * geom.in_h + y) * geom.in_w + xx) * c);
                                    }
                                }
                            }
                            let inv = 1.0 / srcs.len() as f64;
                            for s in srcs {
                                for ch in 0..c {
                                    d[s + ch] += g[o + ch] * inv;
                                }
                            }
                        }
                    }
                }
            }),
            Op::GlobalAvgPool { spatial, channels } => acc(ins[0], &mut |d| {
                let inv = 1.0 / *spatial as f64;
                for (i, dv) in d.iter_mut().enumerate() {
                    let b = i / (spatial * channels);
                    let ch = i % channels;
                    *dv += g[b * channels + ch] * inv;
                }
            }),
            Op::Embedding { ids, width } => acc(ins[0], &mut |d| {
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..*width {
                        d[id * width + j] += g[r * width + j];
                    }
                }
            }),
            Op::MulConst { factor } => acc(ins[0], &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * factor[i];
                }
            }),
            Op::Pick { indices } => acc(ins[0], &mut |d| {
                for (o, &i) in indices.iter().enumerate() {
                    d[i] += g[o];
                }
            }),
        }
    }
}
