//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value; [`Graph::backward`] walks the tape in reverse.
//! Spatial ops use `(C, H, W)` layout where `H` is the radial axis and `W` the
//! azimuthal one: convolutions pad `W` circularly and `H` with zeros.

use crate::error::{shape_err, AutodiffError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose forward value is computed by the caller and whose adjoint is
/// supplied by the implementation.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input given the output gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Softmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Sum(Var),
    SumAxis0(Var),
    MulBcast(Var, Var),
    Transpose2d(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, col: Option<Tensor> },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    ScatterMax { x: Var, argmax: Vec<u32> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Max(..) => "max",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MatMul(..) => "matmul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Sum(_) => "sum",
            Op::SumAxis0(_) => "sum_axis0",
            Op::MulBcast(..) => "mul_bcast",
            Op::Transpose2d(_) => "transpose2d",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d_polar",
            Op::MaxPool2 { .. } => "maxpool2d",
            Op::Upsample2(_) => "upsample_nearest",
            Op::ScatterMax { .. } => "scatter_max",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients of a scalar with respect to the leaves of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf (input or parameter); `None` if it did not
    /// influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into `acc`, which is indexed like the store.
    /// A parameter used several times in the graph contributes every use.
    pub fn accumulate_into(&self, acc: &mut [Tensor]) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                acc[id.index()].add_assign(g);
            }
        }
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn spatial(op: &str, t: &Tensor) -> Result<(usize, usize, usize), AutodiffError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err(format!("{op}: expected (C, H, W), got {s:?}"))),
    }
}

/// `(outer, n, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, AutodiffError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Input, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input_tracked(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Input, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Param, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.push((id, v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(&[a, b]);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("max", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), f64::max);
        let ng = self.needs(&[a, b]);
        self.push(v, Op::Max(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x * s);
        let ng = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x + c);
        let ng = self.needs(&[a]);
        self.push(v, Op::Shift(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).map(sigmoid);
        let ng = self.needs(&[a]);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// `(m, k) · (k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(shape_err(format!("matmul: {sa:?} · {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let ng = self.needs(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng)
    }

    /// `(n, c) + (c)` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = match (tx.shape(), tb.shape()) {
            (&[_, c], &[c2]) if c == c2 => c,
            (sx, sb) => return Err(shape_err(format!("add_row_bias: {sx:?} + {sb:?}"))),
        };
        let bias = tb.data();
        let mut v = tx.clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x += bias[i % c];
        }
        let ng = self.needs(&[x, b]);
        self.push(v, Op::AddRowBias(x, b), ng)
    }

    /// `x · w + b` with `x: (n, in)`, `w: (in, out)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return Err(shape_err(format!("softmax: axis {axis} for shape {:?}", t.shape())));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * n + d) * inner + i;
                let m = (0..n).map(|d| src[idx(d)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for d in 0..n {
                    let e = (src[idx(d)] - m).exp();
                    out[idx(d)] = e;
                    z += e;
                }
                for d in 0..n {
                    out[idx(d)] /= z;
                }
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.needs(&[x]);
        self.push(v, Op::Softmax { x, axis }, ng)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.value(*xs.first().ok_or_else(|| shape_err("concat: no inputs"))?).shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err(format!("concat: axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(format!("concat: {s:?} vs {first:?} along {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let ng = self.needs(xs);
        self.push(Tensor::new(shape, out)?, Op::Concat { xs: xs.to_vec(), axis }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(v, Op::Sum(x), ng)
    }

    /// Sum over the leading axis: `(a, rest..) -> (1, rest..)`.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let a = t.shape()[0];
        let rest = t.len() / a;
        let mut out = vec![0.0; rest];
        for chunk in t.data().chunks_exact(rest) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        let ng = self.needs(&[x]);
        self.push(Tensor::new(shape, out)?, Op::SumAxis0(x), ng)
    }

    /// `(c, rest..) * (1, rest..)` broadcast over the leading axis.
    pub fn mul_bcast(&mut self, a: Var, w: Var) -> Result<Var, AutodiffError> {
        let (ta, tw) = (self.value(a), self.value(w));
        if tw.shape()[0] != 1 || ta.shape()[1..] != tw.shape()[1..] {
            return Err(shape_err(format!("mul_bcast: {:?} * {:?}", ta.shape(), tw.shape())));
        }
        let rest = tw.len();
        let mut v = ta.clone();
        for chunk in v.data_mut().chunks_exact_mut(rest) {
            for (x, s) in chunk.iter_mut().zip(tw.data()) {
                *x *= s;
            }
        }
        let ng = self.needs(&[a, w]);
        self.push(v, Op::MulBcast(a, w), ng)
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let (r, c) = match *t.shape() {
            [r, c] => (r, c),
            ref s => return Err(shape_err(format!("transpose2d: {s:?}"))),
        };
        let v = Tensor::new(vec![c, r], transpose(t.data(), r, c))?;
        let ng = self.needs(&[x]);
        self.push(v, Op::Transpose2d(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(&[x]);
        self.push(v, Op::Reshape(x), ng)
    }

    /// Polar convolution of `x: (C, H, W)` with `w: (O, C, k, k)`, `k` odd.
    ///
    /// `W` wraps around; `H` is zero-padded. With stride 2 both spatial
    /// sizes must be even and are halved.
    pub fn conv2d_polar(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var, AutodiffError> {
        let (c, h, wd) = spatial("conv2d_polar", self.value(x))?;
        let (o, k) = match *self.value(w).shape() {
            [o, c2, k, k2] if c2 == c && k == k2 && k % 2 == 1 => (o, k),
            ref s => return Err(shape_err(format!("conv2d_polar: kernel {s:?} for {c} input channels"))),
        };
        if !(stride == 1 || stride == 2) || h % stride != 0 || wd % stride != 0 {
            return Err(shape_err(format!("conv2d_polar: stride {stride} for {h}x{wd}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(shape_err(format!("conv2d_polar: bias {:?} for {o} outputs", self.value(b).shape())));
            }
        }
        let (ho, wo) = (h / stride, wd / stride);
        let ckk = c * k * k;
        let col = if k == 1 && stride == 1 { None } else { Some(im2col(self.value(x).data(), c, h, wd, k, stride)) };
        let col_data = col.as_deref().unwrap_or(self.value(x).data());
        let mut out = vec![0.0; o * ho * wo];
        if let Some(b) = b {
            for (row, &bv) in out.chunks_exact_mut(ho * wo).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        gemm(o, ckk, ho * wo, self.value(w).data(), false, col_data, false, &mut out, b.is_some());
        let col = col.map(|d| Tensor::new(vec![ckk, ho * wo], d)).transpose()?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(Tensor::new(vec![o, ho, wo], out)?, Op::Conv2d { x, w, b, stride, col }, ng)
    }

    /// 2x2 max pooling; ties go to the first element in row-major order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (c, h, w) = spatial("maxpool2d", self.value(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("maxpool2d: odd spatial size {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0u32; c * ho * wo];
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
                        if best == usize::MAX || src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = (ch * ho + i) * wo + j;
                    out[o] = src[best];
                    argmax[o] = best as u32;
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::new(vec![c, ho, wo], out)?, Op::MaxPool2 { x, argmax }, ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (c, h, w) = spatial("upsample_nearest", self.value(x))?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    out[(ch * h2 + i) * w2 + j] = src[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::new(vec![c, h2, w2], out)?, Op::Upsample2(x), ng)
    }

    /// Channelwise max of `x: (n, c)` rows grouped by `ids` into `n_groups`
    /// rows; empty groups are zero.
    pub fn scatter_max(&mut self, x: Var, ids: &[usize], n_groups: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let (n, c) = match *t.shape() {
            [n, c] => (n, c),
            ref s => return Err(shape_err(format!("scatter_max: expected (n, c), got {s:?}"))),
        };
        if ids.len() != n {
            return Err(shape_err(format!("scatter_max: {} ids for {n} rows", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_groups) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: n_groups });
        }
        if n > u32::MAX as usize - 1 {
            return Err(shape_err("scatter_max: too many rows"));
        }
        let src = t.data();
        let mut out = vec![0.0; n_groups * c];
        let mut argmax = vec![u32::MAX; n_groups * c];
        for (row, &g) in ids.iter().enumerate() {
            for ch in 0..c {
                let o = g * c + ch;
                let v = src[row * c + ch];
                if argmax[o] == u32::MAX || v > out[o] {
                    out[o] = v;
                    argmax[o] = row as u32;
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::new(vec![n_groups, c], out)?, Op::ScatterMax { x, argmax }, ng)
    }

    /// Records a caller-computed value with a custom adjoint.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var, AutodiffError> {
        let ng = self.needs(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op }, ng)
    }

    /// Gradients of the one-element node `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("backward: loss has shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AutodiffError> {
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, g.zip_map(tb, |gv, bv| gv * bv));
                self.acc(grads, *b, g.zip_map(ta, |gv, av| gv * av));
            }
            Op::Max(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mask = ta.zip_map(tb, |x, y| if x >= y { 1.0 } else { 0.0 });
                self.acc(grads, *a, g.zip_map(&mask, |gv, m| gv * m));
                self.acc(grads, *b, g.zip_map(&mask, |gv, m| gv * (1.0 - m)));
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * s)),
            Op::Shift(a) => self.acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, false);
                    self.acc(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, false);
                    self.acc(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::AddRowBias(x, b) => {
                self.acc(grads, *x, g.clone());
                let c = self.value(*b).len();
                let mut db = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % c] += v;
                }
                self.acc(grads, *b, Tensor::new(vec![c], db)?);
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |d: usize| (o * n + d) * inner + i;
                        let dot: f64 = (0..n).map(|d| gd[idx(d)] * yd[idx(d)]).sum();
                        for d in 0..n {
                            dx[idx(d)] = yd[idx(d)] * (gd[idx(d)] - dot);
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let shape = self.value(x).shape().to_vec();
                    let n = shape[*axis];
                    let mut part = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        part.extend_from_slice(&g.data()[start..start + n * inner]);
                    }
                    offset += n;
                    self.acc(grads, x, Tensor::new(shape, part)?);
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.acc(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::SumAxis0(x) => {
                let shape = self.value(*x).shape().to_vec();
                let mut d = Vec::with_capacity(shape.iter().product());
                for _ in 0..shape[0] {
                    d.extend_from_slice(g.data());
                }
                self.acc(grads, *x, Tensor::new(shape, d)?);
            }
            Op::MulBcast(a, w) => {
                let (ta, tw) = (self.value(*a), self.value(*w));
                let rest = tw.len();
                let mut da = g.clone();
                for chunk in da.data_mut().chunks_exact_mut(rest) {
                    for (x, s) in chunk.iter_mut().zip(tw.data()) {
                        *x *= s;
                    }
                }
                self.acc(grads, *a, da);
                let mut dw = vec![0.0; rest];
                for (gc, ac) in g.data().chunks_exact(rest).zip(ta.data().chunks_exact(rest)) {
                    for ((o, gv), av) in dw.iter_mut().zip(gc).zip(ac) {
                        *o += gv * av;
                    }
                }
                self.acc(grads, *w, Tensor::new(tw.shape().to_vec(), dw)?);
            }
            Op::Transpose2d(x) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                self.acc(grads, *x, Tensor::new(vec![c, r], transpose(g.data(), r, c))?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, g.clone().reshaped(&shape)?);
            }
            Op::Conv2d { x, w, b, stride, col } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let (c, h, wd) = spatial("conv2d_polar", tx)?;
                let (o, k) = (tw.shape()[0], tw.shape()[2]);
                let (ho, wo) = (h / stride, wd / stride);
                let ckk = c * k * k;
                let col_data = col.as_ref().map(|t| t.data()).unwrap_or(tx.data());
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; o * ckk];
                    gemm(o, ho * wo, ckk, g.data(), false, col_data, true, &mut dw, false);
                    self.acc(grads, *w, Tensor::new(tw.shape().to_vec(), dw)?);
                }
                if let Some(b) = b {
                    let db: Vec<f64> = g.data().chunks_exact(ho * wo).map(|r| r.iter().sum()).collect();
                    self.acc(grads, *b, Tensor::new(vec![o], db)?);
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcol = vec![0.0; ckk * ho * wo];
                    gemm(ckk, o, ho * wo, tw.data(), true, g.data(), false, &mut dcol, false);
                    let dx = if col.is_none() { dcol } else { col2im(&dcol, c, h, wd, k, *stride) };
                    self.acc(grads, *x, Tensor::new(vec![c, h, wd], dx)?);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (gv, &idx) in g.data().iter().zip(argmax) {
                    d[idx as usize] += gv;
                }
                self.acc(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let (c, h, w) = spatial("upsample_nearest", self.value(*x))?;
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[(ch * h + i / 2) * w + j / 2] += g.data()[(ch * h2 + i) * w2 + j];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![c, h, w], dx)?);
            }
            Op::ScatterMax { x, argmax } => {
                let shape = self.value(*x).shape().to_vec();
                let c = shape[1];
                let mut dx = Tensor::zeros(&shape);
                let d = dx.data_mut();
                for (o, (&row, gv)) in argmax.iter().zip(g.data()).enumerate() {
                    if row != u32::MAX {
                        d[row as usize * c + o % c] += gv;
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let outs = op.backward(&ins, y, g);
                if outs.len() != inputs.len() {
                    return Err(shape_err(format!("{}: {} gradients for {} inputs", op.name(), outs.len(), inputs.len())));
                }
                for (v, gi) in inputs.iter().zip(outs) {
                    if let Some(gi) = gi {
                        same_shape(op.name(), &gi, self.value(*v))?;
                        self.acc(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn transpose(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// Column matrix `(C·k·k, Ho·Wo)` with circular `W` and zero `H` padding.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let (ho, wo) = (h / stride, w / stride);
    let mut col = vec![0.0; c * k * k * ho * wo];
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let hi = (oi * stride) as isize + di as isize - pad;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let src_row = &x[(ch * h + hi as usize) * w..(ch * h + hi as usize + 1) * w];
                    for oj in 0..wo {
                        let wj = ((oj * stride) as isize + dj as isize - pad).rem_euclid(w as isize) as usize;
                        dst[oi * wo + oj] = src_row[wj];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let (ho, wo) = (h / stride, w / stride);
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oi in 0..ho {
                    let hi = (oi * stride) as isize + di as isize - pad;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let base = (ch * h + hi as usize) * w;
                    for oj in 0..wo {
                        let wj = ((oj * stride) as isize + dj as isize - pad).rem_euclid(w as isize) as usize;
                        x[base + wj] += src[oi * wo + oj];
                    }
                }
            }
        }
    }
    x
}
