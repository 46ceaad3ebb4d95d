use crate::ops::{self, norm::BatchStats};
use crate::shape::numel;
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, T),
    Offset(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    /// Sum-reduction of `x` onto the (broadcast-compatible) output shape.
    SumTo(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool, alpha: T },
    Transpose { x: Var, d0: usize, d1: usize },
    Reshape(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, invstd: Vec<T>, batch: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var },
}

/// Zeroes subnormal values and reports whether all are finite.
///
/// Subnormal operands slow floating-point arithmetic by orders of magnitude;
/// long softmax rows underflow into that range routinely.
fn flush_finite<T: Scalar>(data: &mut [T]) -> bool {
    let tiny = T::min_positive_value();
    let mut finite = true;
    for v in data {
        finite &= v.is_finite();
        if v.abs() < tiny {
            *v = T::zero();
        }
    }
    finite
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only operation tape.
///
/// Nodes are stored in creation order, which is a topological order: every
/// operation's inputs exist before it. Backward visits the tape once in
/// reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; its `requires_grad` flag is taken from the tensor.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push_unchecked(t, Op::Leaf, rg)
    }

    /// Records a leaf that does not require gradients.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(false);
        self.push_unchecked(t, Op::Leaf, false)
    }

    /// Records a leaf that requires gradients.
    pub fn variable(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(true);
        self.push_unchecked(t, Op::Leaf, true)
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

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// The node value with its gradient placed in the tensor's grad slot.
    pub fn value_with_grad(&self, v: Var) -> Tensor<T> {
        let mut t = self.value(v).clone();
        if let Some(g) = self.grad(v) {
            // shapes agree by construction
            let _ = t.accumulate_grad(g);
        }
        t
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !flush_finite(value.data_mut()) {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, rg))
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (name, f): (&'static str, fn(T, T) -> T) = match kind {
            Binary::Add => ("add", |x, y| x + y),
            Binary::Sub => ("sub", |x, y| x - y),
            Binary::Mul => ("mul", |x, y| x * y),
            Binary::Div => ("div", |x, y| x / y),
        };
        let out = ops::elementwise::binary(self.value(a), self.value(b), f)
            .map_err(|e| relabel(e, name))?;
        self.push(name, out, Op::Binary(kind, a, b), &[a, b])
    }

    /// Broadcasting elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Broadcasting elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v + s);
        self.push("add_scalar", out, Op::Offset(x), &[x])
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let (name, f): (&'static str, fn(T) -> T) = match kind {
            Unary::Relu => ("relu", |v| if v > T::zero() { v } else { T::zero() }),
            Unary::Sigmoid => ("sigmoid", ops::elementwise::sigmoid),
            Unary::Exp => ("exp", T::exp),
            Unary::Log => ("log", T::ln),
            Unary::Tanh => ("tanh", T::tanh),
        };
        let out = self.value(x).map(f);
        self.push(name, out, Op::Unary(kind, x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    // ---- normalization over an axis ---------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(x), axis)?;
        let out = ops::softmax::softmax(self.value(x), axis);
        self.push("softmax", out, Op::Softmax { x, axis }, &[x])
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis("log_softmax", self.shape(x), axis)?;
        let out = ops::softmax::log_softmax(self.value(x), axis);
        self.push("log_softmax", out, Op::LogSoftmax { x, axis }, &[x])
    }

    // ---- reductions --------------------------------------------------------

    /// Sums over `axes`; reduced axes are kept with extent 1 when `keepdim`.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        for &a in axes {
            check_axis("sum_axes", &shape, a)?;
        }
        let kept: Vec<usize> =
            shape.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect();
        let data = ops::reduce::sum_to(self.value(x).data(), &shape, &kept);
        let s = self.push("sum_axes", Tensor::new(&kept, data)?, Op::SumTo(x), &[x])?;
        if keepdim {
            Ok(s)
        } else {
            let squeezed: Vec<usize> =
                shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect();
            self.reshape(s, &squeezed)
        }
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let count: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.sum_axes(x, axes, keepdim)?;
        self.scale(s, T::one() / T::from_usize(count).expect("count"))
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        self.push("sum", Tensor::scalar(total), Op::SumTo(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::from_usize(n).expect("count"))
    }

    /// Spatial mean of an `(N, C, H, W)` map, kept as `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.expect_rank("global_avg_pool", x, 4)?;
        self.mean_axes(x, &[2, 3], true)
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false, T::one())
    }

    /// `alpha * op(a) @ op(b)` for rank-2 or batched rank-3 operands, where
    /// `op` transposes the last two axes when the flag is set.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool, alpha: T) -> Result<Var> {
        let out = ops::matmul::forward(self.value(a), self.value(b), ta, tb, alpha)?;
        self.push("matmul", out, Op::MatMul { a, b, ta, tb, alpha }, &[a, b])
    }

    // ---- layout ------------------------------------------------------------

    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        check_axis("transpose", self.shape(x), d0)?;
        check_axis("transpose", self.shape(x), d1)?;
        let out = ops::layout::transpose(self.value(x), d0, d1);
        self.push("transpose", out, Op::Transpose { x, d0, d1 }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let out = Tensor::new(shape, self.value(x).data().to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::layout::concat(&tensors, axis)?;
        self.push("concat", out, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// Concatenation along the channel axis of `(N, C, H, W)` maps.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        for &x in xs {
            self.expect_rank("concat_channels", x, 4)?;
        }
        self.concat(xs, 1)
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_axis("narrow", self.shape(x), axis)?;
        if len == 0 || start + len > self.shape(x)[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} of axis {axis} in {:?}", start + len, self.shape(x)),
            ));
        }
        let out = ops::layout::narrow(self.value(x), axis, start, len);
        self.push("narrow", out, Op::Narrow { x, axis, start }, &[x])
    }

    // ---- convolution / pooling --------------------------------------------

    /// 2-D cross-correlation. The kernel is `(outC, inC, kH, kW)`, or
    /// `(N, outC, inC, kH, kW)` for a separate kernel per batch item.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv::forward(self.value(x), self.value(w), stride, padding)?;
        self.push("conv2d", out, Op::Conv2d { x, w, stride, pad: padding }, &[x, w])
    }

    /// Batch normalization of an `(N, C, H, W)` map with per-channel
    /// scale/shift. Returns the output and the batch mean and (biased)
    /// variance when batch statistics were used.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BatchStats<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        self.expect_rank("batch_norm2d", x, 4)?;
        let c = self.shape(x)[1];
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::dim("batch_norm2d", format!("{c} channels vs affine parameters")));
        }
        let fwd = ops::norm::forward(self.value(x), self.value(gamma), self.value(beta), stats, eps)?;
        let batch = matches!(stats, BatchStats::Batch);
        let moments = batch.then(|| (fwd.mean.clone(), fwd.var.clone()));
        let v = self.push(
            "batch_norm2d",
            fwd.out,
            Op::BatchNorm { x, gamma, beta, mean: fwd.mean, invstd: fwd.invstd, batch },
            &[x, gamma, beta],
        )?;
        Ok((v, moments))
    }

    /// Max pooling with a square window; stride equals the window.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        self.expect_rank("maxpool2d", x, 4)?;
        let (out, argmax) = ops::pool::maxpool(self.value(x), k)?;
        self.push("maxpool2d", out, Op::MaxPool { x, argmax }, &[x])
    }

    /// Bilinear resize of an `(N, C, H, W)` map with corner alignment off.
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.expect_rank("upsample_bilinear", x, 4)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::dim("upsample_bilinear", "zero output extent"));
        }
        let out = ops::pool::upsample_forward(self.value(x), out_h, out_w);
        self.push("upsample_bilinear", out, Op::Upsample { x }, &[x])
    }

    fn expect_rank(&self, op: &'static str, x: Var, rank: usize) -> Result<()> {
        if self.shape(x).len() != rank {
            return Err(Error::dim(op, format!("expected rank {rank}, got {:?}", self.shape(x))));
        }
        Ok(())
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    ///
    /// Gradients are summed over every path (shared sub-expressions
    /// accumulate). A second call without [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward called twice without reset_grads".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            let is_leaf = matches!(self.nodes[id].op, Op::Leaf);
            if !is_leaf {
                self.backward_node(id, &g)?;
            }
            // only leaf gradients are retained to bound memory
            if is_leaf || id == loss.0 {
                self.grads[id] = Some(g);
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Like [`Graph::backward`] but keeps every intermediate gradient, so
    /// [`Graph::grad`] answers for non-leaf nodes too.
    pub fn backward_retain(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward called twice without reset_grads".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.backward_node(id, &g)?;
            self.grads[id] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn accum(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.nodes[v.0].value.numel());
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
        if let Some(acc) = &mut self.grads[v.0] {
            flush_finite(acc);
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, id: usize, g: &[T]) -> Result<()> {
        use ops::*;
        let out_shape = self.nodes[id].value.shape().to_vec();
        // Take the op out temporarily so node values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ga, gb) = elementwise::binary_backward(
                    *kind,
                    self.value(*a),
                    self.value(*b),
                    &out_shape,
                    g,
                    self.wants(*a),
                    self.wants(*b),
                );
                if let Some(ga) = ga {
                    self.accum(*a, ga);
                }
                if let Some(gb) = gb {
                    self.accum(*b, gb);
                }
            }
            Op::Unary(kind, x) => {
                let gx = elementwise::unary_backward(*kind, self.value(*x), &self.nodes[id].value, g);
                self.accum(*x, gx);
            }
            Op::Scale(x, s) => {
                let gx = g.iter().map(|&v| v * *s).collect();
                self.accum(*x, gx);
            }
            Op::Offset(x) => self.accum(*x, g.to_vec()),
            Op::Softmax { x, axis } => {
                let gx = softmax::softmax_backward(&self.nodes[id].value, g, *axis);
                self.accum(*x, gx);
            }
            Op::LogSoftmax { x, axis } => {
                let gx = softmax::log_softmax_backward(&self.nodes[id].value, g, *axis);
                self.accum(*x, gx);
            }
            Op::SumTo(x) => {
                let in_shape = self.shape(*x).to_vec();
                let gx = reduce::expand_from(g, &out_shape, &in_shape);
                self.accum(*x, gx);
            }
            Op::MatMul { a, b, ta, tb, alpha } => {
                let (ga, gb) = matmul::backward(
                    self.value(*a),
                    self.value(*b),
                    g,
                    *ta,
                    *tb,
                    *alpha,
                    self.wants(*a),
                    self.wants(*b),
                );
                if let Some(ga) = ga {
                    self.accum(*a, ga);
                }
                if let Some(gb) = gb {
                    self.accum(*b, gb);
                }
            }
            Op::Transpose { x, d0, d1 } => {
                let gt = Tensor::new(&out_shape, g.to_vec())?;
                let gx = layout::transpose(&gt, *d0, *d1).into_data();
                self.accum(*x, gx);
            }
            Op::Reshape(x) => self.accum(*x, g.to_vec()),
            Op::Concat { xs, axis } => {
                let shapes: Vec<Vec<usize>> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
                let parts = layout::concat_backward(g, &out_shape, &shapes, *axis);
                for (&v, part) in xs.iter().zip(parts) {
                    self.accum(v, part);
                }
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = self.shape(*x).to_vec();
                let gx = layout::narrow_backward(g, &out_shape, &in_shape, *axis, *start);
                self.accum(*x, gx);
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (gx, gw) = conv::backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    &out_shape,
                    *stride,
                    *pad,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(gx) = gx {
                    self.accum(*x, gx);
                }
                if let Some(gw) = gw {
                    self.accum(*w, gw);
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd, batch } => {
                let grads = norm::backward(self.value(*x), self.value(*gamma), mean, invstd, *batch, g);
                self.accum(*x, grads.x);
                self.accum(*gamma, grads.gamma);
                self.accum(*beta, grads.beta);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
                self.accum(*x, gx);
            }
            Op::Upsample { x } => {
                let gx = pool::upsample_backward(self.shape(*x), &out_shape, g);
                self.accum(*x, gx);
            }
        }
        self.nodes[id].op = op;
        Ok(())
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::dim(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

fn relabel(e: Error, op: &'static str) -> Error {
    match e {
        Error::Dimension { msg, .. } => Error::Dimension { op, msg },
        other => other,
    }
}
