//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! [`Tensor`] is a plain value (shape + row-major data) that can be shared
//! across threads. A [`Tape`] records operations on [`Var`] handles during a
//! forward pass; [`Tape::backward`] replays them in reverse exactly once and
//! returns the accumulated [`Gradients`].
//!
//! Only the operations needed by the losses and the segmentation network are
//! provided. Broadcasting is limited to scalar (single element) operands.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use thiserror::Error;

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("conv2d: input has {input} channels but kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("conv2d: kernel size must be odd and square, got {0:?}")]
    KernelSize(Vec<usize>),
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward has already been run on this tape")]
    TapeConsumed,
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("log: input {value} at index {index} is not positive (clamp before taking logs)")]
    NonPositiveLog { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn is_scalar_like(&self) -> bool {
        self.data.len() == 1
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Log(usize),
    Exp(usize),
    Relu(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    AddScalar(usize),
    MulScalar(usize, f64),
    Sum(usize),
    Mean(usize),
    SumChannels(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
    },
    SoftmaxChannels(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of the operations of one forward pass.
///
/// Not `Sync`: each thread builds its own tape.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. Can be run once per tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        if self.consumed.get() {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape.clone();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::NotScalar(loss_shape));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, &mut grads, id, &g);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (g, node.op) {
                (Some(data), Op::Leaf) if node.requires_grad => Some(Tensor {
                    shape: node.value.shape.clone(),
                    data,
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(slot);
}

/// Gradient of a node whose operand may have been scalar-broadcast.
fn accumulate_broadcast(
    grads: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
    contrib: impl Iterator<Item = f64>,
) {
    let scalar = nodes[id].value.is_scalar_like();
    accumulate(grads, nodes, id, |slot| {
        if scalar {
            slot[0] += contrib.sum::<f64>();
        } else {
            for (s, c) in slot.iter_mut().zip(contrib) {
                *s += c;
            }
        }
    });
}

fn at(t: &Tensor, i: usize) -> f64 {
    if t.data.len() == 1 {
        t.data[0]
    } else {
        t.data[i]
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let out = &nodes[id].value;
    match nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate_broadcast(grads, nodes, a, g.iter().copied());
            accumulate_broadcast(grads, nodes, b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            accumulate_broadcast(grads, nodes, a, g.iter().copied());
            accumulate_broadcast(grads, nodes, b, g.iter().map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate_broadcast(grads, nodes, a, g.iter().enumerate().map(|(i, gi)| gi * at(vb, i)));
            accumulate_broadcast(grads, nodes, b, g.iter().enumerate().map(|(i, gi)| gi * at(va, i)));
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate_broadcast(grads, nodes, a, g.iter().enumerate().map(|(i, gi)| gi / at(vb, i)));
            accumulate_broadcast(
                grads,
                nodes,
                b,
                g.iter().enumerate().map(|(i, gi)| {
                    let d = at(vb, i);
                    -gi * at(va, i) / (d * d)
                }),
            );
        }
        Op::Neg(x) => accumulate(grads, nodes, x, |s| {
            for (s, gi) in s.iter_mut().zip(g) {
                *s -= gi;
            }
        }),
        Op::Log(x) => {
            let vx = &nodes[x].value.data;
            accumulate(grads, nodes, x, |s| {
                for ((s, gi), xi) in s.iter_mut().zip(g).zip(vx) {
                    *s += gi / xi;
                }
            })
        }
        Op::Exp(x) => accumulate(grads, nodes, x, |s| {
            for ((s, gi), yi) in s.iter_mut().zip(g).zip(&out.data) {
                *s += gi * yi;
            }
        }),
        Op::Relu(x) => {
            let vx = &nodes[x].value.data;
            accumulate(grads, nodes, x, |s| {
                for ((s, gi), xi) in s.iter_mut().zip(g).zip(vx) {
                    if *xi > 0.0 {
                        *s += gi;
                    }
                }
            })
        }
        Op::Clamp { x, lo, hi } => {
            let vx = &nodes[x].value.data;
            accumulate(grads, nodes, x, |s| {
                for ((s, gi), xi) in s.iter_mut().zip(g).zip(vx) {
                    if *xi >= lo && *xi <= hi {
                        *s += gi;
                    }
                }
            })
        }
        Op::AddScalar(x) => accumulate(grads, nodes, x, |s| {
            for (s, gi) in s.iter_mut().zip(g) {
                *s += gi;
            }
        }),
        Op::MulScalar(x, c) => accumulate(grads, nodes, x, |s| {
            for (s, gi) in s.iter_mut().zip(g) {
                *s += gi * c;
            }
        }),
        Op::Sum(x) => accumulate(grads, nodes, x, |s| {
            for s in s.iter_mut() {
                *s += g[0];
            }
        }),
        Op::Mean(x) => {
            let n = nodes[x].value.len() as f64;
            accumulate(grads, nodes, x, |s| {
                for s in s.iter_mut() {
                    *s += g[0] / n;
                }
            })
        }
        Op::SumChannels(x) => {
            let plane = g.len();
            accumulate(grads, nodes, x, |s| {
                for chunk in s.chunks_mut(plane) {
                    for (s, gi) in chunk.iter_mut().zip(g) {
                        *s += gi;
                    }
                }
            })
        }
        Op::SoftmaxChannels(x) => {
            let shape = &out.shape;
            let (c, plane) = (shape[0], shape[1] * shape[2]);
            accumulate(grads, nodes, x, |s| {
                for i in 0..plane {
                    let mut dot = 0.0;
                    for ch in 0..c {
                        dot += g[ch * plane + i] * out.data[ch * plane + i];
                    }
                    for ch in 0..c {
                        let j = ch * plane + i;
                        s[j] += out.data[j] * (g[j] - dot);
                    }
                }
            })
        }
        Op::Conv2d { input, kernel, bias } => {
            let vin = &nodes[input].value;
            let vk = &nodes[kernel].value;
            accumulate(grads, nodes, input, |s| conv2d_backward_input(vin.shape(), vk, g, s));
            accumulate(grads, nodes, kernel, |s| conv2d_backward_kernel(vin, vk.shape(), g, s));
            let plane = out.shape[1] * out.shape[2];
            accumulate(grads, nodes, bias, |s| {
                for (co, s) in s.iter_mut().enumerate() {
                    *s += g[co * plane..(co + 1) * plane].iter().sum::<f64>();
                }
            });
        }
    }
}

/// Gradients of every trainable leaf reachable from the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, `None` for constants and leaves the loss does not reach.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    /// Forward value of a scalar node.
    pub fn item(&self) -> f64 {
        self.value_ref().data[0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value_ref().map(f);
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        assert!(std::ptr::eq(self.tape, other.tape), "operands on different tapes");
        let value = {
            let a = self.value_ref();
            let b = other.value_ref();
            if a.shape == b.shape {
                Tensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                }
            } else if b.is_scalar_like() {
                let y = b.data[0];
                a.map(|x| f(x, y))
            } else if a.is_scalar_like() {
                let x = a.data[0];
                b.map(|y| f(x, y))
            } else {
                return Err(TensorError::ShapeMismatch {
                    op: name,
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    /// Natural log. Inputs must already be positive (see [`Var::clamp`]);
    /// a non-positive input is an error.
    pub fn log(&self) -> Result<Var<'t>> {
        {
            let v = self.value_ref();
            if let Some((index, &value)) = v.data.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                return Err(TensorError::NonPositiveLog { index, value });
            }
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp { x: self.id, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::MulScalar(self.id, c), |x| x * c)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value_ref().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value_ref();
        let m = v.sum() / v.len() as f64;
        drop(v);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), self.requires_grad())
    }

    /// Sum over the leading axis: `[C, ...rest]` to `[...rest]`.
    pub fn sum_channels(&self) -> Result<Var<'t>> {
        let value = {
            let v = self.value_ref();
            if v.shape.is_empty() {
                return Err(TensorError::Rank {
                    op: "sum_channels",
                    expected: 1,
                    shape: v.shape.clone(),
                });
            }
            let rest = v.shape[1..].to_vec();
            let plane: usize = rest.iter().product();
            let mut out = vec![0.0; plane];
            for chunk in v.data.chunks(plane.max(1)) {
                for (o, x) in out.iter_mut().zip(chunk) {
                    *o += x;
                }
            }
            Tensor { shape: rest, data: out }
        };
        Ok(self.tape.push(value, Op::SumChannels(self.id), self.requires_grad()))
    }

    /// Softmax across the channel axis of a `[C, H, W]` tensor, stabilized
    /// by subtracting the per-pixel maximum.
    pub fn softmax_channels(&self) -> Result<Var<'t>> {
        let value = {
            let v = self.value_ref();
            if v.shape.len() != 3 {
                return Err(TensorError::Rank {
                    op: "softmax_channels",
                    expected: 3,
                    shape: v.shape.clone(),
                });
            }
            if !v.is_finite() {
                return Err(TensorError::NonFinite { op: "softmax_channels" });
            }
            softmax_channels_value(&v)
        };
        Ok(self.tape.push(value, Op::SoftmaxChannels(self.id), self.requires_grad()))
    }

    /// Zero-padded, stride-1 cross-correlation preserving spatial size.
    /// `self`: `[Cin, H, W]`, `kernel`: `[Cout, Cin, k, k]` with odd `k`,
    /// `bias`: `[Cout]`.
    pub fn conv2d(&self, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let x = self.value_ref();
            let k = kernel.value_ref();
            let b = bias.value_ref();
            check_conv_shapes(&x, &k, &b)?;
            conv2d_forward(&x, &k, &b)
        };
        let rg = self.requires_grad() || kernel.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
            },
            rg,
        ))
    }
}

pub(crate) fn softmax_channels_value(v: &Tensor) -> Tensor {
    let (c, plane) = (v.shape[0], v.shape[1] * v.shape[2]);
    let mut out = vec![0.0; v.len()];
    for i in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(v.data[ch * plane + i]);
        }
        let mut total = 0.0;
        for ch in 0..c {
            let e = (v.data[ch * plane + i] - max).exp();
            out[ch * plane + i] = e;
            total += e;
        }
        for ch in 0..c {
            out[ch * plane + i] /= total;
        }
    }
    Tensor {
        shape: v.shape.clone(),
        data: out,
    }
}

fn check_conv_shapes(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<()> {
    if x.shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "conv2d",
            expected: 3,
            shape: x.shape.clone(),
        });
    }
    if k.shape.len() != 4 {
        return Err(TensorError::Rank {
            op: "conv2d",
            expected: 4,
            shape: k.shape.clone(),
        });
    }
    if k.shape[2] != k.shape[3] || k.shape[2].is_multiple_of(2) {
        return Err(TensorError::KernelSize(k.shape.clone()));
    }
    if k.shape[1] != x.shape[0] {
        return Err(TensorError::ChannelMismatch {
            input: x.shape[0],
            kernel: k.shape[1],
        });
    }
    if b.shape != [k.shape[0]] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            left: b.shape.clone(),
            right: vec![k.shape[0]],
        });
    }
    Ok(())
}

/// Planes stored with a row stride of `w + 2 * pad` so that every kernel tap
/// is a single contiguous multiply-add. Columns past `w` in an unpadded
/// plane are scratch and must be zero when read.
struct Strided {
    h: usize,
    w: usize,
    pad: usize,
    stride: usize,
    /// Length of the run covering every valid output position.
    run: usize,
}

impl Strided {
    fn new(h: usize, w: usize, ks: usize) -> Self {
        let pad = ks / 2;
        let stride = w + 2 * pad;
        Strided {
            h,
            w,
            pad,
            stride,
            run: if h == 0 { 0 } else { (h - 1) * stride + w },
        }
    }

    fn padded_len(&self) -> usize {
        (self.h + 2 * self.pad) * self.stride
    }

    /// Copies a dense `[h, w]` plane into the interior of a padded plane.
    fn pad_into(&self, plane: &[f64], out: &mut [f64]) {
        for y in 0..self.h {
            let o = (y + self.pad) * self.stride + self.pad;
            out[o..o + self.w].copy_from_slice(&plane[y * self.w..(y + 1) * self.w]);
        }
    }

    fn offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.stride + kx
    }
}

/// `out[j] = sum_t w_t * src_t[j]`, summing terms in order. Outputs are
/// produced in register-sized blocks so each is written once.
fn weighted_sum(out: &mut [f64], terms: &[(f64, &[f64])]) {
    const B: usize = 16;
    for (bi, o) in out.chunks_mut(B).enumerate() {
        let base = bi * B;
        if o.len() == B {
            let mut acc = [0.0; B];
            for &(wt, src) in terms {
                let s: &[f64; B] = src[base..base + B].try_into().expect("block");
                for j in 0..B {
                    acc[j] += wt * s[j];
                }
            }
            o.copy_from_slice(&acc);
        } else {
            for (j, o) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &(wt, src) in terms {
                    acc += wt * src[base + j];
                }
                *o = acc;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().sum::<f64>() + tail
}

fn padded_channels(x: &Tensor, geo: &Strided) -> Vec<f64> {
    let (cin, plane, len) = (x.shape[0], geo.h * geo.w, geo.padded_len());
    let mut xp = vec![0.0; cin * len];
    for ci in 0..cin {
        geo.pad_into(&x.data[ci * plane..(ci + 1) * plane], &mut xp[ci * len..(ci + 1) * len]);
    }
    xp
}

fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let (cin, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (cout, ks) = (k.shape[0], k.shape[2]);
    let geo = Strided::new(h, w, ks);
    let len = geo.padded_len();
    let xp = padded_channels(x, &geo);
    let mut acc = vec![0.0; geo.run];
    let mut terms = Vec::with_capacity(cin * ks * ks);
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        terms.clear();
        for ci in 0..cin {
            let xin = &xp[ci * len..(ci + 1) * len];
            for ky in 0..ks {
                for kx in 0..ks {
                    let off = geo.offset(ky, kx);
                    terms.push((k.data[((co * cin + ci) * ks + ky) * ks + kx], &xin[off..off + geo.run]));
                }
            }
        }
        weighted_sum(&mut acc, &terms);
        let o = &mut out[co * plane..(co + 1) * plane];
        for y in 0..h {
            for (d, s) in o[y * w..(y + 1) * w].iter_mut().zip(&acc[y * geo.stride..]) {
                *d = s + b.data[co];
            }
        }
    }
    Tensor {
        shape: vec![cout, h, w],
        data: out,
    }
}

/// Output gradient laid out with the forward stride, scratch columns zero,
/// and a zero margin of `margin` on both ends.
fn strided_grad(g: &[f64], cout: usize, geo: &Strided, margin: usize) -> (Vec<f64>, usize) {
    let plane = geo.h * geo.w;
    let len = geo.run + 2 * margin;
    let mut gs = vec![0.0; cout * len];
    for co in 0..cout {
        let dst = &mut gs[co * len + margin..co * len + margin + geo.run];
        for y in 0..geo.h {
            let o = y * geo.stride;
            dst[o..o + geo.w].copy_from_slice(&g[co * plane + y * geo.w..co * plane + (y + 1) * geo.w]);
        }
    }
    (gs, len)
}

/// Adds the input gradient into `gi`.
fn conv2d_backward_input(in_shape: &[usize], k: &Tensor, g: &[f64], gi: &mut [f64]) {
    let (cin, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (cout, ks) = (k.shape[0], k.shape[2]);
    let geo = Strided::new(h, w, ks);
    let max_off = geo.offset(ks - 1, ks - 1);
    let (gs, len) = strided_grad(g, cout, &geo, max_off);
    // interior pixel (y, x) of the padded input sits at q + centre, where q
    // runs over the forward output positions
    let centre = geo.offset(geo.pad, geo.pad);
    let mut acc = vec![0.0; geo.run];
    let mut terms = Vec::with_capacity(cout * ks * ks);
    let plane = h * w;
    for ci in 0..cin {
        terms.clear();
        for co in 0..cout {
            let gp = &gs[co * len..(co + 1) * len];
            for ky in 0..ks {
                for kx in 0..ks {
                    let start = max_off + centre - geo.offset(ky, kx);
                    terms.push((k.data[((co * cin + ci) * ks + ky) * ks + kx], &gp[start..start + geo.run]));
                }
            }
        }
        weighted_sum(&mut acc, &terms);
        let dst = &mut gi[ci * plane..(ci + 1) * plane];
        for y in 0..h {
            for (d, a) in dst[y * w..(y + 1) * w].iter_mut().zip(&acc[y * geo.stride..]) {
                *d += a;
            }
        }
    }
}

/// Adds the kernel gradient into `gk`.
fn conv2d_backward_kernel(x: &Tensor, k_shape: &[usize], g: &[f64], gk: &mut [f64]) {
    let (cin, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (cout, ks) = (k_shape[0], k_shape[2]);
    let geo = Strided::new(h, w, ks);
    let len = geo.padded_len();
    let xp = padded_channels(x, &geo);
    let (gs, glen) = strided_grad(g, cout, &geo, 0);
    for co in 0..cout {
        let gp = &gs[co * glen..(co + 1) * glen];
        for ci in 0..cin {
            let xin = &xp[ci * len..(ci + 1) * len];
            for ky in 0..ks {
                for kx in 0..ks {
                    let off = geo.offset(ky, kx);
                    gk[((co * cin + ci) * ks + ky) * ks + kx] += dot(gp, &xin[off..off + geo.run]);
                }
            }
        }
    }
}
