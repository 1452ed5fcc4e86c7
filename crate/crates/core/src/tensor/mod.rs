//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor is an immutable node holding its value and the operation
//! that produced it. Calling [`Tensor::backward`] on a scalar walks the
//! reachable graph in reverse creation order (node ids increase
//! monotonically, so descending id order is a valid topological order) and
//! accumulates gradients into the leaves created with [`Tensor::param`].
//!
//! Broadcasting is never implicit: shapes must match exactly, except for the
//! explicit [`Tensor::broadcast_row`], [`Tensor::add_channel_bias`],
//! [`Tensor::tile_planes`] and scalar ops.

mod conv;
pub(crate) mod kernels;
mod ops;

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{dim_err, Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Reference-counted handle to a node of the computation graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    LeakyRelu(Tensor, f64),
    Abs(Tensor),
    Sqrt(Tensor),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Softplus(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Concat(Vec<Tensor>, usize),
    Reshape(Tensor),
    BroadcastRow(Tensor),
    ChannelBias(Tensor, Tensor),
    Conv2d(conv::ConvArgs),
    ConvTranspose2d(conv::ConvArgs),
    InstanceNorm(Tensor),
    TilePlanes(Tensor),
    ScaleRows(Tensor, Tensor),
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::ChannelBias(a, b) | Op::ScaleRows(a, b) => vec![a, b],
            Op::Scale(a, _) | Op::LeakyRelu(a, _) => vec![a],
            Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::BroadcastRow(a)
            | Op::InstanceNorm(a)
            | Op::TilePlanes(a) => vec![a],
            Op::Concat(parts, _) => parts.iter().collect(),
            Op::Conv2d(c) | Op::ConvTranspose2d(c) => vec![&c.x, &c.w],
        }
    }

    /// Vector-Jacobian product: gradient contribution for each input, in the
    /// order of [`Op::inputs`]. `None` for inputs that do not need one.
    fn vjp(&self, out: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need = |t: &Tensor| t.requires_grad();
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![need(a).then(|| g.to_vec()), need(b).then(|| g.to_vec())],
            Op::Sub(a, b) => vec![
                need(a).then(|| g.to_vec()),
                need(b).then(|| g.iter().map(|v| -v).collect()),
            ],
            Op::Mul(a, b) => vec![
                need(a).then(|| zip_mul(g, b.data())),
                need(b).then(|| zip_mul(g, a.data())),
            ],
            Op::Scale(_, c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::AddScalar(_) => vec![Some(g.to_vec())],
            Op::MatMul(a, b) => ops::matmul_vjp(a, b, g),
            Op::Transpose(a) => vec![Some(ops::transpose_data(g, a.shape()[1], a.shape()[0]))],
            Op::LeakyRelu(a, slope) => vec![Some(
                a.data()
                    .iter()
                    .zip(g)
                    .map(|(x, gv)| if *x > 0.0 { *gv } else { gv * slope })
                    .collect(),
            )],
            Op::Abs(a) => vec![Some(
                a.data()
                    .iter()
                    .zip(g)
                    .map(|(x, gv)| {
                        if *x > 0.0 {
                            *gv
                        } else if *x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )],
            Op::Sqrt(_) => vec![Some(
                out.data
                    .iter()
                    .zip(g)
                    .map(|(y, gv)| if *y > 0.0 { gv / (2.0 * y) } else { 0.0 })
                    .collect(),
            )],
            Op::Sigmoid(_) => vec![Some(
                out.data.iter().zip(g).map(|(y, gv)| gv * y * (1.0 - y)).collect(),
            )],
            Op::Tanh(_) => vec![Some(
                out.data.iter().zip(g).map(|(y, gv)| gv * (1.0 - y * y)).collect(),
            )],
            Op::Softplus(a) => vec![Some(
                a.data().iter().zip(g).map(|(x, gv)| gv * ops::sigmoid(*x)).collect(),
            )],
            Op::Sum(a) => vec![Some(vec![g[0]; a.numel()])],
            Op::Mean(a) => vec![Some(vec![g[0] / a.numel() as f64; a.numel()])],
            Op::Concat(parts, axis) => ops::concat_vjp(parts, *axis, g),
            Op::Reshape(_) => vec![Some(g.to_vec())],
            Op::BroadcastRow(a) => {
                let n = a.numel();
                let mut ga = vec![0.0; n];
                for row in g.chunks(n) {
                    for (acc, v) in ga.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![Some(ga)]
            }
            Op::ChannelBias(x, b) => conv::channel_bias_vjp(x, b, g),
            Op::Conv2d(c) => conv::conv2d_vjp(c, g),
            Op::ConvTranspose2d(c) => conv::conv_transpose2d_vjp(c, g),
            Op::InstanceNorm(x) => vec![Some(conv::instance_norm_vjp(x, out, g))],
            Op::TilePlanes(z) => {
                let planes = z.numel();
                let hw = g.len() / planes;
                vec![Some(g.chunks(hw).map(|p| p.iter().sum()).collect())]
            }
            Op::ScaleRows(z, c) => ops::scale_rows_vjp(z, c, g),
        }
    }
}

fn zip_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let grad = if requires_grad && matches!(op, Op::Leaf) {
            Some(vec![0.0; data.len()])
        } else {
            None
        };
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(grad),
            op,
        }))
    }

    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            ));
        }
        check_finite("leaf", &data)?;
        Ok(Self::from_parts(data, shape.to_vec(), requires_grad, Op::Leaf))
    }

    /// Constant tensor (never receives a gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf; its gradient buffer starts at zero.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(vec![0.0; numel_of(shape)], shape.to_vec(), false, Op::Leaf)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(vec![value; numel_of(shape)], shape)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value], &[])
    }

    /// Build a result node, rejecting non-finite output.
    pub(crate) fn derived(
        op_name: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
    ) -> Result<Self> {
        check_finite(op_name, &data)?;
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Ok(Self::from_parts(data, shape, requires_grad, op))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.0.data[0])
        } else {
            Err(Error::Contract(alloc::format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )))
        }
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.0.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), false, Op::Leaf)
    }

    /// Reverse-mode sweep from a single-element loss. Gradients accumulate
    /// into trainable leaves across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(String::from(
                "loss does not depend on any trainable tensor",
            )));
        }

        let mut seen = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.contains_key(&t.id()) {
                continue;
            }
            for input in t.0.op.inputs() {
                if input.requires_grad() && !seen.contains_key(&input.id()) {
                    stack.push(input.clone());
                }
            }
            seen.insert(t.id(), t);
        }

        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        grads.insert(self.id(), vec![1.0]);
        for (_, node) in seen.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            if node.is_leaf() {
                if let Some(acc) = node.0.grad.borrow_mut().as_mut() {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                continue;
            }
            let inputs = node.0.op.inputs();
            let contribs = node.0.op.vjp(&node.0, &g);
            for (input, contrib) in inputs.into_iter().zip(contribs) {
                let Some(contrib) = contrib else { continue };
                if !input.requires_grad() {
                    continue;
                }
                match grads.get_mut(&input.id()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&contrib) {
                            *a += v;
                        }
                    }
                    None => {
                        grads.insert(input.id(), contrib);
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.data())
            .finish()
    }
}
