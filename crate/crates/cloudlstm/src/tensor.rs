//! Dense f64 tensors with define-by-run reverse-mode differentiation.
//!
//! Operations are recorded on a per-graph tape during the forward pass and
//! replayed in reverse by [`Graph::backward`]. Shapes must match exactly —
//! there is no broadcasting; call sites tile or reshape explicitly so the
//! bookkeeping stays auditable.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch on axis {axis}: {left} vs {right}")]
    AxisMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    #[error("{op}: operand shapes {left:?} and {right:?} differ")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    ElementCount {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{op}: index {index} out of range for axis of length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("operands belong to different graphs")]
    GraphMismatch,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this graph")]
    BackwardAlreadyRun,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Plain row-major f64 buffer with a shape. The value type shared between
/// the data pipeline (frames, weights, metrics) and the graph boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ElementCount {
                op: "NdArray::new",
                shape,
                len: data.len(),
            });
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        NdArray {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        NdArray {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        NdArray {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Build from a function of the multi-index, iterated in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        NdArray { shape, data }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[d]);
            off = off * self.shape[d] + i;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &NdArray) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Reshape(usize),
    Permute { src: usize, perm: Vec<usize> },
    Concat { srcs: Vec<usize>, axis: usize },
    Gather { src: usize, axis: usize, indices: Vec<usize> },
    ReduceSum(usize),
    Softmax(usize),
    Conv2d { input: usize, kernel: usize },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

struct GraphInner {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// A computation graph. Cheap to clone (shared handle); not thread-safe by
/// design — one graph per forward pass, never shared across threads.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                backward_done: false,
            })),
        }
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            graph: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn push_checked(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> Result<Tensor> {
        if cfg!(debug_assertions) && !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(shape, data, requires_grad, op))
    }

    /// Insert a differentiable leaf holding a copy of `array`.
    pub fn leaf(&self, array: &NdArray, requires_grad: bool) -> Tensor {
        self.push(
            array.shape().to_vec(),
            array.data().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    pub fn constant(&self, array: &NdArray) -> Tensor {
        self.leaf(array, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.push(vec![], vec![value], false, Op::Leaf)
    }

    pub fn full(&self, shape: Vec<usize>, value: f64) -> Tensor {
        let numel = shape.iter().product();
        self.push(shape, vec![value; numel], false, Op::Leaf)
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every tensor
    /// reachable from the loss that requires gradients. May be called once
    /// per graph; build a fresh graph for the next forward pass.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !Rc::ptr_eq(&self.inner, &loss.graph.inner) {
            return Err(TensorError::GraphMismatch);
        }
        let inner = &mut *self.inner.borrow_mut();
        if inner.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let loss_node = &inner.nodes[loss.id];
        if loss_node.data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.shape.clone(),
            });
        }
        inner.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(inner.nodes.len());
        grads.resize_with(inner.nodes.len(), || None);
        grads[loss.id] = Some(vec![1.0]);

        let nodes = &inner.nodes;
        for id in (0..=loss.id).rev() {
            let gout = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !nodes[id].requires_grad {
                continue;
            }
            backprop_node(nodes, id, &gout, &mut grads);
            grads[id] = Some(gout);
        }

        for (node, g) in inner.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                if let Some(g) = g {
                    node.grad = Some(g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn backprop_node(nodes: &[Node], id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for src in [*a, *b] {
                if nodes[src].requires_grad {
                    let g = accumulate(grads, src, gout.len());
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if nodes[*a].requires_grad {
                let g = accumulate(grads, *a, gout.len());
                for (gi, &go) in g.iter_mut().zip(gout) {
                    *gi += go;
                }
            }
            if nodes[*b].requires_grad {
                let g = accumulate(grads, *b, gout.len());
                for (gi, &go) in g.iter_mut().zip(gout) {
                    *gi -= go;
                }
            }
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                let bdata = &nodes[*b].data;
                let g = accumulate(grads, *a, gout.len());
                for i in 0..gout.len() {
                    g[i] += gout[i] * bdata[i];
                }
            }
            if nodes[*b].requires_grad {
                let adata = &nodes[*a].data;
                let g = accumulate(grads, *b, gout.len());
                for i in 0..gout.len() {
                    g[i] += gout[i] * adata[i];
                }
            }
        }
        Op::Scale(src, c) => {
            if nodes[*src].requires_grad {
                let g = accumulate(grads, *src, gout.len());
                for i in 0..gout.len() {
                    g[i] += gout[i] * c;
                }
            }
        }
        Op::AddScalar(src) => {
            if nodes[*src].requires_grad {
                let g = accumulate(grads, *src, gout.len());
                for (gi, &go) in g.iter_mut().zip(gout) {
                    *gi += go;
                }
            }
        }
        Op::Sigmoid(src) => {
            if nodes[*src].requires_grad {
                let y = &nodes[id].data;
                let g = accumulate(grads, *src, gout.len());
                for i in 0..gout.len() {
                    g[i] += gout[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Tanh(src) => {
            if nodes[*src].requires_grad {
                let y = &nodes[id].data;
                let g = accumulate(grads, *src, gout.len());
                for i in 0..gout.len() {
                    g[i] += gout[i] * (1.0 - y[i] * y[i]);
                }
            }
        }
        Op::Reshape(src) => {
            if nodes[*src].requires_grad {
                let g = accumulate(grads, *src, gout.len());
                for (gi, &go) in g.iter_mut().zip(gout) {
                    *gi += go;
                }
            }
        }
        Op::Permute { src, perm } => {
            if nodes[*src].requires_grad {
                let in_shape = &nodes[*src].shape;
                let in_strides = row_major_strides(in_shape);
                let out_shape = &nodes[id].shape;
                let out_strides = row_major_strides(out_shape);
                let comp: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let g = accumulate(grads, *src, nodes[*src].data.len());
                for (flat, &go) in gout.iter().enumerate() {
                    let mut rem = flat;
                    let mut in_off = 0;
                    for d in 0..out_strides.len() {
                        let q = rem / out_strides[d];
                        rem %= out_strides[d];
                        in_off += q * comp[d];
                    }
                    g[in_off] += go;
                }
            }
        }
        Op::Concat { srcs, axis } => {
            let out_shape = &nodes[id].shape;
            let outer: usize = out_shape[..*axis].iter().product();
            let inner_blk: usize = out_shape[*axis + 1..].iter().product();
            let total_axis = out_shape[*axis];
            let mut axis_off = 0;
            for &src in srcs {
                let src_axis = nodes[src].shape[*axis];
                if nodes[src].requires_grad {
                    let g = accumulate(grads, src, nodes[src].data.len());
                    for o in 0..outer {
                        for a in 0..src_axis {
                            let dst = (o * src_axis + a) * inner_blk;
                            let from = (o * total_axis + axis_off + a) * inner_blk;
                            for i in 0..inner_blk {
                                g[dst + i] += gout[from + i];
                            }
                        }
                    }
                }
                axis_off += src_axis;
            }
        }
        Op::Gather { src, axis, indices } => {
            if nodes[*src].requires_grad {
                let src_shape = &nodes[*src].shape;
                let outer: usize = src_shape[..*axis].iter().product();
                let inner_blk: usize = src_shape[*axis + 1..].iter().product();
                let src_axis = src_shape[*axis];
                let g = accumulate(grads, *src, nodes[*src].data.len());
                for o in 0..outer {
                    for (i, &si) in indices.iter().enumerate() {
                        let from = (o * indices.len() + i) * inner_blk;
                        let dst = (o * src_axis + si) * inner_blk;
                        for j in 0..inner_blk {
                            g[dst + j] += gout[from + j];
                        }
                    }
                }
            }
        }
        Op::ReduceSum(src) => {
            if nodes[*src].requires_grad {
                let go = gout[0];
                let g = accumulate(grads, *src, nodes[*src].data.len());
                for gi in g.iter_mut() {
                    *gi += go;
                }
            }
        }
        Op::Softmax(src) => {
            if nodes[*src].requires_grad {
                let y = &nodes[id].data;
                let dot: f64 = gout.iter().zip(y).map(|(g, s)| g * s).sum();
                let g = accumulate(grads, *src, gout.len());
                for i in 0..gout.len() {
                    g[i] += y[i] * (gout[i] - dot);
                }
            }
        }
        Op::Conv2d { input, kernel } => {
            let (n_pts, kk, c_in) = {
                let s = &nodes[*input].shape;
                (s[0], s[1], s[2])
            };
            let c_out = nodes[*kernel].shape[3];
            if nodes[*input].requires_grad {
                let ker = &nodes[*kernel].data;
                let g = accumulate(grads, *input, nodes[*input].data.len());
                for n in 0..n_pts {
                    let grow = &gout[n * c_out..(n + 1) * c_out];
                    for k in 0..kk {
                        for ci in 0..c_in {
                            let wrow = &ker[(k * c_in + ci) * c_out..][..c_out];
                            let mut acc = 0.0;
                            for co in 0..c_out {
                                acc += grow[co] * wrow[co];
                            }
                            g[(n * kk + k) * c_in + ci] += acc;
                        }
                    }
                }
            }
            if nodes[*kernel].requires_grad {
                let inp = &nodes[*input].data;
                let g = accumulate(grads, *kernel, nodes[*kernel].data.len());
                for n in 0..n_pts {
                    let grow = &gout[n * c_out..(n + 1) * c_out];
                    for k in 0..kk {
                        for ci in 0..c_in {
                            let x = inp[(n * kk + k) * c_in + ci];
                            if x == 0.0 {
                                continue;
                            }
                            let wrow = &mut g[(k * c_in + ci) * c_out..][..c_out];
                            for co in 0..c_out {
                                wrow[co] += x * grow[co];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Handle to a node in a [`Graph`]. Clones share the node.
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &node.shape)
            .field("requires_grad", &node.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].data.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    /// Read the forward value without cloning the buffer.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.graph.inner.borrow().nodes[self.id].data)
    }

    pub fn to_array(&self) -> NdArray {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        NdArray {
            shape: node.shape.clone(),
            data: node.data.clone(),
        }
    }

    /// Scalar value; panics if the tensor is not single-element.
    pub fn item(&self) -> f64 {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        assert_eq!(node.data.len(), 1, "item() on non-scalar tensor");
        node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient buffer populated by [`Graph::backward`].
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn grad_array(&self) -> Option<NdArray> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        node.grad.as_ref().map(|g| NdArray {
            shape: node.shape.clone(),
            data: g.clone(),
        })
    }

    fn same_graph(&self, other: &Tensor) -> Result<()> {
        if Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            Ok(())
        } else {
            Err(TensorError::GraphMismatch)
        }
    }

    fn binary(&self, other: &Tensor, op_name: &'static str) -> Result<(Vec<usize>, bool)> {
        self.same_graph(other)?;
        let inner = self.graph.inner.borrow();
        let (a, b) = (&inner.nodes[self.id], &inner.nodes[other.id]);
        if a.shape != b.shape {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        Ok((a.shape.clone(), a.requires_grad || b.requires_grad))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, rg) = self.binary(other, "add")?;
        let data = {
            let inner = self.graph.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].data, &inner.nodes[other.id].data);
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        };
        self.graph
            .push_checked("add", shape, data, rg, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, rg) = self.binary(other, "sub")?;
        let data = {
            let inner = self.graph.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].data, &inner.nodes[other.id].data);
            a.iter().zip(b).map(|(x, y)| x - y).collect()
        };
        self.graph
            .push_checked("sub", shape, data, rg, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, rg) = self.binary(other, "mul")?;
        let data = {
            let inner = self.graph.inner.borrow();
            let (a, b) = (&inner.nodes[self.id].data, &inner.nodes[other.id].data);
            a.iter().zip(b).map(|(x, y)| x * y).collect()
        };
        self.graph
            .push_checked("mul", shape, data, rg, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let data = node.data.iter().map(|x| x * c).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("scale", shape, data, rg, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let data = node.data.iter().map(|x| x + c).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("add_scalar", shape, data, rg, Op::AddScalar(self.id))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let data = node.data.iter().map(|&x| sigmoid(x)).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("sigmoid", shape, data, rg, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let data = node.data.iter().map(|x| x.tanh()).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("tanh", shape, data, rg, Op::Tanh(self.id))
    }

    /// Row-major reinterpretation; element count must be preserved.
    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let numel: usize = new_shape.iter().product();
        if numel != node.data.len() {
            return Err(TensorError::ElementCount {
                op: "reshape",
                shape: new_shape,
                len: node.data.len(),
            });
        }
        let data = node.data.clone();
        let rg = node.requires_grad;
        drop(inner);
        Ok(self.graph.push(new_shape, data, rg, Op::Reshape(self.id)))
    }

    /// Axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: Vec<usize>) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let rank = node.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of 0..{rank}"),
            });
        }
        let in_strides = row_major_strides(&node.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| node.shape[p]).collect();
        let out_strides = row_major_strides(&out_shape);
        let comp: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = vec![0.0; node.data.len()];
        for (flat, slot) in data.iter_mut().enumerate() {
            let mut rem = flat;
            let mut in_off = 0;
            for d in 0..rank {
                let q = rem / out_strides[d];
                rem %= out_strides[d];
                in_off += q * comp[d];
            }
            *slot = node.data[in_off];
        }
        let rg = node.requires_grad;
        drop(inner);
        Ok(self
            .graph
            .push(out_shape, data, rg, Op::Permute { src: self.id, perm }))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let graph = parts[0].graph.clone();
        for p in parts.iter().skip(1) {
            parts[0].same_graph(p)?;
        }
        let inner = graph.inner.borrow();
        let first = &inner.nodes[parts[0].id];
        let rank = first.shape.len();
        if axis >= rank {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut out_shape = first.shape.clone();
        let mut rg = first.requires_grad;
        for p in parts.iter().skip(1) {
            let node = &inner.nodes[p.id];
            if node.shape.len() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.shape.clone(),
                    right: node.shape.clone(),
                });
            }
            for (d, (&dim, &expect)) in node.shape.iter().zip(&out_shape).enumerate() {
                if d != axis && dim != expect {
                    return Err(TensorError::AxisMismatch {
                        op: "concat",
                        axis: d,
                        left: expect,
                        right: dim,
                    });
                }
            }
            out_shape[axis] += node.shape[axis];
            rg |= node.requires_grad;
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner_blk: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut axis_off = 0;
        for p in parts {
            let node = &inner.nodes[p.id];
            let src_axis = node.shape[axis];
            for o in 0..outer {
                for a in 0..src_axis {
                    let dst = (o * total_axis + axis_off + a) * inner_blk;
                    let from = (o * src_axis + a) * inner_blk;
                    data[dst..dst + inner_blk].copy_from_slice(&node.data[from..from + inner_blk]);
                }
            }
            axis_off += src_axis;
        }
        drop(inner);
        let srcs = parts.iter().map(|p| p.id).collect();
        Ok(graph.push(out_shape, data, rg, Op::Concat { srcs, axis }))
    }

    /// Select slices along `axis` in the given order; indices may repeat.
    /// Gradients scatter-add back to the source positions.
    pub fn gather(&self, axis: usize, indices: Vec<usize>) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let rank = node.shape.len();
        if axis >= rank {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let axis_len = node.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= axis_len) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather",
                index: bad,
                len: axis_len,
            });
        }
        let outer: usize = node.shape[..axis].iter().product();
        let inner_blk: usize = node.shape[axis + 1..].iter().product();
        let mut out_shape = node.shape.clone();
        out_shape[axis] = indices.len();
        let mut data = vec![0.0; outer * indices.len() * inner_blk];
        for o in 0..outer {
            for (i, &si) in indices.iter().enumerate() {
                let dst = (o * indices.len() + i) * inner_blk;
                let from = (o * axis_len + si) * inner_blk;
                data[dst..dst + inner_blk].copy_from_slice(&node.data[from..from + inner_blk]);
            }
        }
        let rg = node.requires_grad;
        drop(inner);
        Ok(self.graph.push(
            out_shape,
            data,
            rg,
            Op::Gather {
                src: self.id,
                axis,
                indices,
            },
        ))
    }

    /// Sum all elements into a scalar.
    pub fn reduce_sum(&self) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        let sum: f64 = node.data.iter().sum();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("reduce_sum", vec![], vec![sum], rg, Op::ReduceSum(self.id))
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.reduce_sum()?.scale(1.0 / n)
    }

    /// Softmax over a rank-1 tensor.
    pub fn softmax(&self) -> Result<Tensor> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        if node.shape.len() != 1 {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                shape: node.shape.clone(),
            });
        }
        let max = node.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = node.data.iter().map(|x| (x - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        drop(inner);
        self.graph
            .push_checked("softmax", shape, data, rg, Op::Softmax(self.id))
    }

    /// 2D convolution specialized to the shapes used by the fast D-Conv path:
    /// input `(N, K, C_in)`, kernel `(1, K, C_in, C_out)`, stride 1, no
    /// padding, producing `(N, 1, C_out)`.
    pub fn conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        self.same_graph(kernel)?;
        let inner = self.graph.inner.borrow();
        let (inp, ker) = (&inner.nodes[self.id], &inner.nodes[kernel.id]);
        if inp.shape.len() != 3 {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 3,
                shape: inp.shape.clone(),
            });
        }
        if ker.shape.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: ker.shape.clone(),
            });
        }
        if ker.shape[0] != 1 {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: 0,
                left: 1,
                right: ker.shape[0],
            });
        }
        if ker.shape[1] != inp.shape[1] {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: 1,
                left: inp.shape[1],
                right: ker.shape[1],
            });
        }
        if ker.shape[2] != inp.shape[2] {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: 2,
                left: inp.shape[2],
                right: ker.shape[2],
            });
        }
        let (n_pts, kk, c_in) = (inp.shape[0], inp.shape[1], inp.shape[2]);
        let c_out = ker.shape[3];
        let mut data = vec![0.0; n_pts * c_out];
        for n in 0..n_pts {
            let out_row = &mut data[n * c_out..(n + 1) * c_out];
            for k in 0..kk {
                let in_row = &inp.data[(n * kk + k) * c_in..][..c_in];
                for (ci, &x) in in_row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let w_row = &ker.data[(k * c_in + ci) * c_out..][..c_out];
                    for (slot, &w) in out_row.iter_mut().zip(w_row) {
                        *slot += x * w;
                    }
                }
            }
        }
        let rg = inp.requires_grad || ker.requires_grad;
        drop(inner);
        self.graph.push_checked(
            "conv2d",
            vec![n_pts, 1, c_out],
            data,
            rg,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
            },
        )
    }
}

/// Numerically stable logistic function; shared by graph ops and the plain
/// reference paths so both round identically.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
