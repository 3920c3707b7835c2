//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is the tape: every operation appends a node holding its
//! forward value and enough saved state to run its backward rule. Nodes are
//! only ever appended, so every node's inputs precede it and a single reverse
//! sweep from the loss visits each op exactly once.
//!
//! Parameters are borrowed from a [`ParamSet`] rather than copied into the
//! tape. Gradients flowing into an embedding parameter through
//! [`Graph::embedding_gather`] are kept as sparse rows so a large table never
//! needs a dense gradient buffer per graph.

use std::borrow::Cow;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding rule for [`Graph::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output length equals input length. Even widths put the extra zero
    /// on the right.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

const EMPTY_WINDOW: usize = usize::MAX;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        pad_left: usize,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Dropout {
        input: NodeId,
        mask: Vec<T>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
        padding_idx: Option<usize>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    Mean(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
        along: Axis,
    },
    BroadcastRows(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Map {
        input: NodeId,
        deriv: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool { .. } => "max_pool",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Dropout { .. } => "dropout",
            Op::Gather { .. } => "embedding_gather",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat { .. } => "concat",
            Op::AddBias { .. } => "add_bias",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Map { .. } => "map",
        }
    }
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamSet<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph without parameters; use [`Graph::leaf`] for differentiable inputs.
    pub fn new() -> Self {
        Self {
            params: None,
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Self {
            params: Some(params),
            param_nodes: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Single value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<T> {
        let v = self.value(id);
        if !v.is_scalar() {
            return Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant input: never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Input, false)
    }

    /// Differentiable input owned by the graph.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value, Op::Input, true)
    }

    /// Node for a borrowed parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(&node) = self.param_nodes.get(&id) {
            return Ok(node);
        }
        let params = self
            .params
            .ok_or_else(|| Error::Contract("graph has no parameter set".into()))?;
        if id.0 >= params.len() {
            return Err(Error::Index {
                index: id.0,
                size: params.len(),
            });
        }
        let p = params.get(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.value),
            op: Op::Param,
            requires_grad: p.requires_grad,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        Ok(node)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: {:?} × {:?} inner dimensions differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Cross-correlation of a `channels × length` input with
    /// `filters × channels × width` kernels.
    pub fn conv1d(&mut self, input: NodeId, kernels: NodeId, padding: Padding) -> Result<NodeId> {
        let (channels, length) = self.value(input).dims2()?;
        let (filters, kc, width) = match self.shape(kernels) {
            &[f, c, w] => (f, c, w),
            s => {
                return Err(Error::dim(format!(
                    "conv1d: kernels must be filters×channels×width, got {s:?}"
                )))
            }
        };
        if kc != channels {
            return Err(Error::dim(format!(
                "conv1d: input has {channels} channels, kernels expect {kc}"
            )));
        }
        let (pad_left, pad_total) = match padding {
            Padding::Same => ((width - 1) / 2, width - 1),
            Padding::Valid => (0, 0),
        };
        if width > length + pad_total {
            return Err(Error::dim(format!(
                "conv1d: width {width} exceeds padded length {}",
                length + pad_total
            )));
        }
        let out_len = length + pad_total - width + 1;
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let mut out = vec![T::zero(); filters * out_len];
        for f in 0..filters {
            let orow = &mut out[f * out_len..(f + 1) * out_len];
            for c in 0..channels {
                let xrow = &x[c * length..(c + 1) * length];
                for w in 0..width {
                    let kv = k[(f * channels + c) * width + w];
                    // output position t reads input position t + w - pad_left
                    let lo = pad_left.saturating_sub(w);
                    let hi = (length + pad_left).saturating_sub(w).min(out_len);
                    for t in lo..hi {
                        orow[t] = orow[t] + kv * xrow[t + w - pad_left];
                    }
                }
            }
        }
        let rg = self.requires(input) || self.requires(kernels);
        self.push(
            Tensor::new([filters, out_len], out)?,
            Op::Conv1d {
                input,
                kernels,
                pad_left,
            },
            rg,
        )
    }

    pub fn max_pool(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let length = self.value(input).dims2()?.1;
        self.max_pool_masked(input, window, stride, length)
    }

    /// Windowed max over the length axis considering only positions
    /// `< valid_len`. A window with no valid position yields 0 and passes no
    /// gradient. Ties resolve to the first maximal position.
    pub fn max_pool_masked(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
        valid_len: usize,
    ) -> Result<NodeId> {
        if window < 1 || stride < 1 {
            return Err(Error::Parameter(format!(
                "max_pool: window ({window}) and stride ({stride}) must be ≥ 1"
            )));
        }
        let (channels, length) = self.value(input).dims2()?;
        if window > length {
            return Err(Error::Parameter(format!(
                "max_pool: window {window} exceeds length {length}"
            )));
        }
        let valid = valid_len.min(length);
        let out_len = (length - window) / stride + 1;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); channels * out_len];
        let mut argmax = vec![EMPTY_WINDOW; channels * out_len];
        for c in 0..channels {
            for o in 0..out_len {
                let start = o * stride;
                let end = (start + window).min(valid);
                let mut best = EMPTY_WINDOW;
                for pos in start..end {
                    let idx = c * length + pos;
                    if best == EMPTY_WINDOW || x[idx] > x[best] {
                        best = idx;
                    }
                }
                if best != EMPTY_WINDOW {
                    out[c * out_len + o] = x[best];
                    argmax[c * out_len + o] = best;
                }
            }
        }
        let rg = self.requires(input);
        self.push(
            Tensor::new([channels, out_len], out)?,
            Op::MaxPool { input, argmax },
            rg,
        )
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a.tanh()).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, Op::Tanh(x), rg)
    }

    /// Inverted dropout. With `training == false` or `rate == 0` this is the
    /// identity and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, Op::Dropout { input: x, mask }, rg)
    }

    pub fn embedding_gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.embedding_gather_padded(table, ids, None)
    }

    /// Row lookup. Positions holding `padding_idx` read as zero vectors,
    /// whatever that table row contains, and pass no gradient back.
    pub fn embedding_gather_padded(
        &mut self,
        table: NodeId,
        ids: &[usize],
        padding_idx: Option<usize>,
    ) -> Result<NodeId> {
        let (rows, dim) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::dim("embedding_gather: empty id list"));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    index: id,
                    size: rows,
                });
            }
            if Some(id) == padding_idx {
                out.extend(std::iter::repeat_n(T::zero(), dim));
            } else {
                out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
            }
        }
        let rg = self.requires(table);
        self.push(
            Tensor::new([ids.len(), dim], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                padding_idx,
            },
            rg,
        )
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId> {
        self.same_shape(op.name(), a, b)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * c).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let n = T::from_f64(v.numel() as f64);
        let s: T = v.data().iter().copied().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat: no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!(
                "concat: axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat: shape {s:?} incompatible with {base:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let chunk = self.shape(id)[axis] * inner;
                out.extend_from_slice(&self.value(id).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&i| self.requires(i));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Adds a bias vector to every row (`Axis::Cols`: bias has one entry per
    /// column) or every column (`Axis::Rows`: one entry per row) of a matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId, along: Axis) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        let want = match along {
            Axis::Cols => c,
            Axis::Rows => r,
        };
        if self.value(bias).numel() != want {
            return Err(Error::dim(format!(
                "add_bias: bias of shape {:?} does not match {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                v + match along {
                    Axis::Cols => b[i % c],
                    Axis::Rows => b[i / c],
                }
            })
            .collect();
        let rg = self.requires(x) || self.requires(bias);
        self.push(
            Tensor::new([r, c], data)?,
            Op::AddBias { x, bias, along },
            rg,
        )
    }

    /// Repeats a `1 × n` row `rows` times.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let (r, n) = self.value(x).dims2()?;
        if r != 1 || rows == 0 {
            return Err(Error::dim(format!(
                "broadcast_rows: need a 1×n row and rows ≥ 1, got {:?} × {rows}",
                self.shape(x)
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        let rg = self.requires(x);
        self.push(Tensor::new([rows, n], out)?, Op::BroadcastRows(x), rg)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.requires(x);
        self.push(Tensor::new([c, r], out)?, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.requires(x);
        self.push(t, Op::Reshape(x), rg)
    }

    /// Elementwise map with a caller-supplied derivative. The derivative is
    /// evaluated at forward time and saved for backward.
    pub fn map(&mut self, x: NodeId, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let deriv = v.data().iter().map(|&a| df(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(t, Op::Map { input: x, deriv }, rg)
    }

    /// `x · W + b` for a row-major batch `x` (`m × in`), `W` (`in × out`) and
    /// `b` (`out`).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b, Axis::Cols)
    }

    /// Hash of every piecewise choice made in the forward pass: ReLU input
    /// signs and max-pool winners. Two evaluations with equal signatures lie
    /// on the same linear piece of each kinked op.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Smallest |x| over all ReLU inputs; `f64::INFINITY` without ReLUs.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|v| v.abs().as_f64()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse sweep from a scalar `loss`, seeding d(loss)/d(loss) = 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut sparse: HashMap<usize, SparseRows<T>> = HashMap::new();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads, &mut sparse)?;
            grads[i] = Some(g);
        }

        let mut param_nodes = HashMap::new();
        for (&pid, &nid) in &self.param_nodes {
            param_nodes.insert(pid, nid.0);
        }
        Ok(Gradients {
            dense: grads,
            sparse,
            param_nodes,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: NodeId) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backward_node(
        &self,
        node: &Node<'p, T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        sparse: &mut HashMap<usize, SparseRows<T>>,
    ) -> Result<()> {
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let s: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            da[i * k + p] = da[i * k + p] + s;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == T::zero() {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d = *d + a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                kernels,
                pad_left,
            } => {
                let (channels, length) = self.value(*input).dims2()?;
                let (filters, out_len) = node.value.dims2()?;
                let width = self.shape(*kernels)[2];
                let pad_left = *pad_left;
                let x = self.value(*input).data();
                let k = self.value(*kernels).data();
                let range = |w: usize| {
                    let lo = pad_left.saturating_sub(w);
                    let hi = (length + pad_left).saturating_sub(w).min(out_len);
                    lo..hi
                };
                if let Some(dx) = self.slot(grads, *input) {
                    for f in 0..filters {
                        let grow = &g[f * out_len..(f + 1) * out_len];
                        for c in 0..channels {
                            for w in 0..width {
                                let kv = k[(f * channels + c) * width + w];
                                for t in range(w) {
                                    let s = c * length + t + w - pad_left;
                                    dx[s] = dx[s] + kv * grow[t];
                                }
                            }
                        }
                    }
                }
                if let Some(dk) = self.slot(grads, *kernels) {
                    for f in 0..filters {
                        let grow = &g[f * out_len..(f + 1) * out_len];
                        for c in 0..channels {
                            let xrow = &x[c * length..(c + 1) * length];
                            for w in 0..width {
                                let mut acc = T::zero();
                                for t in range(w) {
                                    acc = acc + grow[t] * xrow[t + w - pad_left];
                                }
                                let idx = (f * channels + c) * width + w;
                                dk[idx] = dk[idx] + acc;
                            }
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        if src != EMPTY_WINDOW {
                            dx[src] = dx[src] + gv;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &a), &gv) in dx.iter_mut().zip(xv).zip(g) {
                        if a > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                        *d = *d + gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, &m), &gv) in dx.iter_mut().zip(mask).zip(g) {
                        *d = *d + gv * m;
                    }
                }
            }
            Op::Gather {
                table,
                ids,
                padding_idx,
            } => {
                if !self.requires(*table) {
                    return Ok(());
                }
                let dim = self.value(*table).dims2()?.1;
                let rows = ids
                    .iter()
                    .enumerate()
                    .filter(|(_, &id)| Some(id) != *padding_idx);
                if matches!(self.nodes[table.0].op, Op::Param) {
                    let entry = sparse.entry(table.0).or_insert_with(|| SparseRows {
                        row_len: dim,
                        rows: Vec::new(),
                        values: Vec::new(),
                    });
                    for (pos, &id) in rows {
                        entry.rows.push(id);
                        entry
                            .values
                            .extend_from_slice(&g[pos * dim..(pos + 1) * dim]);
                    }
                } else if let Some(dt) = self.slot(grads, *table) {
                    for (pos, &id) in rows {
                        for j in 0..dim {
                            dt[id * dim + j] = dt[id * dim + j] + g[pos * dim + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(d) = self.slot(grads, id) {
                        axpy(d, g, T::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    axpy(d, g, T::one());
                }
                if let Some(d) = self.slot(grads, *b) {
                    axpy(d, g, -T::one());
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &y), &gv) in d.iter_mut().zip(bv).zip(g) {
                        *d = *d + gv * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, &x), &gv) in d.iter_mut().zip(av).zip(g) {
                        *d = *d + gv * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, g, *c);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|v| *v = *v + g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let share = g[0] / T::from_f64(d.len() as f64);
                    d.iter_mut().for_each(|v| *v = *v + share);
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &id in inputs {
                    let chunk = self.shape(id)[*axis] * inner;
                    if let Some(d) = self.slot(grads, id) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            axpy(&mut d[o * chunk..(o + 1) * chunk], src, T::one());
                        }
                    }
                    offset += chunk;
                }
            }
            Op::AddBias { x, bias, along } => {
                let c = node.value.dims2()?.1;
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, g, T::one());
                }
                if let Some(d) = self.slot(grads, *bias) {
                    for (i, &gv) in g.iter().enumerate() {
                        let j = match along {
                            Axis::Cols => i % c,
                            Axis::Rows => i / c,
                        };
                        d[j] = d[j] + gv;
                    }
                }
            }
            Op::BroadcastRows(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let n = d.len();
                    for row in g.chunks(n) {
                        axpy(d, row, T::one());
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] = d[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    axpy(d, g, T::one());
                }
            }
            Op::Map { input, deriv } => {
                if let Some(d) = self.slot(grads, *input) {
                    for ((d, &dv), &gv) in d.iter_mut().zip(deriv).zip(g) {
                        *d = *d + gv * dv;
                    }
                }
            }
        }
        Ok(())
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}

#[derive(Debug, Clone)]
struct SparseRows<T> {
    row_len: usize,
    rows: Vec<usize>,
    values: Vec<T>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    dense: Vec<Option<Vec<T>>>,
    sparse: HashMap<usize, SparseRows<T>>,
    param_nodes: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Dense gradient of a non-parameter node. `None` when nothing flowed
    /// into it (constant or unreachable).
    pub fn wrt(&self, node: NodeId) -> Option<&[T]> {
        self.dense.get(node.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a parameter, zeros if the parameter was unused.
    pub fn param_grad(&self, id: ParamId, numel: usize) -> Vec<T> {
        let mut out = vec![T::zero(); numel];
        self.add_param_grad_into(id, &mut out, T::one());
        out
    }

    pub(crate) fn add_param_grad_into(&self, id: ParamId, dst: &mut [T], scale: T) {
        let Some(&node) = self.param_nodes.get(&id) else {
            return;
        };
        if let Some(Some(g)) = self.dense.get(node) {
            axpy(dst, g, scale);
        }
        if let Some(sp) = self.sparse.get(&node) {
            let n = sp.row_len;
            for (k, &row) in sp.rows.iter().enumerate() {
                axpy(
                    &mut dst[row * n..(row + 1) * n],
                    &sp.values[k * n..(k + 1) * n],
                    scale,
                );
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.dense
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
            && self
                .sparse
                .values()
                .all(|s| s.values.iter().all(|v| v.is_finite()))
    }
}
