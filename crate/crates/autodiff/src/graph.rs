use crate::array::numel;
use crate::kernels::{self, ConvGeom, ConvShapes};
use crate::{AdamState, DenseArray, GraphError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// Bound per evaluation.
    Input,
    /// Updated by the optimizer.
    Param,
    /// Gradient may be computed for inspection but is never applied.
    Frozen,
    /// Never differentiated.
    Constant,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(LeafKind),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Sin {
        x: NodeId,
        freq: f64,
    },
    Relu {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    Concat {
        xs: Vec<NodeId>,
        axis: usize,
    },
    Softmax {
        x: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    SoftmaxEntropy {
        x: NodeId,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf(LeafKind::Input) => "input",
            Op::Leaf(LeafKind::Param) => "param",
            Op::Leaf(LeafKind::Frozen) => "frozen",
            Op::Leaf(LeafKind::Constant) => "constant",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Sin { .. } => "sin",
            Op::Relu { .. } => "relu",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Mse { .. } => "mse",
            Op::MeanAxis { .. } => "mean_axis",
            Op::SoftmaxEntropy { .. } => "softmax_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) => vec![],
            Op::Affine { x, w, b }
            | Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. } => {
                vec![*x, *w, *b]
            }
            Op::Sin { x, .. }
            | Op::Relu { x }
            | Op::Reshape { x }
            | Op::Softmax { x }
            | Op::MeanAxis { x, .. }
            | Op::SoftmaxEntropy { x } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, target } => vec![*pred, *target],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    name: String,
    shape: Vec<usize>,
    value: Option<DenseArray<T>>,
}

/// Which leaves receive gradients in [`Graph::backward_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardOptions {
    pub frozen: bool,
    pub inputs: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            frozen: true,
            inputs: true,
        }
    }
}

impl BackwardOptions {
    /// Gradients for trainable parameters only; frozen weights and inputs are
    /// still flowed through but their own gradients are not materialised.
    pub fn params_only() -> Self {
        Self {
            frozen: false,
            inputs: false,
        }
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<DenseArray<T>>>,
    applicable: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&DenseArray<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<DenseArray<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// False for frozen leaves and intermediate nodes.
    pub fn is_applicable(&self, id: NodeId) -> bool {
        self.applicable.get(id.0).copied().unwrap_or(false)
    }
}

/// Append-only computation graph. Node inputs always reference earlier nodes.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    evaluated: bool,
}

fn fmt_shape(s: &[usize]) -> String {
    format!("{:?}", s)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            evaluated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn set_name(&mut self, id: NodeId, name: impl Into<String>) {
        self.nodes[id.0].name = name.into();
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    pub fn value(&self, id: NodeId) -> Option<&DenseArray<T>> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    pub fn nodes_of_kind(&self, kind: LeafKind) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf(k) if k == kind))
            .map(NodeId)
            .collect()
    }

    pub fn trainable(&self) -> Vec<NodeId> {
        self.nodes_of_kind(LeafKind::Param)
    }

    fn push(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        value: Option<DenseArray<T>>,
        name: Option<String>,
    ) -> NodeId {
        let id = self.nodes.len();
        let name = name.unwrap_or_else(|| format!("{}#{}", op.kind(), id));
        self.nodes.push(Node {
            op,
            name,
            shape,
            value,
        });
        self.evaluated = false;
        NodeId(id)
    }

    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.push(
            Op::Leaf(LeafKind::Input),
            shape.to_vec(),
            None,
            Some(name.into()),
        )
    }

    pub fn param(&mut self, name: impl Into<String>, value: DenseArray<T>) -> NodeId {
        self.leaf(LeafKind::Param, name, value)
    }

    pub fn frozen(&mut self, name: impl Into<String>, value: DenseArray<T>) -> NodeId {
        self.leaf(LeafKind::Frozen, name, value)
    }

    pub fn constant(&mut self, name: impl Into<String>, value: DenseArray<T>) -> NodeId {
        self.leaf(LeafKind::Constant, name, value)
    }

    pub fn leaf(
        &mut self,
        kind: LeafKind,
        name: impl Into<String>,
        value: DenseArray<T>,
    ) -> NodeId {
        let shape = value.shape().to_vec();
        let value = (kind != LeafKind::Input).then_some(value);
        self.push(Op::Leaf(kind), shape, value, Some(name.into()))
    }

    /// Overwrites the stored value of a leaf; the shape must not change.
    pub fn set_value(&mut self, id: NodeId, value: DenseArray<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(GraphError::Invalid(format!("{} is not a leaf", node.name)));
        }
        if node.shape != value.shape() {
            return Err(GraphError::shape(
                &node.name,
                fmt_shape(&node.shape),
                fmt_shape(value.shape()),
            ));
        }
        node.value = Some(value);
        self.evaluated = false;
        Ok(())
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(GraphError::Invalid(format!("unknown node id {}", id.0)));
        }
        Ok(())
    }

    fn next_name(&self, kind: &str) -> String {
        format!("{}#{}", kind, self.nodes.len())
    }

    /// `x (B, in) * w^T + b` with `w (out, in)` and `b (out)`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [x, w, b] {
            self.check_id(id)?;
        }
        let name = self.next_name("affine");
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 {
            return Err(GraphError::shape(
                name,
                "input of rank 2 (batch, in)",
                fmt_shape(xs),
            ));
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(GraphError::shape(
                name,
                format!("weight [_, {}]", xs[1]),
                fmt_shape(ws),
            ));
        }
        if bs != [ws[0]] {
            return Err(GraphError::shape(name, fmt_shape(&[ws[0]]), fmt_shape(bs)));
        }
        let shape = vec![xs[0], ws[0]];
        Ok(self.push(Op::Affine { x, w, b }, shape, None, None))
    }

    fn conv_common(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kind: &str,
    ) -> Result<(String, [usize; 4], [usize; 4])> {
        for id in [x, w, b] {
            self.check_id(id)?;
        }
        let name = self.next_name(kind);
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 {
            return Err(GraphError::shape(
                name,
                "input of rank 4 (batch, channels, height, width)",
                fmt_shape(xs),
            ));
        }
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(GraphError::shape(
                name,
                "square kernel of rank 4",
                fmt_shape(ws),
            ));
        }
        Ok((
            name,
            [xs[0], xs[1], xs[2], xs[3]],
            [ws[0], ws[1], ws[2], ws[3]],
        ))
    }

    /// Convolution with weight `(Cout, Cin, k, k)`, bias `(Cout)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (name, xs, ws) = self.conv_common(x, w, b, "conv2d")?;
        if ws[1] != xs[1] {
            return Err(GraphError::shape(
                name,
                format!("weight [_, {}, k, k]", xs[1]),
                fmt_shape(&ws),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(GraphError::shape(
                name,
                fmt_shape(&[ws[0]]),
                fmt_shape(self.shape(b)),
            ));
        }
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], stride, pad).ok_or_else(|| {
            GraphError::shape(&name, "kernel fitting the padded input", fmt_shape(&xs))
        })?;
        let shape = vec![xs[0], ws[0], geom.out_h, geom.out_w];
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            shape,
            None,
            None,
        ))
    }

    /// Transposed convolution with weight `(Cin, Cout, k, k)`, bias `(Cout)`.
    /// Output extent is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (name, xs, ws) = self.conv_common(x, w, b, "conv_transpose2d")?;
        if ws[0] != xs[1] {
            return Err(GraphError::shape(
                name,
                format!("weight [{}, _, k, k]", xs[1]),
                fmt_shape(&ws),
            ));
        }
        if self.shape(b) != [ws[1]] {
            return Err(GraphError::shape(
                name,
                fmt_shape(&[ws[1]]),
                fmt_shape(self.shape(b)),
            ));
        }
        let k = ws[2];
        let out = |h: usize| {
            ((h as isize - 1) * stride as isize - 2 * pad as isize + k as isize).max(0) as usize
        };
        let (oh, ow) = (out(xs[2]), out(xs[3]));
        if stride == 0 || oh == 0 || ow == 0 {
            return Err(GraphError::shape(
                name,
                "positive output extent",
                fmt_shape(&[oh, ow]),
            ));
        }
        let shape = vec![xs[0], ws[1], oh, ow];
        Ok(self.push(
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            shape,
            None,
            None,
        ))
    }

    /// Elementwise `sin(freq * x)`.
    pub fn sin(&mut self, x: NodeId, freq: f64) -> Result<NodeId> {
        self.check_id(x)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Sin { x, freq }, shape, None, None))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Relu { x }, shape, None, None))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check_id(x)?;
        if numel(shape) != numel(self.shape(x)) {
            return Err(GraphError::shape(
                self.next_name("reshape"),
                format!("{} elements", numel(self.shape(x))),
                fmt_shape(shape),
            ));
        }
        Ok(self.push(Op::Reshape { x }, shape.to_vec(), None, None))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let name = self.next_name("concat");
        let first = *xs
            .first()
            .ok_or_else(|| GraphError::Invalid(format!("{}: nothing to concatenate", name)))?;
        for &id in xs {
            self.check_id(id)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(GraphError::shape(
                name,
                format!("rank > {}", axis),
                fmt_shape(&base),
            ));
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &id in xs {
            let s = self.shape(id);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(GraphError::shape(name, fmt_shape(&base), fmt_shape(s)));
            }
            shape[axis] += s[axis];
        }
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            shape,
            None,
            None,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        if self.shape(x).is_empty() {
            return Err(GraphError::shape(
                self.next_name("softmax"),
                "rank >= 1",
                "[]",
            ));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Softmax { x }, shape, None, None))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`. `logits` is `(B, C)`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.check_id(logits)?;
        let name = self.next_name("softmax_cross_entropy");
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(GraphError::shape(
                name,
                format!("[{}, classes]", targets.len()),
                fmt_shape(s),
            ));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(GraphError::Invalid(format!(
                "{}: target {} out of range for {} classes",
                name, t, s[1]
            )));
        }
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            vec![],
            None,
            None,
        ))
    }

    /// Rebinds the class targets of a cross-entropy node.
    pub fn set_targets(&mut self, loss: NodeId, new_targets: &[usize]) -> Result<()> {
        self.check_id(loss)?;
        let classes = match &self.nodes[loss.0].op {
            Op::SoftmaxCrossEntropy { logits, .. } => self.nodes[logits.0].shape[1],
            _ => {
                return Err(GraphError::Invalid(format!(
                    "{} is not a cross-entropy node",
                    self.nodes[loss.0].name
                )))
            }
        };
        let name = self.nodes[loss.0].name.clone();
        if let Some(t) = new_targets.iter().find(|&&t| t >= classes) {
            return Err(GraphError::Invalid(format!(
                "{}: target {} out of range for {} classes",
                name, t, classes
            )));
        }
        if let Op::SoftmaxCrossEntropy { targets, .. } = &mut self.nodes[loss.0].op {
            if targets.len() != new_targets.len() {
                return Err(GraphError::shape(
                    name,
                    format!("{} targets", targets.len()),
                    format!("{} targets", new_targets.len()),
                ));
            }
            targets.copy_from_slice(new_targets);
        }
        self.evaluated = false;
        Ok(())
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.check_id(pred)?;
        self.check_id(target)?;
        if self.shape(pred) != self.shape(target) || numel(self.shape(pred)) == 0 {
            return Err(GraphError::shape(
                self.next_name("mse"),
                fmt_shape(self.shape(pred)),
                fmt_shape(self.shape(target)),
            ));
        }
        Ok(self.push(Op::Mse { pred, target }, vec![], None, None))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_id(x)?;
        let s = self.shape(x);
        if axis >= s.len() || s[axis] == 0 {
            return Err(GraphError::shape(
                self.next_name("mean_axis"),
                format!("non-empty axis {}", axis),
                fmt_shape(s),
            ));
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok(self.push(Op::MeanAxis { x, axis }, shape, None, None))
    }

    /// Shannon entropy (natural log) of the softmax over the last axis, which is removed.
    pub fn softmax_entropy(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let s = self.shape(x);
        if s.is_empty() || *s.last().unwrap() == 0 {
            return Err(GraphError::shape(
                self.next_name("softmax_entropy"),
                "rank >= 1",
                fmt_shape(s),
            ));
        }
        let mut shape = s.to_vec();
        shape.pop();
        Ok(self.push(Op::SoftmaxEntropy { x }, shape, None, None))
    }

    /// Binds inputs and computes every node in order.
    pub fn evaluate(
        &mut self,
        bindings: impl IntoIterator<Item = (NodeId, DenseArray<T>)>,
    ) -> Result<()> {
        for (id, value) in bindings {
            self.check_id(id)?;
            let node = &mut self.nodes[id.0];
            if !matches!(node.op, Op::Leaf(LeafKind::Input)) {
                return Err(GraphError::Invalid(format!(
                    "{} is not an input",
                    node.name
                )));
            }
            if node.shape != value.shape() {
                return Err(GraphError::shape(
                    &node.name,
                    fmt_shape(&node.shape),
                    fmt_shape(value.shape()),
                ));
            }
            node.value = Some(value);
        }
        self.run()
    }

    /// Recomputes all op nodes from the current leaf values.
    pub fn run(&mut self) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            if let Op::Leaf(_) = self.nodes[i].op {
                if self.nodes[i].value.is_none() {
                    return Err(GraphError::Unbound {
                        node: self.nodes[i].name.clone(),
                    });
                }
                continue;
            }
            let out = self.compute(i)?;
            if !out.is_finite() {
                return Err(GraphError::Overflow {
                    node: self.nodes[i].name.clone(),
                });
            }
            self.nodes[i].value = Some(out);
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &DenseArray<T> {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("inputs evaluated before use")
    }

    fn conv_shapes(&self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> ConvShapes {
        let (xs, ws) = (self.shape(x), self.shape(w));
        ConvShapes {
            batch: xs[0],
            c_out: ws[0],
            geom: ConvGeom::new(xs[1], xs[2], xs[3], ws[2], stride, pad)
                .expect("validated at build"),
        }
    }

    /// Geometry of the adjoint convolution that maps the transposed-conv output back to its input.
    fn conv_t_shapes(
        &self,
        out_shape: &[usize],
        w: NodeId,
        stride: usize,
        pad: usize,
    ) -> ConvShapes {
        let ws = self.shape(w);
        ConvShapes {
            batch: out_shape[0],
            c_out: ws[1],
            geom: ConvGeom::new(ws[1], out_shape[2], out_shape[3], ws[2], stride, pad)
                .expect("validated at build"),
        }
    }

    fn compute(&self, i: usize) -> Result<DenseArray<T>> {
        let node = &self.nodes[i];
        let shape = node.shape.clone();
        let out = match &node.op {
            Op::Leaf(_) => unreachable!(),
            Op::Affine { x, w, b } => {
                let (xv, wv, bv) = (self.val(*x), self.val(*w), self.val(*b));
                let (batch, out_dim, in_dim) = (shape[0], shape[1], xv.shape()[1]);
                let mut data = Vec::with_capacity(batch * out_dim);
                for _ in 0..batch {
                    data.extend_from_slice(bv.data());
                }
                kernels::matmul(
                    batch,
                    in_dim,
                    out_dim,
                    xv.data(),
                    false,
                    wv.data(),
                    true,
                    T::one(),
                    &mut data,
                );
                DenseArray::new(shape, data)?
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let s = self.conv_shapes(*x, *w, *stride, *pad);
                let mut out = DenseArray::zeros(&shape);
                kernels::conv2d_forward(
                    &s,
                    self.val(*x).data(),
                    self.val(*w).data(),
                    self.val(*b).data(),
                    out.data_mut(),
                );
                out
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let s = self.conv_t_shapes(&shape, *w, *stride, *pad);
                let c_in = self.shape(*x)[1];
                let mut out = DenseArray::zeros(&shape);
                kernels::conv_t_forward(
                    &s,
                    c_in,
                    self.val(*x).data(),
                    self.val(*w).data(),
                    self.val(*b).data(),
                    out.data_mut(),
                );
                out
            }
            Op::Sin { x, freq } => {
                let xv = self.val(*x);
                let mut out = DenseArray::zeros(xv.shape());
                T::sin_scaled(T::of(*freq), xv.data(), out.data_mut());
                out
            }
            Op::Relu { x } => self
                .val(*x)
                .map(|v| if v > T::zero() { v } else { T::zero() }),
            Op::Reshape { x } => self.val(*x).clone().reshape(&shape)?,
            Op::Concat { xs, axis } => {
                let outer: usize = shape[..*axis].iter().product();
                let mut data = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    for id in xs {
                        let v = self.val(*id);
                        let block = v.len() / outer.max(1);
                        data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
                    }
                }
                DenseArray::new(shape, data)?
            }
            Op::Softmax { x } => {
                let v = self.val(*x);
                let c = *shape.last().unwrap();
                let mut data = v.data().to_vec();
                for row in data.chunks_mut(c.max(1)) {
                    softmax_in_place(row);
                }
                DenseArray::new(shape, data)?
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let v = self.val(*logits);
                let c = v.shape()[1];
                let mut total = T::zero();
                for (row, &t) in v.data().chunks(c).zip(targets) {
                    total = total + log_sum_exp(row) - row[t];
                }
                DenseArray::scalar(total / T::of(targets.len() as f64))
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.val(*pred), self.val(*target));
                let sum: T = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                DenseArray::scalar(sum / T::of(p.len() as f64))
            }
            Op::MeanAxis { x, axis } => {
                let v = self.val(*x);
                let (outer, n, inner) = axis_split(v.shape(), *axis);
                let scale = T::one() / T::of(n as f64);
                let mut data = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let src = &v.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                data.iter_mut().for_each(|d| *d = *d * scale);
                DenseArray::new(shape, data)?
            }
            Op::SoftmaxEntropy { x } => {
                let v = self.val(*x);
                let c = *v.shape().last().unwrap();
                let data = v.data().chunks(c).map(softmax_entropy).collect();
                DenseArray::new(shape, data)?
            }
        };
        Ok(out)
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.backward_with(loss, BackwardOptions::default())
    }

    /// Reverse sweep from a scalar loss node.
    pub fn backward_with(&self, loss: NodeId, opts: BackwardOptions) -> Result<Gradients<T>> {
        self.check_id(loss)?;
        if !self.evaluated {
            return Err(GraphError::NotEvaluated);
        }
        let loss_node = &self.nodes[loss.0];
        if numel(&loss_node.shape) != 1 {
            return Err(GraphError::NonScalarLoss {
                node: loss_node.name.clone(),
                shape: loss_node.shape.clone(),
            });
        }
        self.backward_seeded(loss, DenseArray::full(&loss_node.shape, T::one()), opts)
    }

    /// Reverse sweep from any node with an explicit upstream gradient `seed`,
    /// for chaining backward passes across separate graphs.
    pub fn backward_seeded(
        &self,
        output: NodeId,
        seed: DenseArray<T>,
        opts: BackwardOptions,
    ) -> Result<Gradients<T>> {
        self.check_id(output)?;
        if !self.evaluated {
            return Err(GraphError::NotEvaluated);
        }
        let out_node = &self.nodes[output.0];
        if seed.shape() != out_node.shape.as_slice() {
            return Err(GraphError::shape(
                &out_node.name,
                fmt_shape(&out_node.shape),
                fmt_shape(seed.shape()),
            ));
        }
        let loss = output;
        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for i in 0..n {
            needs[i] = match &self.nodes[i].op {
                Op::Leaf(LeafKind::Param) => true,
                Op::Leaf(LeafKind::Frozen) => opts.frozen,
                Op::Leaf(LeafKind::Input) => opts.inputs,
                Op::Leaf(LeafKind::Constant) => false,
                op => op.inputs().iter().any(|id| needs[id.0]),
            };
        }
        let mut grads: Vec<Option<DenseArray<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(seed);
        for i in (0..n).rev() {
            if !needs[i] || matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(i, &dy, &needs, &mut grads);
            grads[i] = Some(dy);
        }
        // only leaves that asked for gradients keep them
        for (i, g) in grads.iter_mut().enumerate() {
            let keep = i < n && needs[i] && matches!(self.nodes[i].op, Op::Leaf(_));
            if !keep {
                *g = None;
            } else if g.is_none() {
                *g = Some(DenseArray::zeros(&self.nodes[i].shape));
            }
        }
        let applicable = self
            .nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf(LeafKind::Param)))
            .collect();
        Ok(Gradients { grads, applicable })
    }

    fn backprop(
        &self,
        i: usize,
        dy: &DenseArray<T>,
        needs: &[bool],
        grads: &mut [Option<DenseArray<T>>],
    ) {
        let node = &self.nodes[i];
        let want = |id: &NodeId| needs[id.0];
        match &node.op {
            Op::Leaf(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (batch, out_dim, in_dim) = (node.shape[0], node.shape[1], xv.shape()[1]);
                if want(x) {
                    let g = grad_slot(grads, *x, xv.shape());
                    // dx (B x in) += dy (B x out) * W (out x in)
                    kernels::matmul(
                        batch,
                        out_dim,
                        in_dim,
                        dy.data(),
                        false,
                        wv.data(),
                        false,
                        T::one(),
                        g.data_mut(),
                    );
                }
                if want(w) {
                    let g = grad_slot(grads, *w, wv.shape());
                    // dW (out x in) += dy^T * x
                    kernels::matmul(
                        out_dim,
                        batch,
                        in_dim,
                        dy.data(),
                        true,
                        xv.data(),
                        false,
                        T::one(),
                        g.data_mut(),
                    );
                }
                if want(b) {
                    let g = grad_slot(grads, *b, &[out_dim]);
                    for row in dy.data().chunks(out_dim) {
                        for (d, &v) in g.data_mut().iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let s = self.conv_shapes(*x, *w, *stride, *pad);
                let (xv, wv) = (self.val(*x), self.val(*w));
                let mut dx = want(x).then(|| take_or_zeros(grads, *x, xv.shape()));
                let mut dw = want(w).then(|| take_or_zeros(grads, *w, wv.shape()));
                let mut db = want(b).then(|| take_or_zeros(grads, *b, self.shape(*b)));
                kernels::conv2d_backward(
                    &s,
                    xv.data(),
                    wv.data(),
                    dy.data(),
                    dx.as_mut().map(|g| g.data_mut()),
                    dw.as_mut().map(|g| g.data_mut()),
                    db.as_mut().map(|g| g.data_mut()),
                );
                put_back(grads, [(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let s = self.conv_t_shapes(&node.shape, *w, *stride, *pad);
                let (xv, wv) = (self.val(*x), self.val(*w));
                let c_in = xv.shape()[1];
                let mut dx = want(x).then(|| take_or_zeros(grads, *x, xv.shape()));
                let mut dw = want(w).then(|| take_or_zeros(grads, *w, wv.shape()));
                let mut db = want(b).then(|| take_or_zeros(grads, *b, self.shape(*b)));
                kernels::conv_t_backward(
                    &s,
                    c_in,
                    xv.data(),
                    wv.data(),
                    dy.data(),
                    dx.as_mut().map(|g| g.data_mut()),
                    dw.as_mut().map(|g| g.data_mut()),
                    db.as_mut().map(|g| g.data_mut()),
                );
                put_back(grads, [(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::Sin { x, freq } => {
                if want(x) {
                    let xv = self.val(*x);
                    let g = grad_slot(grads, *x, xv.shape());
                    T::add_sin_grad(T::of(*freq), xv.data(), dy.data(), g.data_mut());
                }
            }
            Op::Relu { x } => {
                if want(x) {
                    let xv = self.val(*x);
                    let g = grad_slot(grads, *x, xv.shape());
                    for ((d, &xi), &gi) in g.data_mut().iter_mut().zip(xv.data()).zip(dy.data()) {
                        if xi > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if want(x) {
                    let g = grad_slot(grads, *x, &self.nodes[x.0].shape);
                    add_into(g.data_mut(), dy.data());
                }
            }
            Op::Concat { xs, axis } => {
                let outer: usize = node.shape[..*axis].iter().product();
                let mut offset = 0;
                for o in 0..outer {
                    for id in xs {
                        let block = numel(self.shape(*id)) / outer.max(1);
                        if want(id) {
                            let shape = self.shape(*id).to_vec();
                            let g = grad_slot(grads, *id, &shape);
                            add_into(
                                &mut g.data_mut()[o * block..(o + 1) * block],
                                &dy.data()[offset..offset + block],
                            );
                        }
                        offset += block;
                    }
                }
            }
            Op::Softmax { x } => {
                if want(x) {
                    let y = node.value.as_ref().expect("evaluated");
                    let c = *node.shape.last().unwrap();
                    let g = grad_slot(grads, *x, &node.shape);
                    for ((gr, yr), dr) in g
                        .data_mut()
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(dy.data().chunks(c))
                    {
                        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yi), &di) in gr.iter_mut().zip(yr).zip(dr) {
                            *d = *d + yi * (di - dot);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                if want(logits) {
                    let v = self.val(*logits);
                    let c = v.shape()[1];
                    let scale = dy.data()[0] / T::of(targets.len() as f64);
                    let g = grad_slot(grads, *logits, v.shape());
                    for ((gr, row), &t) in g
                        .data_mut()
                        .chunks_mut(c)
                        .zip(v.data().chunks(c))
                        .zip(targets)
                    {
                        let mut p = row.to_vec();
                        softmax_in_place(&mut p);
                        p[t] = p[t] - T::one();
                        for (d, &pi) in gr.iter_mut().zip(&p) {
                            *d = *d + scale * pi;
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.val(*pred), self.val(*target));
                let scale = T::of(2.0) * dy.data()[0] / T::of(p.len() as f64);
                for (id, sign) in [(*pred, T::one()), (*target, -T::one())] {
                    if want(&id) {
                        let g = grad_slot(grads, id, p.shape());
                        for ((d, &a), &b) in g.data_mut().iter_mut().zip(p.data()).zip(t.data()) {
                            *d = *d + sign * scale * (a - b);
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                if want(x) {
                    let xs = self.shape(*x).to_vec();
                    let (outer, n, inner) = axis_split(&xs, *axis);
                    let scale = T::one() / T::of(n as f64);
                    let g = grad_slot(grads, *x, &xs);
                    for o in 0..outer {
                        let src = &dy.data()[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let dst =
                                &mut g.data_mut()[(o * n + j) * inner..(o * n + j + 1) * inner];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s * scale;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxEntropy { x } => {
                if want(x) {
                    let v = self.val(*x);
                    let c = *v.shape().last().unwrap();
                    let g = grad_slot(grads, *x, v.shape());
                    // dH/dl_j = -p_j (log p_j + H)
                    for ((gr, row), &d) in g
                        .data_mut()
                        .chunks_mut(c)
                        .zip(v.data().chunks(c))
                        .zip(dy.data())
                    {
                        let lse = log_sum_exp(row);
                        let h = softmax_entropy(row);
                        for (gj, &lj) in gr.iter_mut().zip(row) {
                            let logp = lj - lse;
                            *gj = *gj - d * logp.exp() * (logp + h);
                        }
                    }
                }
            }
        }
    }

    /// Applies one Adam step to every trainable leaf, in node order. Frozen and
    /// constant leaves are never touched.
    pub fn apply_adam(&mut self, state: &mut AdamState<T>, grads: &Gradients<T>) -> Result<()> {
        let ids = self.trainable();
        let mut params: Vec<DenseArray<T>> = ids
            .iter()
            .map(|id| self.nodes[id.0].value.clone().expect("params hold values"))
            .collect();
        let gs: Vec<DenseArray<T>> = ids
            .iter()
            .map(|id| {
                grads
                    .get(*id)
                    .cloned()
                    .unwrap_or_else(|| DenseArray::zeros(self.shape(*id)))
            })
            .collect();
        state.step(&mut params, &gs)?;
        for (id, p) in ids.into_iter().zip(params) {
            self.nodes[id.0].value = Some(p);
        }
        self.evaluated = false;
        Ok(())
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn grad_slot<'a, T: Scalar>(
    grads: &'a mut [Option<DenseArray<T>>],
    id: NodeId,
    shape: &[usize],
) -> &'a mut DenseArray<T> {
    grads[id.0].get_or_insert_with(|| DenseArray::zeros(shape))
}

fn take_or_zeros<T: Scalar>(
    grads: &mut [Option<DenseArray<T>>],
    id: NodeId,
    shape: &[usize],
) -> DenseArray<T> {
    grads[id.0]
        .take()
        .unwrap_or_else(|| DenseArray::zeros(shape))
}

fn put_back<T: Scalar, const N: usize>(
    grads: &mut [Option<DenseArray<T>>],
    items: [(NodeId, Option<DenseArray<T>>); N],
) {
    for (id, g) in items {
        if let Some(g) = g {
            grads[id.0] = Some(g);
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

pub(crate) fn softmax_entropy<T: Scalar>(row: &[T]) -> T {
    let lse = log_sum_exp(row);
    -row.iter()
        .map(|&l| {
            let logp = l - lse;
            logp.exp() * logp
        })
        .sum::<T>()
}
