//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once per model: nodes are appended in topological
//! order and never change afterwards. Leaves are rebound to fresh tensors on
//! every call, so the same graph serves training, sampling, and evaluation
//! without reconstruction. There are three leaf roles: `Input` leaves carry a
//! per-sample shape and are bound to batched values `[batch, ...]`; `Param`
//! leaves are trainable tensors with a fixed shape; `State` leaves are
//! non-trainable buffers (batch-norm running statistics).
//!
//! Shape checking happens when a node is added — a mis-sized architecture
//! fails at build time, before any compute. At run time, every op output is
//! scanned for NaN/Inf and evaluation stops with an error rather than letting
//! poison values propagate.
//!
//! [`backward`] seeds from a scalar node and returns cotangents for every
//! reachable node, including `Input` leaves — Langevin sampling differentiates
//! the energy with respect to the voxel input, not just the weights.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub usize);

/// Whether a node's value carries a leading batch axis.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueKind {
    /// Value shape is `[batch, per_sample...]`; batch size is discovered when
    /// leaves are bound.
    Batched(Vec<usize>),
    /// Value shape is exactly this, independent of batch (parameters and
    /// reduction outputs).
    Fixed(Vec<usize>),
}

impl ValueKind {
    pub fn per_sample(&self) -> Option<&[usize]> {
        match self {
            ValueKind::Batched(s) => Some(s),
            ValueKind::Fixed(_) => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LeafRole {
    Input,
    Param,
    State,
}

/// Batch-norm behavior switch: `Train` normalizes with batch statistics,
/// `Eval` with the bound running statistics. Everything else is unaffected.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Which cotangents [`backward`] should materialize. `InputsOnly` skips the
/// weight/bias gradients of conv, deconv, fully-connected, and batch-norm
/// nodes — Langevin steps only need the gradient at the voxel input, and the
/// parameter gradients are the most expensive part of the pass.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GradScope {
    All,
    InputsOnly,
}

#[derive(Clone, Debug)]
pub enum Node {
    Leaf {
        name: String,
        role: LeafRole,
    },
    Conv3d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Deconv3d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        up: usize,
    },
    FullyConnected {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    MaxPool3d {
        input: NodeId,
        kernel: usize,
    },
    BatchNorm3d {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        eps: f32,
    },
    Reshape {
        input: NodeId,
        per_sample: Vec<usize>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f32,
    },
    /// Sum of every element (batch included) to a single scalar.
    Sum {
        input: NodeId,
    },
    /// `(1/batch) * Σ (a - b)²` over all elements; the per-sample squared
    /// error averaged over the batch.
    SquaredDiffMean {
        a: NodeId,
        b: NodeId,
    },
}

#[derive(Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    kinds: Vec<ValueKind>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            kinds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn kind(&self, id: NodeId) -> &ValueKind {
        &self.kinds[id.0]
    }

    /// Leaves in insertion order as `(id, name, role)`.
    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &str, LeafRole)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Leaf { name, role } => Some((NodeId(i), name.as_str(), *role)),
            _ => None,
        })
    }

    fn push(&mut self, node: Node, kind: ValueKind) -> NodeId {
        self.nodes.push(node);
        self.kinds.push(kind);
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Shape(format!("node id {} out of range", id.0)));
        }
        Ok(())
    }

    fn batched4(&self, id: NodeId, ctx: &str) -> Result<[usize; 4]> {
        match self.kind(id) {
            ValueKind::Batched(s) if s.len() == 4 => Ok([s[0], s[1], s[2], s[3]]),
            k => Err(Error::Shape(format!(
                "{ctx} wants a batched [channels, depth, height, width] input, got {k:?}"
            ))),
        }
    }

    fn fixed(&self, id: NodeId, ctx: &str) -> Result<&[usize]> {
        match self.kind(id) {
            ValueKind::Fixed(s) => Ok(s),
            k => Err(Error::Shape(format!("{ctx} must be a fixed-shape leaf, got {k:?}"))),
        }
    }

    // ── leaves ──

    pub fn input(&mut self, name: &str, per_sample: &[usize]) -> NodeId {
        self.push(
            Node::Leaf {
                name: name.to_string(),
                role: LeafRole::Input,
            },
            ValueKind::Batched(per_sample.to_vec()),
        )
    }

    pub fn param(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            Node::Leaf {
                name: name.to_string(),
                role: LeafRole::Param,
            },
            ValueKind::Fixed(shape.to_vec()),
        )
    }

    pub fn state(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            Node::Leaf {
                name: name.to_string(),
                role: LeafRole::State,
            },
            ValueKind::Fixed(shape.to_vec()),
        )
    }

    // ── ops ──

    /// 3-D convolution, SAME-style zero padding, output extent `ceil(n/stride)`.
    /// Weight layout `[out_ch, in_ch, kd, kh, kw]`, bias `[out_ch]`.
    pub fn conv3d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        self.check(input)?;
        if stride == 0 {
            return Err(Error::Shape("conv3d stride must be >= 1".into()));
        }
        let [c, d, h, w] = self.batched4(input, "conv3d")?;
        let ws = self.fixed(weight, "conv3d weight")?.to_vec();
        let bs = self.fixed(bias, "conv3d bias")?.to_vec();
        if ws.len() != 5 {
            return Err(Error::Shape(format!("conv3d weight must be rank 5, got {ws:?}")));
        }
        if ws[1] != c {
            return Err(Error::Shape(format!(
                "conv3d channel mismatch: input has {c}, weight expects {}",
                ws[1]
            )));
        }
        if ws[2] == 0 || ws[3] == 0 || ws[4] == 0 {
            return Err(Error::Shape("conv3d kernel extents must be >= 1".into()));
        }
        if bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "conv3d bias must be [{}], got {bs:?}",
                ws[0]
            )));
        }
        let out = [
            ws[0],
            kernels::ceil_div(d, stride),
            kernels::ceil_div(h, stride),
            kernels::ceil_div(w, stride),
        ];
        Ok(self.push(
            Node::Conv3d {
                input,
                weight,
                bias,
                stride,
            },
            ValueKind::Batched(out.to_vec()),
        ))
    }

    /// Transposed 3-D convolution (exact adjoint of [`Graph::conv3d`] with
    /// stride = `up` as a linear map). Weight layout `[in_ch, out_ch, kd, kh, kw]`,
    /// output extent = input extent × `up`.
    pub fn deconv3d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, up: usize) -> Result<NodeId> {
        self.check(input)?;
        if up == 0 {
            return Err(Error::Shape("deconv3d up factor must be >= 1".into()));
        }
        let [c, d, h, w] = self.batched4(input, "deconv3d")?;
        let ws = self.fixed(weight, "deconv3d weight")?.to_vec();
        let bs = self.fixed(bias, "deconv3d bias")?.to_vec();
        if ws.len() != 5 {
            return Err(Error::Shape(format!("deconv3d weight must be rank 5, got {ws:?}")));
        }
        if ws[0] != c {
            return Err(Error::Shape(format!(
                "deconv3d channel mismatch: input has {c}, weight expects {}",
                ws[0]
            )));
        }
        if bs != [ws[1]] {
            return Err(Error::Shape(format!(
                "deconv3d bias must be [{}], got {bs:?}",
                ws[1]
            )));
        }
        let out = [ws[1], d * up, h * up, w * up];
        Ok(self.push(
            Node::Deconv3d {
                input,
                weight,
                bias,
                up,
            },
            ValueKind::Batched(out.to_vec()),
        ))
    }

    /// Dense layer over the flattened per-sample input. Weight layout
    /// `[out_features, in_features]`, bias `[out_features]`.
    pub fn fully_connected(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let per = match self.kind(input) {
            ValueKind::Batched(s) => s.clone(),
            k => {
                return Err(Error::Shape(format!(
                    "fully_connected wants a batched input, got {k:?}"
                )))
            }
        };
        let in_features: usize = per.iter().product();
        let ws = self.fixed(weight, "fully_connected weight")?.to_vec();
        let bs = self.fixed(bias, "fully_connected bias")?.to_vec();
        if ws.len() != 2 || ws[1] != in_features {
            return Err(Error::Shape(format!(
                "fully_connected weight must be [out, {in_features}], got {ws:?}"
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "fully_connected bias must be [{}], got {bs:?}",
                ws[0]
            )));
        }
        Ok(self.push(
            Node::FullyConnected { input, weight, bias },
            ValueKind::Batched(vec![ws[0]]),
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let kind = self.kind(input).clone();
        self.push(Node::Relu { input }, kind)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let kind = self.kind(input).clone();
        self.push(Node::Tanh { input }, kind)
    }

    /// Non-overlapping max pooling with ceil partition: output extent
    /// `ceil(n/kernel)`, trailing blocks may be smaller than `kernel`.
    pub fn maxpool3d(&mut self, input: NodeId, kernel: usize) -> Result<NodeId> {
        self.check(input)?;
        if kernel == 0 {
            return Err(Error::Shape("maxpool3d kernel must be >= 1".into()));
        }
        let [c, d, h, w] = self.batched4(input, "maxpool3d")?;
        if kernel > d || kernel > h || kernel > w {
            return Err(Error::Shape(format!(
                "maxpool3d kernel {kernel} exceeds input extent [{d}, {h}, {w}]"
            )));
        }
        let out = [
            c,
            kernels::ceil_div(d, kernel),
            kernels::ceil_div(h, kernel),
            kernels::ceil_div(w, kernel),
        ];
        Ok(self.push(
            Node::MaxPool3d { input, kernel },
            ValueKind::Batched(out.to_vec()),
        ))
    }

    /// Per-channel batch normalization over `[batch, depth, height, width]`.
    /// `scale`/`shift` are trainable `[channels]` parameters; `running_mean`
    /// and `running_var` are `[channels]` state leaves consumed in `Eval` mode.
    pub fn batchnorm3d(
        &mut self,
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        eps: f32,
    ) -> Result<NodeId> {
        self.check(input)?;
        let [c, _, _, _] = self.batched4(input, "batchnorm3d")?;
        for (id, what) in [
            (scale, "scale"),
            (shift, "shift"),
            (running_mean, "running_mean"),
            (running_var, "running_var"),
        ] {
            let s = self.fixed(id, "batchnorm3d")?;
            if s != [c] {
                return Err(Error::Shape(format!(
                    "batchnorm3d {what} must be [{c}], got {s:?}"
                )));
            }
        }
        let kind = self.kind(input).clone();
        Ok(self.push(
            Node::BatchNorm3d {
                input,
                scale,
                shift,
                running_mean,
                running_var,
                eps,
            },
            kind,
        ))
    }

    pub fn reshape(&mut self, input: NodeId, per_sample: &[usize]) -> Result<NodeId> {
        self.check(input)?;
        let old = match self.kind(input) {
            ValueKind::Batched(s) => s.clone(),
            k => return Err(Error::Shape(format!("reshape wants a batched input, got {k:?}"))),
        };
        let a: usize = old.iter().product();
        let b: usize = per_sample.iter().product();
        if a != b {
            return Err(Error::Shape(format!(
                "reshape element mismatch: {old:?} -> {per_sample:?}"
            )));
        }
        Ok(self.push(
            Node::Reshape {
                input,
                per_sample: per_sample.to_vec(),
            },
            ValueKind::Batched(per_sample.to_vec()),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_kind(a, b, "add")?;
        let kind = self.kind(a).clone();
        Ok(self.push(Node::Add { a, b }, kind))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_kind(a, b, "mul")?;
        let kind = self.kind(a).clone();
        Ok(self.push(Node::Mul { a, b }, kind))
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> NodeId {
        let kind = self.kind(input).clone();
        self.push(Node::Scale { input, factor }, kind)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        self.push(Node::Sum { input }, ValueKind::Fixed(vec![1]))
    }

    pub fn squared_diff_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_kind(a, b, "squared_diff_mean")?;
        if matches!(self.kind(a), ValueKind::Fixed(_)) {
            return Err(Error::Shape(
                "squared_diff_mean wants batched operands".into(),
            ));
        }
        Ok(self.push(Node::SquaredDiffMean { a, b }, ValueKind::Fixed(vec![1])))
    }

    fn same_kind(&self, a: NodeId, b: NodeId, ctx: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.kind(a) != self.kind(b) {
            return Err(Error::Shape(format!(
                "{ctx} operand kinds differ: {:?} vs {:?}",
                self.kind(a),
                self.kind(b)
            )));
        }
        Ok(())
    }
}

// ── evaluation ──

/// Leaf bindings for one evaluation. Tensors are borrowed; the graph never
/// takes ownership of data.
pub struct Bindings<'a> {
    slots: Vec<Option<&'a Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn for_graph(graph: &Graph) -> Bindings<'a> {
        Bindings {
            slots: vec![None; graph.len()],
        }
    }

    pub fn bind(&mut self, id: NodeId, tensor: &'a Tensor) -> &mut Self {
        self.slots[id.0] = Some(tensor);
        self
    }

    pub fn get(&self, id: NodeId) -> Option<&'a Tensor> {
        self.slots[id.0]
    }
}

/// All node values from one forward pass.
pub struct Values {
    vals: Vec<Tensor>,
    mode: Mode,
    batch: usize,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.vals[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Batch size discovered from the bound input leaves (1 if none).
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Cotangents produced by [`backward`], indexed by node.
pub struct GradMap {
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    /// An empty map able to hold a gradient for every node of `graph`.
    pub fn for_graph(graph: &Graph) -> GradMap {
        GradMap {
            grads: vec![None; graph.len()],
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }

    pub fn insert(&mut self, id: NodeId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }
}

fn expected_value_shape(kind: &ValueKind, batch: usize) -> Vec<usize> {
    match kind {
        ValueKind::Batched(per) => {
            let mut s = Vec::with_capacity(per.len() + 1);
            s.push(batch);
            s.extend_from_slice(per);
            s
        }
        ValueKind::Fixed(s) => s.clone(),
    }
}

/// Evaluate every node. All leaves must be bound; batch size must agree across
/// input leaves; every op output is checked finite.
pub fn forward(graph: &Graph, bindings: &Bindings, mode: Mode) -> Result<Values> {
    // Discover the batch size from bound input leaves.
    let mut batch: Option<usize> = None;
    for (id, name, _) in graph.leaves() {
        let bound = bindings
            .get(id)
            .ok_or_else(|| Error::Unbound(name.to_string()))?;
        match graph.kind(id) {
            ValueKind::Batched(per) => {
                let s = bound.shape();
                if s.len() != per.len() + 1 || &s[1..] != per.as_slice() {
                    return Err(Error::Shape(format!(
                        "leaf '{name}' wants [batch, {per:?}], got {s:?}"
                    )));
                }
                match batch {
                    None => batch = Some(s[0]),
                    Some(n) if n == s[0] => {}
                    Some(n) => {
                        return Err(Error::Shape(format!(
                            "inconsistent batch size: {n} vs {} at leaf '{name}'",
                            s[0]
                        )))
                    }
                }
            }
            ValueKind::Fixed(shape) => {
                if bound.shape() != shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "leaf '{name}' wants {shape:?}, got {:?}",
                        bound.shape()
                    )));
                }
            }
        }
    }
    let batch = batch.unwrap_or(1);
    if batch == 0 {
        return Err(Error::Shape("batch size must be >= 1".into()));
    }

    let mut vals: Vec<Tensor> = Vec::with_capacity(graph.len());
    for (i, node) in graph.nodes().iter().enumerate() {
        let id = NodeId(i);
        let out_shape = expected_value_shape(graph.kind(id), batch);
        let out = match node {
            Node::Leaf { .. } => bindings.get(id).unwrap().clone(),
            Node::Conv3d {
                input,
                weight,
                bias,
                stride,
            } => {
                let dims = kernels::ConvDims::from_shapes(
                    vals[input.0].shape(),
                    vals[weight.0].shape(),
                    *stride,
                );
                let data = kernels::conv3d_forward(
                    vals[input.0].data(),
                    vals[weight.0].data(),
                    vals[bias.0].data(),
                    &dims,
                );
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Deconv3d {
                input,
                weight,
                bias,
                up,
            } => {
                let dims = kernels::DeconvDims::from_shapes(
                    vals[input.0].shape(),
                    vals[weight.0].shape(),
                    *up,
                );
                let data = kernels::deconv3d_forward(
                    vals[input.0].data(),
                    vals[weight.0].data(),
                    vals[bias.0].data(),
                    &dims,
                );
                Tensor::from_vec(&out_shape, data)?
            }
            Node::FullyConnected { input, weight, bias } => {
                let x = &vals[input.0];
                let n = x.shape()[0];
                let in_features = x.numel() / n;
                let data = kernels::fc_forward(
                    x.data(),
                    vals[weight.0].data(),
                    vals[bias.0].data(),
                    n,
                    in_features,
                );
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Relu { input } => {
                let data = vals[input.0].data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Tanh { input } => {
                let data = vals[input.0].data().iter().map(|&v| v.tanh()).collect();
                Tensor::from_vec(&out_shape, data)?
            }
            Node::MaxPool3d { input, kernel } => {
                let x = &vals[input.0];
                let s = x.shape();
                let data = kernels::maxpool3d_forward(
                    x.data(),
                    s[0] * s[1],
                    [s[2], s[3], s[4]],
                    *kernel,
                );
                Tensor::from_vec(&out_shape, data)?
            }
            Node::BatchNorm3d {
                input,
                scale,
                shift,
                running_mean,
                running_var,
                eps,
            } => {
                let x = &vals[input.0];
                if mode == Mode::Train && x.shape()[0] < 2 {
                    return Err(Error::Shape(
                        "batchnorm3d training requires batch size >= 2 (variance is degenerate)"
                            .into(),
                    ));
                }
                let (mean, var) = match mode {
                    Mode::Train => kernels::batchnorm_batch_stats(x.data(), x.shape()),
                    Mode::Eval => (
                        vals[running_mean.0].data().iter().map(|&v| v as f64).collect(),
                        vals[running_var.0].data().iter().map(|&v| v as f64).collect(),
                    ),
                };
                let data = kernels::batchnorm_normalize(
                    x.data(),
                    x.shape(),
                    &mean,
                    &var,
                    vals[scale.0].data(),
                    vals[shift.0].data(),
                    *eps,
                );
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Reshape { input, .. } => vals[input.0].reshaped(&out_shape)?,
            Node::Add { a, b } => {
                let data = vals[a.0]
                    .data()
                    .iter()
                    .zip(vals[b.0].data())
                    .map(|(x, y)| x + y)
                    .collect();
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Mul { a, b } => {
                let data = vals[a.0]
                    .data()
                    .iter()
                    .zip(vals[b.0].data())
                    .map(|(x, y)| x * y)
                    .collect();
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Scale { input, factor } => {
                let data = vals[input.0].data().iter().map(|&v| v * factor).collect();
                Tensor::from_vec(&out_shape, data)?
            }
            Node::Sum { input } => Tensor::scalar(vals[input.0].sum() as f32),
            Node::SquaredDiffMean { a, b } => {
                let n = vals[a.0].shape()[0] as f64;
                let s: f64 = vals[a.0]
                    .data()
                    .iter()
                    .zip(vals[b.0].data())
                    .map(|(&x, &y)| {
                        let d = (x - y) as f64;
                        d * d
                    })
                    .sum();
                Tensor::scalar((s / n) as f32)
            }
        };
        if !matches!(node, Node::Leaf { .. }) && !out.all_finite() {
            return Err(Error::NonFinite {
                node: i,
                detail: format!("{node:?}"),
            });
        }
        // Leaf values are trusted to be finite by the callers that made them;
        // Langevin guards its own state and data loading validates files.
        vals.push(out);
    }

    Ok(Values { vals, mode, batch })
}

/// Reverse-mode pass from a scalar `seed` node. Returns cotangents for every
/// node the seed depends on; with [`GradScope::InputsOnly`] the parameter
/// gradients of the heavy layers are skipped.
pub fn backward(graph: &Graph, values: &Values, seed: NodeId, scope: GradScope) -> Result<GradMap> {
    if values.get(seed).numel() != 1 {
        return Err(Error::Shape(format!(
            "backward seed must be scalar, node has {} elements",
            values.get(seed).numel()
        )));
    }
    let want_params = scope == GradScope::All;
    let mut grads: Vec<Option<Tensor>> = vec![None; graph.len()];
    grads[seed.0] = Some(Tensor::scalar(1.0));

    for i in (0..graph.len()).rev() {
        let g = match &grads[i] {
            Some(g) => g.clone(),
            None => continue,
        };
        match graph.node(NodeId(i)) {
            Node::Leaf { .. } => {}
            Node::Conv3d {
                input,
                weight,
                bias,
                stride,
            } => {
                let dims = kernels::ConvDims::from_shapes(
                    values.get(*input).shape(),
                    values.get(*weight).shape(),
                    *stride,
                );
                let gin = kernels::conv3d_backward_input(g.data(), values.get(*weight).data(), &dims);
                accumulate(&mut grads, *input, values.get(*input).shape(), gin)?;
                if want_params {
                    let gw =
                        kernels::conv3d_backward_weight(g.data(), values.get(*input).data(), &dims);
                    accumulate(&mut grads, *weight, values.get(*weight).shape(), gw)?;
                    let gb = kernels::conv3d_backward_bias(g.data(), &dims);
                    accumulate(&mut grads, *bias, values.get(*bias).shape(), gb)?;
                }
            }
            Node::Deconv3d {
                input,
                weight,
                bias,
                up,
            } => {
                let dims = kernels::DeconvDims::from_shapes(
                    values.get(*input).shape(),
                    values.get(*weight).shape(),
                    *up,
                );
                let gin =
                    kernels::deconv3d_backward_input(g.data(), values.get(*weight).data(), &dims);
                accumulate(&mut grads, *input, values.get(*input).shape(), gin)?;
                if want_params {
                    let gw =
                        kernels::deconv3d_backward_weight(g.data(), values.get(*input).data(), &dims);
                    accumulate(&mut grads, *weight, values.get(*weight).shape(), gw)?;
                    let gb = kernels::deconv3d_backward_bias(g.data(), &dims);
                    accumulate(&mut grads, *bias, values.get(*bias).shape(), gb)?;
                }
            }
            Node::FullyConnected { input, weight, bias } => {
                let x = values.get(*input);
                let n = x.shape()[0];
                let in_features = x.numel() / n;
                let out_features = values.get(*weight).shape()[0];
                let gin = kernels::fc_backward_input(
                    g.data(),
                    values.get(*weight).data(),
                    n,
                    in_features,
                    out_features,
                );
                accumulate(&mut grads, *input, x.shape(), gin)?;
                if want_params {
                    let gw = kernels::fc_backward_weight(g.data(), x.data(), n, in_features, out_features);
                    accumulate(&mut grads, *weight, values.get(*weight).shape(), gw)?;
                    let gb = kernels::fc_backward_bias(g.data(), n, out_features);
                    accumulate(&mut grads, *bias, values.get(*bias).shape(), gb)?;
                }
            }
            Node::Relu { input } => {
                let x = values.get(*input);
                let gin: Vec<f32> = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(&mut grads, *input, x.shape(), gin)?;
            }
            Node::Tanh { input } => {
                let y = values.get(NodeId(i));
                let gin: Vec<f32> = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&t, &gv)| gv * (1.0 - t * t))
                    .collect();
                accumulate(&mut grads, *input, values.get(*input).shape(), gin)?;
            }
            Node::MaxPool3d { input, kernel } => {
                let x = values.get(*input);
                let s = x.shape();
                let gin = kernels::maxpool3d_backward(
                    g.data(),
                    x.data(),
                    s[0] * s[1],
                    [s[2], s[3], s[4]],
                    *kernel,
                );
                accumulate(&mut grads, *input, s, gin)?;
            }
            Node::BatchNorm3d {
                input,
                scale,
                shift,
                running_mean,
                running_var,
                eps,
            } => {
                let x = values.get(*input);
                let (mean, var) = match values.mode() {
                    Mode::Train => kernels::batchnorm_batch_stats(x.data(), x.shape()),
                    Mode::Eval => (
                        values
                            .get(*running_mean)
                            .data()
                            .iter()
                            .map(|&v| v as f64)
                            .collect(),
                        values
                            .get(*running_var)
                            .data()
                            .iter()
                            .map(|&v| v as f64)
                            .collect(),
                    ),
                };
                let bn = kernels::batchnorm_backward(
                    g.data(),
                    x.data(),
                    x.shape(),
                    &mean,
                    &var,
                    values.get(*scale).data(),
                    *eps,
                    values.mode() == Mode::Train,
                    want_params,
                );
                accumulate(&mut grads, *input, x.shape(), bn.input)?;
                if want_params {
                    accumulate(&mut grads, *scale, values.get(*scale).shape(), bn.scale)?;
                    accumulate(&mut grads, *shift, values.get(*shift).shape(), bn.shift)?;
                }
            }
            Node::Reshape { input, .. } => {
                accumulate(
                    &mut grads,
                    *input,
                    values.get(*input).shape(),
                    g.data().to_vec(),
                )?;
            }
            Node::Add { a, b } => {
                accumulate(&mut grads, *a, values.get(*a).shape(), g.data().to_vec())?;
                accumulate(&mut grads, *b, values.get(*b).shape(), g.data().to_vec())?;
            }
            Node::Mul { a, b } => {
                let ga: Vec<f32> = g
                    .data()
                    .iter()
                    .zip(values.get(*b).data())
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let gb: Vec<f32> = g
                    .data()
                    .iter()
                    .zip(values.get(*a).data())
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                accumulate(&mut grads, *a, values.get(*a).shape(), ga)?;
                accumulate(&mut grads, *b, values.get(*b).shape(), gb)?;
            }
            Node::Scale { input, factor } => {
                let gin: Vec<f32> = g.data().iter().map(|&gv| gv * factor).collect();
                accumulate(&mut grads, *input, values.get(*input).shape(), gin)?;
            }
            Node::Sum { input } => {
                let gv = g.data()[0];
                let x = values.get(*input);
                accumulate(&mut grads, *input, x.shape(), vec![gv; x.numel()])?;
            }
            Node::SquaredDiffMean { a, b } => {
                let gv = g.data()[0];
                let n = values.get(*a).shape()[0] as f32;
                let scale = 2.0 * gv / n;
                let ga: Vec<f32> = values
                    .get(*a)
                    .data()
                    .iter()
                    .zip(values.get(*b).data())
                    .map(|(&x, &y)| scale * (x - y))
                    .collect();
                let gb: Vec<f32> = ga.iter().map(|&v| -v).collect();
                accumulate(&mut grads, *a, values.get(*a).shape(), ga)?;
                accumulate(&mut grads, *b, values.get(*b).shape(), gb)?;
            }
        }
    }

    for (i, g) in grads.iter().enumerate() {
        if let Some(t) = g {
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    detail: "gradient".into(),
                });
            }
        }
    }
    Ok(GradMap { grads })
}

fn accumulate(
    grads: &mut [Option<Tensor>],
    id: NodeId,
    shape: &[usize],
    contribution: Vec<f32>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            for (dst, src) in existing.data_mut().iter_mut().zip(&contribution) {
                *dst += src;
            }
            Ok(())
        }
        slot => {
            *slot = Some(Tensor::from_vec(shape, contribution)?);
            Ok(())
        }
    }
}
