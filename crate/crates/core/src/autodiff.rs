//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is an append-only tape: every op pushes a node holding its
//! output value and the ids of its parents, so topological order is just
//! node order and [`Graph::backward`] is a single reverse sweep. Gradients
//! accumulate with `+=` into every tracked node; running backward twice
//! without [`Graph::clear_grads`] doubles them.
//!
//! Besides the generic ops (`matmul`, `add`, `relu`, `sigmoid`, `concat`,
//! `sum_over`, `scale`, ...) there are a few fused ops shaped for the
//! message-passing model: `linear_onehot_relu` folds the constant edge-type
//! one-hot into the weight matrix's trailing rows, `dual_matmul_relu` fuses
//! the concat-then-linear node update, and `edge_aggregate` performs the
//! batched neighbor sum. Fusion exists to avoid materialising concatenation
//! buffers, not to change semantics — every op is validated against the
//! finite-difference oracle.
//!
//! Heavy ops dispatch into [`crate::kernels`], which parallelises over
//! disjoint output rows; results are bitwise identical with parallelism on
//! or off, which is what makes seeded runs reproducible end to end.

use crate::kernels;
use crate::util::for_each_chunk_mut;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape"
        );
        TensorData { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorData {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        TensorData {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows/cols of a rank-2 tensor (rank-1 counts as a single row).
    fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("expected rank <= 2, got {:?}", self.shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[m,n] + [n]`, bias broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[b*n, h] + [n, h]`, the rhs tiled over the `b` leading blocks.
    AddBlockBroadcast(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    /// Sum along `axis` of a rank-2 tensor (or the only axis of rank-1).
    SumOver(NodeId, usize),
    MeanAll(NodeId),
    Reshape(NodeId),
    /// `relu(x @ w + b)`
    MatmulBiasRelu(NodeId, NodeId, NodeId),
    /// `x @ w + b`
    MatmulBias(NodeId, NodeId, NodeId),
    /// `relu(x @ w[..in] + w[in + hot])` — a linear layer over the
    /// concatenation of `x` with a constant one-hot of width `classes`.
    LinearOneHotRelu {
        x: NodeId,
        w: NodeId,
        hot: usize,
        classes: usize,
    },
    /// `relu(a @ w[..ha] + b @ w[ha..])` — linear over `[a ; b]`.
    DualMatmulRelu { a: NodeId, b: NodeId, w: NodeId },
    /// Batched neighbor sum: for each block `bb`,
    /// `out[bb*n_dst + d] += src[bb*n_src + s]` for every edge `(s, d)`.
    EdgeAggregate {
        src: NodeId,
        edges: Arc<Vec<(u32, u32)>>,
        n_src: usize,
        n_dst: usize,
    },
    /// `out[r, perm[c]] = x[r, c]` — column `c` moves to position `perm[c]`.
    PermuteCols { x: NodeId, perm: Arc<Vec<usize>> },
    /// Mean over all elements of the numerically stable binary
    /// cross-entropy with logits against constant targets.
    BceWithLogits { logits: NodeId, labels: Arc<Vec<f64>> },
}

struct Node {
    value: TensorData,
    grad: Option<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Free interior value/grad buffers as soon as the reverse sweep is done
    /// with them (training-batch graphs peak at hundreds of MB otherwise).
    free_buffers: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Enable in-sweep buffer release. After `backward` only leaf values and
    /// leaf gradients remain readable.
    pub fn set_free_buffers(&mut self, free: bool) {
        self.free_buffers = free;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input.
    pub fn constant(&mut self, value: TensorData) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf (copies the parameter value onto the tape).
    pub fn param(&mut self, value: &TensorData) -> NodeId {
        self.push(value.clone(), Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &TensorData {
        &self.nodes[id.0].value
    }

    /// Borrow the raw gradient buffer of `id` (same layout as its value).
    pub fn grad_slice(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: TensorData, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    // ---- ops ------------------------------------------------------------

    /// `[m,k] @ [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.nodes[a.0].value.dims2();
        let (kb, n) = self.nodes[b.0].value.dims2();
        if ka != kb {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = TensorData::zeros(vec![m, n]);
        kernels::gemm_nn(m, ka, n, &self.nodes[a.0].value.data, &self.nodes[b.0].value.data, &mut out.data);
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = self.nodes[a.0].value.clone();
        for (o, &bv) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o += bv;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// `[m,n] + [n]` (bias row broadcast over rows).
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, n) = self.nodes[a.0].value.dims2();
        if self.nodes[bias.0].value.numel() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut out = self.nodes[a.0].value.clone();
        let bv = &self.nodes[bias.0].value.data;
        for row in out.data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let needs = self.needs(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), needs))
    }

    /// `[b*n, h] + [n, h]`, rhs tiled over the leading blocks.
    pub fn add_block_broadcast(&mut self, a: NodeId, t: NodeId) -> Result<NodeId> {
        let (rows, h) = self.nodes[a.0].value.dims2();
        let (n, ht) = self.nodes[t.0].value.dims2();
        if ht != h || n == 0 || rows % n != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_block_broadcast",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(t).to_vec(),
            });
        }
        let mut out = self.nodes[a.0].value.clone();
        let tv = &self.nodes[t.0].value.data;
        for block in out.data.chunks_mut(n * h) {
            for (o, &b) in block.iter_mut().zip(tv) {
                *o += b;
            }
        }
        let needs = self.needs(&[a, t]);
        Ok(self.push(out, Op::AddBlockBroadcast(a, t), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let needs = self.needs(&[x]);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data.iter_mut() {
            *v = stable_sigmoid(*v);
        }
        let needs = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), needs)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data.iter_mut() {
            *v *= k;
        }
        let needs = self.needs(&[x]);
        self.push(out, Op::Scale(x, k), needs)
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = self.nodes[a.0].value.clone();
        for (o, &bv) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o *= bv;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Concatenate rank-2 tensors along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let (m, _) = self.nodes[parts[0].0].value.dims2();
        let mut total = 0;
        for &p in parts {
            let (mp, np) = self.nodes[p.0].value.dims2();
            if mp != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += np;
        }
        let mut out = TensorData::zeros(vec![m, total]);
        let mut col = 0;
        for &p in parts {
            let (_, np) = self.nodes[p.0].value.dims2();
            let src = &self.nodes[p.0].value.data;
            for r in 0..m {
                out.data[r * total + col..r * total + col + np]
                    .copy_from_slice(&src[r * np..(r + 1) * np]);
            }
            col += np;
        }
        let needs = self.needs(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), needs))
    }

    /// Sum along `axis` (0 or 1) of a rank-2 tensor; rank-1 tensors reduce
    /// to a scalar with `axis = 0`.
    pub fn sum_over(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let (m, n) = self.nodes[x.0].value.dims2();
        if axis > 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "sum_over",
                lhs: self.shape(x).to_vec(),
                rhs: vec![axis],
            });
        }
        let data = &self.nodes[x.0].value.data;
        let out = if axis == 0 {
            let mut acc = vec![0.0; n];
            for row in data.chunks(n) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            TensorData::new(vec![n], acc)
        } else {
            let mut acc = vec![0.0; m];
            for (a, row) in acc.iter_mut().zip(data.chunks(n)) {
                *a = row.iter().sum();
            }
            TensorData::new(vec![m], acc)
        };
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::SumOver(x, axis), needs))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let mean = v.data.iter().sum::<f64>() / v.numel() as f64;
        let needs = self.needs(&[x]);
        self.push(TensorData::scalar(mean), Op::MeanAll(x), needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.nodes[x.0].value.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let out = TensorData::new(shape, self.nodes[x.0].value.data.clone());
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// `relu(x @ w + bias)`
    pub fn matmul_bias_relu(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        self.linear_inner(x, w, bias, true)
    }

    /// `x @ w + bias`
    pub fn matmul_bias(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        self.linear_inner(x, w, bias, false)
    }

    fn linear_inner(&mut self, x: NodeId, w: NodeId, bias: NodeId, relu: bool) -> Result<NodeId> {
        let (m, k) = self.nodes[x.0].value.dims2();
        let (kw, n) = self.nodes[w.0].value.dims2();
        if k != kw || self.nodes[bias.0].value.numel() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let mut out = TensorData::zeros(vec![m, n]);
        kernels::gemm_nn(m, k, n, &self.nodes[x.0].value.data, &self.nodes[w.0].value.data, &mut out.data);
        let bv = &self.nodes[bias.0].value.data;
        for row in out.data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
                if relu && *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
        let needs = self.needs(&[x, w, bias]);
        let op = if relu {
            Op::MatmulBiasRelu(x, w, bias)
        } else {
            Op::MatmulBias(x, w, bias)
        };
        Ok(self.push(out, op, needs))
    }

    /// Linear layer over `[x ; onehot(hot, classes)]` followed by ReLU.
    /// `w` has `x_cols + classes` rows; the one-hot block is folded into a
    /// row add instead of materialising the concatenation.
    pub fn linear_onehot_relu(
        &mut self,
        x: NodeId,
        w: NodeId,
        hot: usize,
        classes: usize,
    ) -> Result<NodeId> {
        let (m, k) = self.nodes[x.0].value.dims2();
        let (kw, n) = self.nodes[w.0].value.dims2();
        if kw != k + classes || hot >= classes {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear_onehot_relu",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let wdata = &self.nodes[w.0].value.data;
        let mut out = TensorData::zeros(vec![m, n]);
        kernels::gemm_nn(m, k, n, &self.nodes[x.0].value.data, &wdata[..k * n], &mut out.data);
        let hot_row = &wdata[(k + hot) * n..(k + hot + 1) * n];
        for row in out.data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(hot_row) {
                *o += b;
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
        let needs = self.needs(&[x, w]);
        Ok(self.push(out, Op::LinearOneHotRelu { x, w, hot, classes }, needs))
    }

    /// `relu([a ; b] @ w)` without materialising the concatenation.
    pub fn dual_matmul_relu(&mut self, a: NodeId, b: NodeId, w: NodeId) -> Result<NodeId> {
        let (m, ha) = self.nodes[a.0].value.dims2();
        let (mb, hb) = self.nodes[b.0].value.dims2();
        let (kw, n) = self.nodes[w.0].value.dims2();
        if m != mb || kw != ha + hb {
            return Err(AutodiffError::ShapeMismatch {
                op: "dual_matmul_relu",
                lhs: vec![m, ha + hb],
                rhs: self.shape(w).to_vec(),
            });
        }
        let wdata = &self.nodes[w.0].value.data;
        let mut out = TensorData::zeros(vec![m, n]);
        kernels::gemm_nn(m, ha, n, &self.nodes[a.0].value.data, &wdata[..ha * n], &mut out.data);
        let mut tmp = vec![0.0; m * n];
        kernels::gemm_nn(m, hb, n, &self.nodes[b.0].value.data, &wdata[ha * n..], &mut tmp);
        for (o, &t) in out.data.iter_mut().zip(&tmp) {
            *o += t;
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        let needs = self.needs(&[a, b, w]);
        Ok(self.push(out, Op::DualMatmulRelu { a, b, w }, needs))
    }

    /// Batched neighbor sum over a fixed edge list (see [`Op::EdgeAggregate`]).
    /// `src` has `blocks * n_src` rows; the output has `blocks * n_dst`.
    pub fn edge_aggregate(
        &mut self,
        src: NodeId,
        edges: Arc<Vec<(u32, u32)>>,
        n_src: usize,
        n_dst: usize,
    ) -> Result<NodeId> {
        let (rows, h) = self.nodes[src.0].value.dims2();
        if n_src == 0 || rows % n_src != 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "edge_aggregate",
                lhs: self.shape(src).to_vec(),
                rhs: vec![n_src, n_dst],
            });
        }
        let blocks = rows / n_src;
        let mut out = TensorData::zeros(vec![blocks * n_dst, h]);
        let srcv = &self.nodes[src.0].value.data;
        for_each_chunk_mut(&mut out.data, n_dst * h, |bb, chunk| {
            let base = bb * n_src * h;
            for &(s, d) in edges.iter() {
                let srow = &srcv[base + s as usize * h..base + s as usize * h + h];
                let drow = &mut chunk[d as usize * h..d as usize * h + h];
                for (o, &v) in drow.iter_mut().zip(srow) {
                    *o += v;
                }
            }
        });
        let needs = self.needs(&[src]);
        Ok(self.push(
            out,
            Op::EdgeAggregate {
                src,
                edges,
                n_src,
                n_dst,
            },
            needs,
        ))
    }

    /// Column permutation in image form: `out[r, perm[c]] = x[r, c]`.
    pub fn permute_cols(&mut self, x: NodeId, perm: Arc<Vec<usize>>) -> Result<NodeId> {
        let (m, n) = self.nodes[x.0].value.dims2();
        if perm.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "permute_cols",
                lhs: self.shape(x).to_vec(),
                rhs: vec![perm.len()],
            });
        }
        let xv = &self.nodes[x.0].value.data;
        let mut out = TensorData::zeros(vec![m, n]);
        for r in 0..m {
            for c in 0..n {
                out.data[r * n + perm[c]] = xv[r * n + c];
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::PermuteCols { x, perm }, needs))
    }

    /// Mean over all elements of the numerically stable BCE-with-logits:
    /// `max(x, 0) - x*y + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: Arc<Vec<f64>>) -> Result<NodeId> {
        let v = &self.nodes[logits.0].value;
        if labels.len() != v.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: v.shape.clone(),
                rhs: vec![labels.len()],
            });
        }
        let mut acc = 0.0;
        for (&x, &y) in v.data.iter().zip(labels.iter()) {
            acc += bce_term(x, y);
        }
        let mean = acc / v.numel() as f64;
        let needs = self.needs(&[logits]);
        Ok(self.push(
            TensorData::scalar(mean),
            Op::BceWithLogits { logits, labels },
            needs,
        ))
    }

    // ---- reverse sweep ---------------------------------------------------

    /// Clear all accumulated gradients.
    pub fn clear_grads(&mut self) {
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
    }

    /// Reverse sweep from scalar `loss`. Gradients accumulate (`+=`) into
    /// every node with `needs_grad`; call [`Graph::clear_grads`] between
    /// backward passes if accumulation is not wanted.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalar(
                self.nodes[loss.0].value.shape.clone(),
            ));
        }
        self.accumulate(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            // Interior gradients are transient: consumed here so a second
            // backward pass seeds exactly one more unit at the loss.
            let grad = self.nodes[i].grad.take().unwrap();
            self.dispatch_backward(i, &op, &grad);
            if self.free_buffers {
                // children already processed; nothing reads this node again
                self.nodes[i].value.data = Vec::new();
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        debug_assert_eq!(numel, g.len());
        let slot = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (a, &b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }

    fn dispatch_backward(&mut self, node: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let (_, n) = self.nodes[b.0].value.dims2();
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_nt_acc(m, n, k, g, &self.nodes[b.0].value.data, &mut da);
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_tn_acc(m, k, n, &self.nodes[a.0].value.data, g, &mut db);
                    self.accumulate(*b, &db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::AddRow(a, bias) => {
                self.accumulate(*a, g);
                if self.nodes[bias.0].needs_grad {
                    let n = self.nodes[bias.0].value.numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::AddBlockBroadcast(a, t) => {
                self.accumulate(*a, g);
                if self.nodes[t.0].needs_grad {
                    let numel = self.nodes[t.0].value.numel();
                    let mut dt = vec![0.0; numel];
                    for block in g.chunks(numel) {
                        for (d, &v) in dt.iter_mut().zip(block) {
                            *d += v;
                        }
                    }
                    self.accumulate(*t, &dt);
                }
            }
            Op::Relu(x) => {
                let mask = &self.nodes[node].value.data;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(mask)
                    .map(|(&gv, &ov)| if ov > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Sigmoid(x) => {
                let out = &self.nodes[node].value.data;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &s)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Scale(x, k) => {
                let dx: Vec<f64> = g.iter().map(|&gv| gv * k).collect();
                self.accumulate(*x, &dx);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    self.accumulate(*a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accumulate(*b, &db);
                }
            }
            Op::Concat(parts) => {
                let (m, total) = self.nodes[node].value.dims2();
                let mut col = 0;
                for &p in parts {
                    let (_, np) = self.nodes[p.0].value.dims2();
                    if self.nodes[p.0].needs_grad {
                        let mut dp = vec![0.0; m * np];
                        for r in 0..m {
                            dp[r * np..(r + 1) * np]
                                .copy_from_slice(&g[r * total + col..r * total + col + np]);
                        }
                        self.accumulate(p, &dp);
                    }
                    col += np;
                }
            }
            Op::SumOver(x, axis) => {
                let (m, n) = self.nodes[x.0].value.dims2();
                let mut dx = vec![0.0; m * n];
                if *axis == 0 {
                    for row in dx.chunks_mut(n) {
                        row.copy_from_slice(g);
                    }
                } else {
                    for (row, &gv) in dx.chunks_mut(n).zip(g) {
                        row.fill(gv);
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::MeanAll(x) => {
                let numel = self.nodes[x.0].value.numel();
                let gv = g[0] / numel as f64;
                self.accumulate(*x, &vec![gv; numel]);
            }
            Op::Reshape(x) => {
                self.accumulate(*x, g);
            }
            Op::MatmulBiasRelu(x, w, bias) | Op::MatmulBias(x, w, bias) => {
                let relu = matches!(op, Op::MatmulBiasRelu(..));
                let dpre: Vec<f64> = if relu {
                    let out = &self.nodes[node].value.data;
                    g.iter()
                        .zip(out)
                        .map(|(&gv, &ov)| if ov > 0.0 { gv } else { 0.0 })
                        .collect()
                } else {
                    g.to_vec()
                };
                let (m, k) = self.nodes[x.0].value.dims2();
                let (_, n) = self.nodes[w.0].value.dims2();
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; m * k];
                    kernels::gemm_nt_acc(m, n, k, &dpre, &self.nodes[w.0].value.data, &mut dx);
                    self.accumulate(*x, &dx);
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; k * n];
                    kernels::gemm_tn_acc(m, k, n, &self.nodes[x.0].value.data, &dpre, &mut dw);
                    self.accumulate(*w, &dw);
                }
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![0.0; n];
                    for row in dpre.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::LinearOneHotRelu { x, w, hot, classes } => {
                let out = &self.nodes[node].value.data;
                let dpre: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &ov)| if ov > 0.0 { gv } else { 0.0 })
                    .collect();
                let (m, k) = self.nodes[x.0].value.dims2();
                let (_, n) = self.nodes[w.0].value.dims2();
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; m * k];
                    kernels::gemm_nt_acc(m, n, k, &dpre, &self.nodes[w.0].value.data[..k * n], &mut dx);
                    self.accumulate(*x, &dx);
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; (k + classes) * n];
                    kernels::gemm_tn_acc(m, k, n, &self.nodes[x.0].value.data, &dpre, &mut dw[..k * n]);
                    let hot_row = &mut dw[(k + hot) * n..(k + hot + 1) * n];
                    for row in dpre.chunks(n) {
                        for (d, &v) in hot_row.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*w, &dw);
                }
            }
            Op::DualMatmulRelu { a, b, w } => {
                let out = &self.nodes[node].value.data;
                let dpre: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &ov)| if ov > 0.0 { gv } else { 0.0 })
                    .collect();
                let (m, ha) = self.nodes[a.0].value.dims2();
                let (_, hb) = self.nodes[b.0].value.dims2();
                let (_, n) = self.nodes[w.0].value.dims2();
                let (da, db) = {
                    let wdata = &self.nodes[w.0].value.data;
                    let da = self.nodes[a.0].needs_grad.then(|| {
                        let mut da = vec![0.0; m * ha];
                        kernels::gemm_nt_acc(m, n, ha, &dpre, &wdata[..ha * n], &mut da);
                        da
                    });
                    let db = self.nodes[b.0].needs_grad.then(|| {
                        let mut db = vec![0.0; m * hb];
                        kernels::gemm_nt_acc(m, n, hb, &dpre, &wdata[ha * n..], &mut db);
                        db
                    });
                    (da, db)
                };
                if let Some(da) = da {
                    self.accumulate(*a, &da);
                }
                if let Some(db) = db {
                    self.accumulate(*b, &db);
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; (ha + hb) * n];
                    kernels::gemm_tn_acc(m, ha, n, &self.nodes[a.0].value.data, &dpre, &mut dw[..ha * n]);
                    kernels::gemm_tn_acc(m, hb, n, &self.nodes[b.0].value.data, &dpre, &mut dw[ha * n..]);
                    self.accumulate(*w, &dw);
                }
            }
            Op::EdgeAggregate {
                src,
                edges,
                n_src,
                n_dst,
            } => {
                if self.nodes[src.0].needs_grad {
                    let (rows, h) = self.nodes[src.0].value.dims2();
                    let mut dsrc = vec![0.0; rows * h];
                    for_each_chunk_mut(&mut dsrc, n_src * h, |bb, chunk| {
                        let gbase = bb * n_dst * h;
                        for &(s, d) in edges.iter() {
                            let grow = &g[gbase + d as usize * h..gbase + d as usize * h + h];
                            let srow = &mut chunk[s as usize * h..s as usize * h + h];
                            for (o, &v) in srow.iter_mut().zip(grow) {
                                *o += v;
                            }
                        }
                    });
                    self.accumulate(*src, &dsrc);
                }
            }
            Op::PermuteCols { x, perm } => {
                let (m, n) = self.nodes[x.0].value.dims2();
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        dx[r * n + c] = g[r * n + perm[c]];
                    }
                }
                self.accumulate(*x, &dx);
            }
            Op::BceWithLogits { logits, labels } => {
                if self.nodes[logits.0].needs_grad {
                    let v = &self.nodes[logits.0].value;
                    let scale = g[0] / v.numel() as f64;
                    let dx: Vec<f64> = v
                        .data
                        .iter()
                        .zip(labels.iter())
                        .map(|(&x, &y)| (stable_sigmoid(x) - y) * scale)
                        .collect();
                    self.accumulate(*logits, &dx);
                }
            }
        }
    }
}

impl Graph {
    /// Copy out the gradient of `id` (shaped like its value), if any.
    pub fn take_grad(&self, id: NodeId) -> Option<TensorData> {
        let node = &self.nodes[id.0];
        node.grad.as_ref().map(|g| TensorData {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }
}

/// Numerically stable logistic function.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One term of the numerically stable BCE-with-logits.
pub fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Result of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_element: usize,
    pub elements_checked: usize,
}

/// Central-difference check of `analytic` gradients against `loss`.
///
/// Every element of every parameter is perturbed by `±step`; the relative
/// error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn finite_difference_check(
    loss: &mut dyn FnMut(&[TensorData]) -> f64,
    params: &[TensorData],
    analytic: &[TensorData],
    step: f64,
) -> Result<FdReport> {
    if params.len() != analytic.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "finite_difference_check",
            lhs: vec![params.len()],
            rhs: vec![analytic.len()],
        });
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape != a.shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "finite_difference_check",
                lhs: p.shape.clone(),
                rhs: a.shape.clone(),
            });
        }
    }
    let mut work: Vec<TensorData> = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_element: 0,
        elements_checked: 0,
    };
    for pi in 0..work.len() {
        for ei in 0..work[pi].numel() {
            let orig = work[pi].data[ei];
            work[pi].data[ei] = orig + step;
            let up = loss(&work);
            work[pi].data[ei] = orig - step;
            let down = loss(&work);
            work[pi].data[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data[ei];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_element = ei;
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}
