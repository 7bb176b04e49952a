//! Heterogeneous message-passing network over the tensegrity graph, with a
//! symmetry-averaged ensemble wrapper.
//!
//! The model encodes each node type with its own 2-layer MLP (rod IMU
//! windows, tendon length windows, and a zero placeholder per endcap), adds
//! a learned per-node identity embedding, runs `K` message-passing layers
//! with edge-type-specific message weights and node-type-specific update
//! weights, and decodes each endcap embedding to one contact logit.
//!
//! Because all weights are shared within a node/edge type, the plain
//! network would be exactly equivariant to graph automorphisms and the
//! symmetrized wrapper could never differ from it; the per-node identity
//! embeddings give individual nodes distinguishable roles (and the model
//! capacity to use them), while [`sym_forward`] restores exact equivariance
//! by averaging the six inverse-transformed group branches:
//! `y = (1/|G|) sum_g pi_g^-1 F(pi_g z)`.
//!
//! Message passing per layer `k`: for each directed edge `(i -> j)` of type
//! `t`, the message is `ReLU(W_t^(k) [V_i ; onehot(t)])`; incoming messages
//! are summed per receiving node (across edge types), then
//! `V_j' = ReLU(U_a^(k) [V_j ; sum])` with `U` per receiving node type `a`.
//! All of this is built on the batched autodiff ops, so one tape serves
//! both training (parameters bound as tracked leaves) and inference
//! (parameters bound as constants).

use crate::autodiff::{bce_term, stable_sigmoid, AutodiffError, Graph, NodeId, TensorData};
use crate::geometry::{D3Group, GroupLabel, NUM_ENDCAPS, NUM_RODS, NUM_TENDONS};
use crate::graphdata::{
    rotate_triplets, ContactVector, GroupActionMode, HeteroGraph, WindowSample,
    IMU_CHANNELS_PER_ROD,
};
use crate::util::SeedTree;
use rand::Rng;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Default number of message-passing layers.
pub const DEFAULT_LAYERS: usize = 8;
/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 128;
/// Number of edge types (rod->endcap, endcap->rod, tendon->endcap,
/// endcap->tendon).
pub const EDGE_TYPES: usize = 4;
/// Number of node types (rod, tendon, endcap).
pub const NODE_TYPES: usize = 3;

const CHECKPOINT_MAGIC: &[u8; 4] = b"TGNN";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HgnnError {
    #[error("sample window length {sample} does not match model window {model}")]
    WindowMismatch { sample: usize, model: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, HgnnError>;

/// A 2-layer MLP (`in -> hidden`, ReLU, `hidden -> out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub w1: TensorData,
    pub b1: TensorData,
    pub w2: TensorData,
    pub b2: TensorData,
}

impl Mlp2 {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Mlp2 {
            w1: he_uniform(input, hidden, rng),
            b1: TensorData::zeros(vec![hidden]),
            w2: he_uniform(hidden, output, rng),
            b2: TensorData::zeros(vec![output]),
        }
    }
}

fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> TensorData {
    let limit = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    TensorData::new(vec![fan_in, fan_out], data)
}

/// All learnable state plus the hyperparameters that fix its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Message-passing layer count K.
    pub layers: usize,
    /// Hidden width H.
    pub hidden: usize,
    /// Input window length L.
    pub window: usize,
    /// The group action the model was (or will be) trained with.
    pub group_mode: GroupActionMode,
    pub rod_encoder: Mlp2,
    pub tendon_encoder: Mlp2,
    pub endcap_encoder: Mlp2,
    /// Learned per-node identity embeddings added to the encoded inputs.
    pub rod_embed: TensorData,
    pub tendon_embed: TensorData,
    pub endcap_embed: TensorData,
    /// `message[k][t]`: layer k, edge type t, shape `[H + 4, H]`.
    pub message: Vec<[TensorData; EDGE_TYPES]>,
    /// `update[k][a]`: layer k, node type a (rod, tendon, endcap), `[2H, H]`.
    pub update: Vec<[TensorData; NODE_TYPES]>,
    pub decoder: Mlp2,
}

impl ModelParams {
    /// Random initialization (He-uniform weights, zero biases, uniform
    /// +-0.3 identity embeddings).
    pub fn init(
        layers: usize,
        hidden: usize,
        window: usize,
        group_mode: GroupActionMode,
        seeds: &SeedTree,
    ) -> Self {
        assert!(layers >= 1, "at least one message-passing layer required");
        let mut rng = seeds.child("model-init").rng();
        let embed = |count: usize, rng: &mut rand_chacha::ChaCha12Rng| {
            let data = (0..count * hidden).map(|_| rng.random_range(-0.3..0.3)).collect();
            TensorData::new(vec![count, hidden], data)
        };
        ModelParams {
            layers,
            hidden,
            window,
            group_mode,
            rod_encoder: Mlp2::init(IMU_CHANNELS_PER_ROD * window, hidden, hidden, &mut rng),
            tendon_encoder: Mlp2::init(window, hidden, hidden, &mut rng),
            endcap_encoder: Mlp2::init(1, hidden, hidden, &mut rng),
            rod_embed: embed(NUM_RODS, &mut rng),
            tendon_embed: embed(NUM_TENDONS, &mut rng),
            endcap_embed: embed(NUM_ENDCAPS, &mut rng),
            message: (0..layers)
                .map(|_| std::array::from_fn(|_| he_uniform(hidden + EDGE_TYPES, hidden, &mut rng)))
                .collect(),
            update: (0..layers)
                .map(|_| std::array::from_fn(|_| he_uniform(2 * hidden, hidden, &mut rng)))
                .collect(),
            decoder: Mlp2::init(hidden, hidden, 1, &mut rng),
        }
    }

    /// Visit every tensor in canonical order with its stable name.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &TensorData)) {
        let encs = [
            ("rod_encoder", &self.rod_encoder),
            ("tendon_encoder", &self.tendon_encoder),
            ("endcap_encoder", &self.endcap_encoder),
        ];
        for (name, e) in encs {
            f(&format!("{name}.w1"), &e.w1);
            f(&format!("{name}.b1"), &e.b1);
            f(&format!("{name}.w2"), &e.w2);
            f(&format!("{name}.b2"), &e.b2);
        }
        f("rod_embed", &self.rod_embed);
        f("tendon_embed", &self.tendon_embed);
        f("endcap_embed", &self.endcap_embed);
        for (k, layer) in self.message.iter().enumerate() {
            for (t, w) in layer.iter().enumerate() {
                f(&format!("message.{k}.{t}"), w);
            }
        }
        for (k, layer) in self.update.iter().enumerate() {
            for (a, w) in layer.iter().enumerate() {
                f(&format!("update.{k}.{a}"), w);
            }
        }
        f("decoder.w1", &self.decoder.w1);
        f("decoder.b1", &self.decoder.b1);
        f("decoder.w2", &self.decoder.w2);
        f("decoder.b2", &self.decoder.b2);
    }

    /// Visit every tensor mutably, same order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut TensorData)) {
        for e in [
            &mut self.rod_encoder,
            &mut self.tendon_encoder,
            &mut self.endcap_encoder,
        ] {
            f(&mut e.w1);
            f(&mut e.b1);
            f(&mut e.w2);
            f(&mut e.b2);
        }
        f(&mut self.rod_embed);
        f(&mut self.tendon_embed);
        f(&mut self.endcap_embed);
        for layer in self.message.iter_mut() {
            for w in layer.iter_mut() {
                f(w);
            }
        }
        for layer in self.update.iter_mut() {
            for w in layer.iter_mut() {
                f(w);
            }
        }
        f(&mut self.decoder.w1);
        f(&mut self.decoder.b1);
        f(&mut self.decoder.w2);
        f(&mut self.decoder.b2);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// All parameters as one flat vector (canonical visit order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, t| out.extend_from_slice(&t.data));
        out
    }

    /// Overwrite all parameters from a flat vector (canonical visit order).
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        self.visit_mut(&mut |t| {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[cursor..cursor + n]);
            cursor += n;
        });
        assert_eq!(cursor, flat.len(), "flat parameter vector length mismatch");
    }
}

/// Edge lists of the fixed graph as shared tensors for the aggregate op.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    pub rod_to_endcap: Arc<Vec<(u32, u32)>>,
    pub endcap_to_rod: Arc<Vec<(u32, u32)>>,
    pub tendon_to_endcap: Arc<Vec<(u32, u32)>>,
    pub endcap_to_tendon: Arc<Vec<(u32, u32)>>,
}

impl GraphTensors {
    pub fn new(graph: &HeteroGraph) -> Self {
        GraphTensors {
            rod_to_endcap: Arc::new(graph.rod_to_endcap.clone()),
            endcap_to_rod: Arc::new(graph.endcap_to_rod.clone()),
            tendon_to_endcap: Arc::new(graph.tendon_to_endcap.clone()),
            endcap_to_tendon: Arc::new(graph.endcap_to_tendon.clone()),
        }
    }
}

/// A batch of windowed samples flattened into per-type node tensors.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// `[B * 3, 6L]`, channel-major per row.
    pub rods: TensorData,
    /// `[B * 9, L]`.
    pub tendons: TensorData,
    /// `[B * 6]` 0/1 targets in endcap order (absent for inference).
    pub labels: Option<Arc<Vec<f64>>>,
    pub batch: usize,
    pub window: usize,
}

impl BatchInput {
    pub fn from_samples(samples: &[WindowSample], window: usize) -> Result<Self> {
        assert!(!samples.is_empty(), "empty batch");
        let b = samples.len();
        let mut rods = Vec::with_capacity(b * NUM_RODS * IMU_CHANNELS_PER_ROD * window);
        let mut tendons = Vec::with_capacity(b * NUM_TENDONS * window);
        let mut labels = Vec::with_capacity(b * NUM_ENDCAPS);
        for s in samples {
            if s.window_len() != window {
                return Err(HgnnError::WindowMismatch {
                    sample: s.window_len(),
                    model: window,
                });
            }
            for r in &s.rod_features {
                rods.extend_from_slice(r);
            }
            for t in &s.tendon_features {
                tendons.extend_from_slice(t);
            }
            labels.extend_from_slice(&s.label.as_f64());
        }
        Ok(BatchInput {
            rods: TensorData::new(vec![b * NUM_RODS, IMU_CHANNELS_PER_ROD * window], rods),
            tendons: TensorData::new(vec![b * NUM_TENDONS, window], tendons),
            labels: Some(Arc::new(labels)),
            batch: b,
            window,
        })
    }

    /// The batch with every sample transformed by group element `label`
    /// (block gather plus, in physical mode, the rod-frame change of basis).
    pub fn transformed(&self, group: &D3Group, label: GroupLabel, mode: GroupActionMode) -> BatchInput {
        if label == GroupLabel::E {
            return BatchInput {
                labels: None,
                ..self.clone()
            };
        }
        let g = group.element(label);
        let l = self.window;
        let rod_w = IMU_CHANNELS_PER_ROD * l;
        let mut rods = vec![0.0; self.rods.data.len()];
        for b in 0..self.batch {
            for r in 0..NUM_RODS {
                let src = &self.rods.data[(b * NUM_RODS + r) * rod_w..(b * NUM_RODS + r + 1) * rod_w];
                let drow = b * NUM_RODS + g.rod_perm[r];
                let dst = &mut rods[drow * rod_w..(drow + 1) * rod_w];
                match mode {
                    GroupActionMode::IndexOnly => dst.copy_from_slice(src),
                    GroupActionMode::Physical => {
                        dst.copy_from_slice(&rotate_triplets(src, group.rod_conjugation(label, r), l))
                    }
                }
            }
        }
        let mut tendons = vec![0.0; self.tendons.data.len()];
        for b in 0..self.batch {
            for k in 0..NUM_TENDONS {
                let src = &self.tendons.data[(b * NUM_TENDONS + k) * l..(b * NUM_TENDONS + k + 1) * l];
                let drow = b * NUM_TENDONS + g.tendon_perm[k];
                tendons[drow * l..(drow + 1) * l].copy_from_slice(src);
            }
        }
        BatchInput {
            rods: TensorData::new(self.rods.shape.clone(), rods),
            tendons: TensorData::new(self.tendons.shape.clone(), tendons),
            labels: None, // branch inputs never carry targets
            batch: self.batch,
            window: self.window,
        }
    }
}

/// Tape handles for one bound copy of the parameters.
pub struct BoundParams {
    rod_enc: [NodeId; 4],
    tendon_enc: [NodeId; 4],
    endcap_enc: [NodeId; 4],
    rod_embed: NodeId,
    tendon_embed: NodeId,
    endcap_embed: NodeId,
    message: Vec<[NodeId; EDGE_TYPES]>,
    update: Vec<[NodeId; NODE_TYPES]>,
    decoder: [NodeId; 4],
    /// Every id above, in the canonical visit order.
    pub flat: Vec<NodeId>,
    layers: usize,
    window: usize,
}

/// Put every parameter tensor on the tape. `trainable` decides whether the
/// leaves are tracked (training) or constants (inference).
pub fn bind_params(g: &mut Graph, p: &ModelParams, trainable: bool) -> BoundParams {
    let mut flat = Vec::new();
    let bind = |t: &TensorData, g: &mut Graph, flat: &mut Vec<NodeId>| {
        let id = if trainable { g.param(t) } else { g.constant(t.clone()) };
        flat.push(id);
        id
    };
    let enc = |e: &Mlp2, g: &mut Graph, flat: &mut Vec<NodeId>| {
        [
            bind(&e.w1, g, flat),
            bind(&e.b1, g, flat),
            bind(&e.w2, g, flat),
            bind(&e.b2, g, flat),
        ]
    };
    let rod_enc = enc(&p.rod_encoder, g, &mut flat);
    let tendon_enc = enc(&p.tendon_encoder, g, &mut flat);
    let endcap_enc = enc(&p.endcap_encoder, g, &mut flat);
    let rod_embed = bind(&p.rod_embed, g, &mut flat);
    let tendon_embed = bind(&p.tendon_embed, g, &mut flat);
    let endcap_embed = bind(&p.endcap_embed, g, &mut flat);
    let message = p
        .message
        .iter()
        .map(|layer| std::array::from_fn(|t| bind(&layer[t], g, &mut flat)))
        .collect();
    let update = p
        .update
        .iter()
        .map(|layer| std::array::from_fn(|a| bind(&layer[a], g, &mut flat)))
        .collect();
    let decoder = enc(&p.decoder, g, &mut flat);
    BoundParams {
        rod_enc,
        tendon_enc,
        endcap_enc,
        rod_embed,
        tendon_embed,
        endcap_embed,
        message,
        update,
        decoder,
        flat,
        layers: p.layers,
        window: p.window,
    }
}

/// Gradients of all bound parameters as one flat vector (zeros where an
/// id received no gradient).
pub fn collect_grads(g: &Graph, bp: &BoundParams, param_count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count);
    for &id in &bp.flat {
        match g.grad_slice(id) {
            Some(s) => out.extend_from_slice(s),
            None => out.extend(std::iter::repeat(0.0).take(g.value(id).numel())),
        }
    }
    out
}

fn mlp2(g: &mut Graph, x: NodeId, w: &[NodeId; 4]) -> Result<NodeId> {
    let h = g.matmul_bias_relu(x, w[0], w[1])?;
    Ok(g.matmul_bias(h, w[2], w[3])?)
}

/// Encoded + identity-embedded node tensors plus one message-passing state.
struct NodeState {
    rods: NodeId,    // [B*3, H]
    tendons: NodeId, // [B*9, H]
    endcaps: NodeId, // [B*6, H]
}

fn encode_batch(
    g: &mut Graph,
    bp: &BoundParams,
    rods_in: NodeId,
    tendons_in: NodeId,
    batch: usize,
    with_embeddings: bool,
) -> Result<NodeState> {
    let rods = mlp2(g, rods_in, &bp.rod_enc)?;
    let tendons = mlp2(g, tendons_in, &bp.tendon_enc)?;
    let zeros = g.constant(TensorData::zeros(vec![batch * NUM_ENDCAPS, 1]));
    let endcaps = mlp2(g, zeros, &bp.endcap_enc)?;
    if !with_embeddings {
        return Ok(NodeState { rods, tendons, endcaps });
    }
    Ok(NodeState {
        rods: g.add_block_broadcast(rods, bp.rod_embed)?,
        tendons: g.add_block_broadcast(tendons, bp.tendon_embed)?,
        endcaps: g.add_block_broadcast(endcaps, bp.endcap_embed)?,
    })
}

fn mp_layer(
    g: &mut Graph,
    bp: &BoundParams,
    gt: &GraphTensors,
    v: &NodeState,
    k: usize,
) -> Result<NodeState> {
    let w = &bp.message[k];
    // edge type 0: rod -> endcap
    let m0 = g.linear_onehot_relu(v.rods, w[0], 0, EDGE_TYPES)?;
    let a0 = g.edge_aggregate(m0, gt.rod_to_endcap.clone(), NUM_RODS, NUM_ENDCAPS)?;
    // edge type 1: endcap -> rod
    let m1 = g.linear_onehot_relu(v.endcaps, w[1], 1, EDGE_TYPES)?;
    let a1 = g.edge_aggregate(m1, gt.endcap_to_rod.clone(), NUM_ENDCAPS, NUM_RODS)?;
    // edge type 2: tendon -> endcap
    let m2 = g.linear_onehot_relu(v.tendons, w[2], 2, EDGE_TYPES)?;
    let a2 = g.edge_aggregate(m2, gt.tendon_to_endcap.clone(), NUM_TENDONS, NUM_ENDCAPS)?;
    // edge type 3: endcap -> tendon
    let m3 = g.linear_onehot_relu(v.endcaps, w[3], 3, EDGE_TYPES)?;
    let a3 = g.edge_aggregate(m3, gt.endcap_to_tendon.clone(), NUM_ENDCAPS, NUM_TENDONS)?;
    // endcaps receive from both rods and tendons: sum across types
    let endcap_agg = g.add(a0, a2)?;
    let u = &bp.update[k];
    Ok(NodeState {
        rods: g.dual_matmul_relu(v.rods, a1, u[0])?,
        tendons: g.dual_matmul_relu(v.tendons, a3, u[1])?,
        endcaps: g.dual_matmul_relu(v.endcaps, endcap_agg, u[2])?,
    })
}

/// Full forward for one (possibly transformed) batch already on the tape.
/// Returns logits `[B, 6]`.
pub fn forward_batch_node(
    g: &mut Graph,
    bp: &BoundParams,
    gt: &GraphTensors,
    rods_in: NodeId,
    tendons_in: NodeId,
    batch: usize,
) -> Result<NodeId> {
    let mut v = encode_batch(g, bp, rods_in, tendons_in, batch, true)?;
    for k in 0..bp.layers {
        v = mp_layer(g, bp, gt, &v, k)?;
    }
    let h = g.matmul_bias_relu(v.endcaps, bp.decoder[0], bp.decoder[1])?;
    let logits = g.matmul_bias(h, bp.decoder[2], bp.decoder[3])?;
    Ok(g.reshape(logits, vec![batch, NUM_ENDCAPS])?)
}

/// Symmetry-averaged forward: one branch per group element in `elements`,
/// each inverse-permuted back to the original endcap labeling, then
/// averaged. With `elements = [E]` this is bitwise identical to
/// [`forward_batch_node`] on the raw batch.
pub fn sym_forward_batch_node(
    g: &mut Graph,
    bp: &BoundParams,
    gt: &GraphTensors,
    group: &D3Group,
    elements: &[GroupLabel],
    mode: GroupActionMode,
    batch: &BatchInput,
) -> Result<NodeId> {
    assert!(!elements.is_empty(), "need at least one group element");
    if batch.window != bp.window {
        return Err(HgnnError::WindowMismatch {
            sample: batch.window,
            model: bp.window,
        });
    }
    let mut branches = Vec::with_capacity(elements.len());
    for &label in elements {
        let tb = batch.transformed(group, label, mode);
        let rods_in = g.constant(tb.rods);
        let tendons_in = g.constant(tb.tendons);
        let logits = forward_batch_node(g, bp, gt, rods_in, tendons_in, batch.batch)?;
        if label == GroupLabel::E {
            branches.push(logits);
        } else {
            let inv = group.inverse(group.element(label)).expect("validated group").label;
            let perm: Vec<usize> = group.element(inv).endcap_perm.to_vec();
            branches.push(g.permute_cols(logits, Arc::new(perm))?);
        }
    }
    if branches.len() == 1 {
        return Ok(branches[0]);
    }
    let mut acc = branches[0];
    for &b in &branches[1..] {
        acc = g.add(acc, b)?;
    }
    Ok(g.scale(acc, 1.0 / branches.len() as f64))
}

// ---- value-level API (single sample) ---------------------------------------

/// Per-type node embedding matrices for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub rods: TensorData,    // [3, H]
    pub tendons: TensorData, // [9, H]
    pub endcaps: TensorData, // [6, H]
}

/// Encode one normalized sample through the three input encoders. This is
/// the pure type-shared encoding: endcap rows are identical (they all come
/// from the zero placeholder) and identity embeddings are *not* added here
/// (the forward pass adds them afterwards).
pub fn encode_inputs(sample: &WindowSample, params: &ModelParams) -> Result<NodeEmbeddings> {
    if sample.window_len() != params.window {
        return Err(HgnnError::WindowMismatch {
            sample: sample.window_len(),
            model: params.window,
        });
    }
    let batch = BatchInput::from_samples(std::slice::from_ref(sample), params.window)?;
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, false);
    let rods_in = g.constant(batch.rods);
    let tendons_in = g.constant(batch.tendons);
    let v = encode_batch(&mut g, &bp, rods_in, tendons_in, 1, false)?;
    Ok(NodeEmbeddings {
        rods: g.value(v.rods).clone(),
        tendons: g.value(v.tendons).clone(),
        endcaps: g.value(v.endcaps).clone(),
    })
}

/// Run one message-passing layer (index `k`) over explicit node states.
pub fn message_passing_layer(
    v: &NodeEmbeddings,
    gt: &GraphTensors,
    params: &ModelParams,
    k: usize,
) -> Result<NodeEmbeddings> {
    assert!(k < params.layers, "layer index out of range");
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, false);
    let state = NodeState {
        rods: g.constant(v.rods.clone()),
        tendons: g.constant(v.tendons.clone()),
        endcaps: g.constant(v.endcaps.clone()),
    };
    let out = mp_layer(&mut g, &bp, gt, &state, k)?;
    Ok(NodeEmbeddings {
        rods: g.value(out.rods).clone(),
        tendons: g.value(out.tendons).clone(),
        endcaps: g.value(out.endcaps).clone(),
    })
}

/// Plain (non-symmetrized) forward for one sample: 6 contact logits.
pub fn hgnn_forward(
    sample: &WindowSample,
    gt: &GraphTensors,
    params: &ModelParams,
) -> Result<[f64; 6]> {
    let batch = BatchInput::from_samples(std::slice::from_ref(sample), params.window)?;
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, false);
    let rods_in = g.constant(batch.rods);
    let tendons_in = g.constant(batch.tendons);
    let logits = forward_batch_node(&mut g, &bp, gt, rods_in, tendons_in, 1)?;
    let v = g.value(logits);
    Ok(std::array::from_fn(|i| v.data[i]))
}

/// Symmetry-averaged forward for one sample over the given group elements.
pub fn sym_forward(
    sample: &WindowSample,
    gt: &GraphTensors,
    params: &ModelParams,
    group: &D3Group,
    elements: &[GroupLabel],
) -> Result<[f64; 6]> {
    let batch = BatchInput::from_samples(std::slice::from_ref(sample), params.window)?;
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, false);
    let logits = sym_forward_batch_node(&mut g, &bp, gt, group, elements, params.group_mode, &batch)?;
    let v = g.value(logits);
    Ok(std::array::from_fn(|i| v.data[i]))
}

/// Numerically stable mean BCE-with-logits over one sample's 6 outputs.
pub fn bce_with_logits(logits: &[f64; 6], labels: &ContactVector) -> f64 {
    let targets = labels.as_f64();
    logits
        .iter()
        .zip(&targets)
        .map(|(&x, &y)| bce_term(x, y))
        .sum::<f64>()
        / 6.0
}

/// Threshold predicted probabilities (strict `sigma(logit) > threshold`).
pub fn predict_contacts(logits: &[f64; 6], threshold: f64) -> ContactVector {
    ContactVector(std::array::from_fn(|i| {
        u8::from(stable_sigmoid(logits[i]) > threshold)
    }))
}

// ---- checkpoint io ----------------------------------------------------------

/// Serialize params to a self-describing binary checkpoint (bitwise
/// round-trip: shapes, hyperparameters, group mode, and raw f64 data).
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, params_to_bytes(params))?;
    Ok(())
}

/// The checkpoint byte encoding of `params`, suitable for embedding in a
/// larger container as well as standalone files.
pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match params.group_mode {
        GroupActionMode::IndexOnly => 0,
        GroupActionMode::Physical => 1,
    });
    for v in [params.layers, params.hidden, params.window] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut count = 0u32;
    params.visit(&mut |_, _| count += 1);
    buf.extend_from_slice(&count.to_le_bytes());
    params.visit(&mut |name, t| {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    });
    buf
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    params_from_reader(&mut r)
}

/// Decode params from any reader positioned at the start of a checkpoint
/// blob produced by [`params_to_bytes`].
pub fn params_from_reader<R: Read>(mut r: &mut R) -> Result<ModelParams> {
    let corrupt = |what: &str| HgnnError::CheckpointCorrupt(what.to_string());

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(&mut r).map_err(|_| corrupt("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(HgnnError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut mode_byte = [0u8; 1];
    r.read_exact(&mut mode_byte).map_err(|_| corrupt("truncated mode"))?;
    let group_mode = match mode_byte[0] {
        0 => GroupActionMode::IndexOnly,
        1 => GroupActionMode::Physical,
        _ => return Err(corrupt("unknown group mode")),
    };
    let layers = read_u32(&mut r).map_err(|_| corrupt("truncated hyper"))? as usize;
    let hidden = read_u32(&mut r).map_err(|_| corrupt("truncated hyper"))? as usize;
    let window = read_u32(&mut r).map_err(|_| corrupt("truncated hyper"))? as usize;
    if layers == 0 || hidden == 0 || window == 0 {
        return Err(corrupt("zero hyperparameter"));
    }
    let count = read_u32(&mut r).map_err(|_| corrupt("truncated array count"))?;
    let mut arrays = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r).map_err(|_| corrupt("truncated name length"))? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("non-utf8 name"))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(|_| corrupt("truncated ndim"))?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u64(&mut r).map_err(|_| corrupt("truncated shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 30 {
            return Err(corrupt("implausible tensor size"));
        }
        let mut data = vec![0.0f64; numel];
        for d in data.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| corrupt("truncated tensor data"))?;
            *d = f64::from_le_bytes(b);
        }
        arrays.insert(name, TensorData::new(shape, data));
    }

    // Build a correctly-shaped skeleton, then fill by name with shape checks.
    let mut params = ModelParams::init(layers, hidden, window, group_mode, &SeedTree::new(0));
    let mut missing: Vec<String> = Vec::new();
    let mut expected = Vec::new();
    params.visit(&mut |name, t| expected.push((name.to_string(), t.shape.clone())));
    for (name, shape) in &expected {
        match arrays.get(name) {
            Some(t) if &t.shape == shape => {}
            Some(t) => {
                return Err(HgnnError::CheckpointCorrupt(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )))
            }
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(HgnnError::CheckpointCorrupt(format!(
            "missing tensors: {missing:?}"
        )));
    }
    let mut cursor = 0;
    let order: Vec<TensorData> = expected
        .iter()
        .map(|(name, _)| arrays.remove(name).expect("presence checked"))
        .collect();
    params.visit_mut(&mut |t| {
        *t = order[cursor].clone();
        cursor += 1;
    });
    Ok(params)
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
