//! Training loop, evaluation metrics, and checkpoint management for the
//! contact-estimation network.
//!
//! Optimization is Adam over mini-batch mean BCE-with-logits, with per-epoch
//! reshuffling from a splittable seeded generator, so a `(config, data)` pair
//! fully determines the loss history. Validation runs after every epoch and
//! the parameters with the best validation macro-F1 are the ones returned.
//!
//! Metrics follow the strict reading of multi-label contact estimation:
//! *exact-match accuracy* counts a window as correct only when all six
//! predicted flags equal the labels, and *macro-F1* averages the per-endcap
//! binary F1 for the contact-positive class, with F1 defined as 0 whenever
//! precision + recall is 0.

use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::geometry::{build_canonical_topology, build_d3_group, D3Group, GroupLabel};
use crate::geometry::NUM_ENDCAPS;
use crate::graphdata::{assemble_graph, ContactVector, GroupActionMode, WindowSample, WindowSet};
use crate::hgnn::{
    bind_params, collect_grads, params_from_reader, params_to_bytes, predict_contacts,
    sym_forward_batch_node, BatchInput, GraphTensors, HgnnError, ModelParams,
};
use crate::util::SeedTree;

/// Micro-batch size used by the evaluator; a throughput knob only, with no
/// effect on results.
const EVAL_BATCH: usize = 64;

/// History lengths with validated support.
pub const SUPPORTED_WINDOWS: [usize; 4] = [25, 50, 100, 200];

const CONTAINER_MAGIC: &[u8; 4] = b"TGNC";
const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset windows are {found} samples long, config expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] HgnnError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint container version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

type Result<T> = std::result::Result<T, TrainError>;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Message-passing depth K.
    pub layers: usize,
    /// Embedding width H.
    pub hidden: usize,
    /// History length L (window samples).
    pub window: usize,
    pub seed: u64,
    /// Average the network over all six symmetry branches. Disabled, the
    /// plain forward pass is used for both training and evaluation.
    pub symmetry_enabled: bool,
    pub group_mode: GroupActionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            // full-scale runs use 2048; this desk-scale default keeps one
            // optimizer step well inside a single core's cache budget
            batch_size: 256,
            epochs: 30,
            layers: 8,
            hidden: 128,
            window: 100,
            seed: 0,
            symmetry_enabled: true,
            group_mode: GroupActionMode::IndexOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("layers", self.layers),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !SUPPORTED_WINDOWS.contains(&self.window) {
            return Err(TrainError::InvalidConfig(format!(
                "window {} unsupported (choose from {SUPPORTED_WINDOWS:?})",
                self.window
            )));
        }
        Ok(())
    }

    /// The symmetry branches this config trains and evaluates with.
    fn elements(&self) -> &'static [GroupLabel] {
        if self.symmetry_enabled {
            &GroupLabel::ALL
        } else {
            std::slice::from_ref(&GroupLabel::E)
        }
    }
}

/// Per-endcap binary confusion counts for the contact-positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluation summary over a labeled window set.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Fraction of windows where all six flags match.
    pub exact_match_accuracy: f64,
    /// Mean over endcaps of per-endcap F1.
    pub macro_f1: f64,
    pub per_endcap: [ConfusionCounts; 6],
    pub windows: usize,
}

impl Metrics {
    pub fn from_counts(exact_matches: u64, windows: usize, per_endcap: [ConfusionCounts; 6]) -> Self {
        Metrics {
            exact_match_accuracy: ratio(exact_matches, windows as u64),
            macro_f1: per_endcap.iter().map(ConfusionCounts::f1).sum::<f64>() / 6.0,
            per_endcap,
            windows,
        }
    }
}

/// One epoch's log line worth of state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub seconds: f64,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub params: ModelParams,
    /// 1-based epoch index the returned parameters came from.
    pub best_epoch: usize,
    pub best_metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

/// Adam with standard decay rates and bias correction.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn check_dataset(set: &WindowSet, config: &TrainConfig) -> Result<()> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if set.window != config.window {
        return Err(TrainError::ShapeMismatch {
            expected: config.window,
            found: set.window,
        });
    }
    Ok(())
}

/// Train from a fresh seeded initialization. See [`train_with`].
pub fn train(
    train_set: &WindowSet,
    val_set: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, config, |_, _| ControlFlow::Continue(()))
}

/// Train, invoking `on_epoch` after each epoch's validation pass. The
/// callback can stop the run early (the best checkpoint so far is still
/// selected); `record.seconds` holds that epoch's wall-clock time and is the
/// only nondeterministic output.
pub fn train_with(
    train_set: &WindowSet,
    val_set: &WindowSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Metrics) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(train_set, config)?;
    check_dataset(val_set, config)?;

    let topology = build_canonical_topology();
    let group = build_d3_group(&topology)?;
    let gt = GraphTensors::new(&assemble_graph(&topology));
    let seeds = SeedTree::new(config.seed);

    let mut params = ModelParams::init(
        config.layers,
        config.hidden,
        config.window,
        config.group_mode,
        &seeds.child("model-init"),
    );
    let mut flat = params.flatten();
    let mut adam = Adam::new(config.learning_rate, flat.len());

    let mut best: Option<(usize, Metrics, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut rng = seeds.child("shuffle").child_idx(epoch as u64).rng();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<_> = chunk
                .iter()
                .map(|&i| train_set.materialize(i, &group, config.group_mode))
                .collect();
            let batch = BatchInput::from_samples(&samples, config.window)?;
            let labels = batch.labels.clone().expect("training windows are labeled");

            let mut g = Graph::new();
            g.set_free_buffers(true);
            let bp = bind_params(&mut g, &params, true);
            let logits = sym_forward_batch_node(
                &mut g,
                &bp,
                &gt,
                &group,
                config.elements(),
                config.group_mode,
                &batch,
            )?;
            let loss = g.bce_with_logits(logits, labels).map_err(HgnnError::from)?;
            let loss_value = g.value(loss).data[0];
            g.backward(loss).map_err(HgnnError::from)?;
            let grads = collect_grads(&g, &bp, flat.len());
            drop(g);

            adam.step(&mut flat, &grads);
            params.unflatten(&flat);
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }

        let metrics = evaluate_impl(&params, val_set, config.elements(), &group, &gt)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: metrics.exact_match_accuracy,
            val_macro_f1: metrics.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        if best.as_ref().map_or(true, |(_, m, _)| metrics.macro_f1 > m.macro_f1) {
            best = Some((epoch, metrics.clone(), flat.clone()));
        }
        let flow = on_epoch(&record, &metrics);
        history.push(record);
        if flow.is_break() {
            break;
        }
    }

    let (best_epoch, best_metrics, best_flat) = best.expect("epochs >= 1");
    params.unflatten(&best_flat);
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_metrics,
        history,
    })
}

/// Confusion-count evaluation at threshold 0.5. `symmetry_enabled` selects
/// the symmetry-averaged forward pass; everything downstream of the logits
/// is shared between the two paths.
pub fn evaluate(params: &ModelParams, dataset: &WindowSet, symmetry_enabled: bool) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if dataset.window != params.window {
        return Err(TrainError::ShapeMismatch {
            expected: params.window,
            found: dataset.window,
        });
    }
    let topology = build_canonical_topology();
    let group = build_d3_group(&topology)?;
    let gt = GraphTensors::new(&assemble_graph(&topology));
    let elements: &[GroupLabel] = if symmetry_enabled {
        &GroupLabel::ALL
    } else {
        std::slice::from_ref(&GroupLabel::E)
    };
    evaluate_impl(params, dataset, elements, &group, &gt)
}

fn evaluate_impl(
    params: &ModelParams,
    dataset: &WindowSet,
    elements: &[GroupLabel],
    group: &D3Group,
    gt: &GraphTensors,
) -> Result<Metrics> {
    let mut counts = [ConfusionCounts::default(); 6];
    let mut exact = 0u64;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let samples: Vec<_> = chunk
            .iter()
            .map(|&i| dataset.materialize(i, group, params.group_mode))
            .collect();
        let batch = BatchInput::from_samples(&samples, params.window)?;
        let mut g = Graph::new();
        g.set_free_buffers(true);
        let bp = bind_params(&mut g, params, false);
        let node = sym_forward_batch_node(&mut g, &bp, gt, group, elements, params.group_mode, &batch)?;
        let logits = g.value(node);
        for (row, sample) in samples.iter().enumerate() {
            let per_window: [f64; NUM_ENDCAPS] =
                std::array::from_fn(|c| logits.data[row * NUM_ENDCAPS + c]);
            let pred = predict_contacts(&per_window, 0.5);
            if pred == sample.label {
                exact += 1;
            }
            for e in 0..NUM_ENDCAPS {
                let (p, y) = (pred.0[e] == 1, sample.label.0[e] == 1);
                match (p, y) {
                    (true, true) => counts[e].true_pos += 1,
                    (true, false) => counts[e].false_pos += 1,
                    (false, true) => counts[e].false_neg += 1,
                    (false, false) => counts[e].true_neg += 1,
                }
            }
        }
    }
    Ok(Metrics::from_counts(exact, dataset.len(), counts))
}

/// Write history as CSV (`epoch,train_loss,val_accuracy,val_macro_f1` plus a
/// `seconds` column when requested). Skipping the wall-clock column keeps the
/// file a deterministic function of the run configuration.
pub fn write_history_csv(
    w: &mut impl std::io::Write,
    history: &[EpochRecord],
    include_seconds: bool,
) -> std::io::Result<()> {
    if include_seconds {
        writeln!(w, "epoch,train_loss,val_accuracy,val_macro_f1,seconds")?;
    } else {
        writeln!(w, "epoch,train_loss,val_accuracy,val_macro_f1")?;
    }
    for r in history {
        if include_seconds {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_accuracy, r.val_macro_f1, r.seconds
            )?;
        } else {
            writeln!(
                w,
                "{},{},{},{}",
                r.epoch, r.train_loss, r.val_accuracy, r.val_macro_f1
            )?;
        }
    }
    Ok(())
}

/// Thresholded contact predictions for already materialized (normalized)
/// window samples, in input order. `symmetry_enabled` selects the
/// symmetry-averaged forward pass, exactly as in [`evaluate`].
pub fn predict_samples(
    params: &ModelParams,
    samples: &[WindowSample],
    symmetry_enabled: bool,
) -> Result<Vec<ContactVector>> {
    if let Some(s) = samples.iter().find(|s| s.window_len() != params.window) {
        return Err(TrainError::ShapeMismatch {
            expected: params.window,
            found: s.window_len(),
        });
    }
    let topology = build_canonical_topology();
    let group = build_d3_group(&topology)?;
    let gt = GraphTensors::new(&assemble_graph(&topology));
    let elements: &[GroupLabel] = if symmetry_enabled {
        &GroupLabel::ALL
    } else {
        std::slice::from_ref(&GroupLabel::E)
    };
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = BatchInput::from_samples(chunk, params.window)?;
        let mut g = Graph::new();
        g.set_free_buffers(true);
        let bp = bind_params(&mut g, params, false);
        let node =
            sym_forward_batch_node(&mut g, &bp, &gt, &group, elements, params.group_mode, &batch)?;
        let logits = g.value(node);
        for row in 0..chunk.len() {
            let per_window: [f64; NUM_ENDCAPS] =
                std::array::from_fn(|c| logits.data[row * NUM_ENDCAPS + c]);
            out.push(predict_contacts(&per_window, 0.5));
        }
    }
    Ok(out)
}

/// Result of [`gradient_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub param_count: usize,
}

/// Central finite-difference oracle for the full forward + loss pipeline on
/// a random mini-batch: analytic gradients from backpropagation are compared
/// against `(loss(θ+h) − loss(θ−h)) / 2h` on an evenly strided subset of at
/// most `max_coords` parameter coordinates, and the worst relative error is
/// reported. Parameters are jittered away from their initialization so no
/// relu pre-activation sits exactly on a kink, where the two estimates
/// legitimately disagree.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    layers: usize,
    hidden: usize,
    window: usize,
    batch: usize,
    symmetry_enabled: bool,
    group_mode: GroupActionMode,
    seed: u64,
    max_coords: usize,
) -> Result<GradCheckReport> {
    use rand::Rng as _;
    for (name, v) in [
        ("layers", layers),
        ("hidden", hidden),
        ("window", window),
        ("batch", batch),
        ("max_coords", max_coords),
    ] {
        if v == 0 {
            return Err(TrainError::InvalidConfig(format!("{name} must be positive")));
        }
    }
    let topology = build_canonical_topology();
    let group = build_d3_group(&topology)?;
    let gt = GraphTensors::new(&assemble_graph(&topology));
    let elements: &[GroupLabel] = if symmetry_enabled {
        &GroupLabel::ALL
    } else {
        std::slice::from_ref(&GroupLabel::E)
    };
    let seeds = SeedTree::new(seed);
    let mut rng = seeds.child("grad-check").rng();

    let mut params = ModelParams::init(layers, hidden, window, group_mode, &seeds);
    let mut flat = params.flatten();
    for v in flat.iter_mut() {
        let sign = if rng.random_range(0..=1) == 1 { 1.0 } else { -1.0 };
        *v += sign * rng.random_range(0.03..0.15);
    }
    params.unflatten(&flat);

    let samples: Vec<WindowSample> = (0..batch)
        .map(|_| WindowSample {
            rod_features: std::array::from_fn(|_| {
                (0..6 * window).map(|_| rng.random_range(-1.0..1.0)).collect()
            }),
            tendon_features: std::array::from_fn(|_| {
                (0..window).map(|_| rng.random_range(-1.0..1.0)).collect()
            }),
            label: ContactVector::new(std::array::from_fn(|_| rng.random_range(0..=1))),
            window_end_index: window - 1,
        })
        .collect();
    let batch_input = BatchInput::from_samples(&samples, window)?;
    let labels = batch_input.labels.clone().expect("random labels attached");

    let loss_of = |p: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        g.set_free_buffers(true);
        let bp = bind_params(&mut g, p, false);
        let node =
            sym_forward_batch_node(&mut g, &bp, &gt, &group, elements, p.group_mode, &batch_input)?;
        let loss = g.bce_with_logits(node, labels.clone()).map_err(HgnnError::from)?;
        Ok(g.value(loss).data[0])
    };

    let mut g = Graph::new();
    let bp = bind_params(&mut g, &params, true);
    let node =
        sym_forward_batch_node(&mut g, &bp, &gt, &group, elements, params.group_mode, &batch_input)?;
    let loss = g.bce_with_logits(node, labels.clone()).map_err(HgnnError::from)?;
    g.backward(loss).map_err(HgnnError::from)?;
    let analytic = collect_grads(&g, &bp, flat.len());
    drop(g);

    let step = 1e-5;
    let stride = (flat.len() / max_coords).max(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for i in (0..flat.len()).step_by(stride) {
        let mut up = flat.clone();
        up[i] += step;
        let mut down = flat.clone();
        down[i] -= step;
        let mut pu = params.clone();
        pu.unflatten(&up);
        let mut pd = params.clone();
        pd.unflatten(&down);
        let numeric = (loss_of(&pu)? - loss_of(&pd)?) / (2.0 * step);
        let rel =
            (analytic[i] - numeric).abs() / f64::max(1e-8, analytic[i].abs() + numeric.abs());
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coords_checked: checked,
        param_count: flat.len(),
    })
}

// ---- checkpoint container -----------------------------------------------------

/// Save a `(params, config)` pair: a small container around the model
/// checkpoint blob so a run can be resumed or audited from one file.
pub fn save_checkpoint(params: &ModelParams, config: &TrainConfig, path: &Path) -> Result<()> {
    let config_json =
        serde_json::to_vec(config).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CONTAINER_MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    out.write_all(&(config_json.len() as u32).to_le_bytes())?;
    out.write_all(&config_json)?;
    out.write_all(&params_to_bytes(params))?;
    out.flush()?;
    Ok(())
}

/// Load a `(params, config)` pair written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    use std::io::Read as _;
    let corrupt = |what: &str| TrainError::CorruptCheckpoint(what.to_string());
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
    if &magic != CONTAINER_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| corrupt("truncated version"))?;
    let version = u32::from_le_bytes(word);
    if version != CONTAINER_VERSION {
        return Err(TrainError::VersionMismatch {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    r.read_exact(&mut word).map_err(|_| corrupt("truncated config length"))?;
    let config_len = u32::from_le_bytes(word) as usize;
    if config_len > 1 << 20 {
        return Err(corrupt("implausible config length"));
    }
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json).map_err(|_| corrupt("truncated config"))?;
    let config: TrainConfig = serde_json::from_slice(&config_json)
        .map_err(|e| TrainError::CorruptCheckpoint(format!("config: {e}")))?;
    let params = params_from_reader(&mut r).map_err(|e| match e {
        HgnnError::CheckpointVersion { found, expected } => {
            TrainError::VersionMismatch { found, expected }
        }
        HgnnError::CheckpointCorrupt(s) => TrainError::CorruptCheckpoint(s),
        other => TrainError::Model(other),
    })?;
    if params.layers != config.layers
        || params.hidden != config.hidden
        || params.window != config.window
    {
        return Err(corrupt("config and parameter hyperparameters disagree"));
    }
    Ok((params, config))
}
