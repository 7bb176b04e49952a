//! Sensor sequences, sliding windows, the heterogeneous graph skeleton,
//! group actions on samples, and the dataset file format.
//!
//! A [`SensorSequence`] is the raw synchronized recording: 18 IMU channels
//! (3 rods x accel/gyro xyz), 9 tendon lengths, and optional per-timestep
//! contact flags. [`slide_windows`] cuts it into fixed-length
//! [`WindowSample`]s labeled with the contact state at each window's final
//! frame, and [`normalize_window`] applies per-window per-channel z-scoring
//! (population std, `eps = 1e-8`).
//!
//! [`apply_group_to_sample`] realizes the symmetry action on samples. The
//! default [`GroupActionMode::IndexOnly`] permutes whole node feature
//! blocks and label entries. [`GroupActionMode::Physical`] additionally
//! re-expresses each rod's accelerometer and gyroscope triplets in the
//! destination rod's sensor frame via the change-of-basis matrices from
//! [`crate::geometry::D3Group::rod_conjugation`]; with the canonical frames
//! those matrices are diagonal sign matrices, so both modes commute exactly
//! (bitwise) with normalization.
//!
//! The on-disk format is a plain CSV, one row per timestep, with a fixed
//! 34-column header (or a 28-column variant without contact flags for
//! inference-only recordings). Floats are written as shortest
//! round-tripping decimal text, so write-then-read is bit-exact.

use crate::geometry::{
    D3Group, GroupLabel, TensegrityTopology, NUM_ENDCAPS, NUM_RODS, NUM_TENDONS,
};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// IMU channels per rod: ax, ay, az, wx, wy, wz.
pub const IMU_CHANNELS_PER_ROD: usize = 6;
/// Total IMU channels across the three rods.
pub const IMU_CHANNELS: usize = NUM_RODS * IMU_CHANNELS_PER_ROD;
/// Default window length (timesteps).
pub const DEFAULT_WINDOW: usize = 100;
/// Nominal sample rate in Hz.
pub const NOMINAL_RATE: f64 = 100.0;
/// Guard added to the per-channel standard deviation during normalization.
pub const NORM_EPS: f64 = 1e-8;

const HEADER_LABELED: &str = "t,ax0,ay0,az0,wx0,wy0,wz0,ax1,ay1,az1,wx1,wy1,wz1,ax2,ay2,az2,wx2,wy2,wz2,l0,l1,l2,l3,l4,l5,l6,l7,l8,c0,c1,c2,c3,c4,c5";
const HEADER_UNLABELED: &str = "t,ax0,ay0,az0,wx0,wy0,wz0,ax1,ay1,az1,wx1,wy1,wz1,ax2,ay2,az2,wx2,wy2,wz2,l0,l1,l2,l3,l4,l5,l6,l7,l8";

#[derive(Debug, Error)]
pub enum GraphDataError {
    #[error("sequence of length {length} is shorter than the window {window}")]
    SequenceTooShort { length: usize, window: usize },
    #[error("format error: {0}")]
    FormatError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ground-contact state of the six endcaps (each flag 0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContactVector(pub [u8; 6]);

impl ContactVector {
    pub fn new(flags: [u8; 6]) -> Self {
        for f in flags {
            assert!(f <= 1, "contact flags must be 0 or 1");
        }
        ContactVector(flags)
    }

    pub fn is_set(&self, endcap: usize) -> bool {
        self.0[endcap] == 1
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|&f| f as usize).sum()
    }

    /// Flags as 0.0/1.0 training targets.
    pub fn as_f64(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (o, &f) in out.iter_mut().zip(&self.0) {
            *o = f as f64;
        }
        out
    }
}

impl std::fmt::Display for ContactVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}]",
            self.0.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
        )
    }
}

/// A synchronized multi-sensor recording, stored channel-major.
///
/// `imu[rod * 6 + c][t]` holds channel `c` of rod `rod` at timestep `t`
/// (`c` = ax, ay, az, wx, wy, wz); `tendon_lengths[k][t]` holds tendon `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    pub sample_rate: f64,
    pub imu: Vec<Vec<f64>>,
    pub tendon_lengths: Vec<Vec<f64>>,
    pub contacts: Option<Vec<ContactVector>>,
}

impl SensorSequence {
    pub fn new(
        sample_rate: f64,
        imu: Vec<Vec<f64>>,
        tendon_lengths: Vec<Vec<f64>>,
        contacts: Option<Vec<ContactVector>>,
    ) -> Result<Self, GraphDataError> {
        if imu.len() != IMU_CHANNELS || tendon_lengths.len() != NUM_TENDONS {
            return Err(GraphDataError::FormatError(format!(
                "expected {IMU_CHANNELS} IMU and {NUM_TENDONS} tendon channels, got {} and {}",
                imu.len(),
                tendon_lengths.len()
            )));
        }
        let t = imu[0].len();
        let all_match = imu.iter().all(|c| c.len() == t)
            && tendon_lengths.iter().all(|c| c.len() == t)
            && contacts.as_ref().map_or(true, |c| c.len() == t);
        if !all_match {
            return Err(GraphDataError::FormatError(
                "all channel arrays must share the same length".into(),
            ));
        }
        Ok(SensorSequence {
            sample_rate,
            imu,
            tendon_lengths,
            contacts,
        })
    }

    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.imu[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_labeled(&self) -> bool {
        self.contacts.is_some()
    }
}

/// One windowed training/inference sample.
///
/// `rod_features[r]` is channel-major `[6 * L]`: channel `c` occupies
/// `[c*L, (c+1)*L)`. `tendon_features[k]` is the raw `[L]` length history.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub rod_features: [Vec<f64>; 3],
    pub tendon_features: [Vec<f64>; 9],
    pub label: ContactVector,
    pub window_end_index: usize,
}

impl WindowSample {
    /// Window length L, recovered from the feature layout.
    pub fn window_len(&self) -> usize {
        self.rod_features[0].len() / IMU_CHANNELS_PER_ROD
    }
}

/// Cut `seq` into `floor((T - window) / stride) + 1` samples of length
/// `window`, advancing by `stride`; sample `k` covers timesteps
/// `[k*stride, k*stride + window)` and is labeled with the contact state at
/// its final timestep. Sequences without contact labels yield all-zero
/// placeholder labels (inference only).
pub fn slide_windows(
    seq: &SensorSequence,
    window: usize,
    stride: usize,
) -> Result<Vec<WindowSample>, GraphDataError> {
    assert!(stride > 0, "stride must be positive");
    let t = seq.len();
    if t < window || window == 0 {
        return Err(GraphDataError::SequenceTooShort { length: t, window });
    }
    let count = (t - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        out.push(extract_window(seq, k * stride, window));
    }
    Ok(out)
}

/// Extract the single window starting at `start` (caller checks bounds).
pub fn extract_window(seq: &SensorSequence, start: usize, window: usize) -> WindowSample {
    let end = start + window;
    let rod_features = std::array::from_fn(|r| {
        let mut block = Vec::with_capacity(IMU_CHANNELS_PER_ROD * window);
        for c in 0..IMU_CHANNELS_PER_ROD {
            block.extend_from_slice(&seq.imu[r * IMU_CHANNELS_PER_ROD + c][start..end]);
        }
        block
    });
    let tendon_features = std::array::from_fn(|k| seq.tendon_lengths[k][start..end].to_vec());
    let label = seq
        .contacts
        .as_ref()
        .map(|c| c[end - 1])
        .unwrap_or_default();
    WindowSample {
        rod_features,
        tendon_features,
        label,
        window_end_index: end - 1,
    }
}

/// Per-window, per-channel z-score: `(x - mean) / (std + eps)` with the
/// population standard deviation over the L frames of this window.
pub fn normalize_window(sample: &WindowSample) -> WindowSample {
    let l = sample.window_len();
    let mut out = sample.clone();
    for block in out.rod_features.iter_mut() {
        for chan in block.chunks_mut(l) {
            zscore(chan);
        }
    }
    for chan in out.tendon_features.iter_mut() {
        zscore(chan);
    }
    out
}

fn zscore(chan: &mut [f64]) {
    let n = chan.len() as f64;
    let mean = chan.iter().sum::<f64>() / n;
    let var = chan.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + NORM_EPS;
    for x in chan.iter_mut() {
        *x = (*x - mean) / denom;
    }
}

/// How the symmetry group acts on window samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum GroupActionMode {
    /// Permute node feature blocks and label entries only (default).
    #[default]
    IndexOnly,
    /// Additionally re-express each rod's accel/gyro triplets in the
    /// destination rod's sensor frame (exact physical equivariance).
    Physical,
}

/// Apply group element `label` to a sample: rod blocks move to
/// `rod_perm[r]`, tendon blocks to `tendon_perm[k]`, label entries to
/// `endcap_perm[i]`. In [`GroupActionMode::Physical`] the rod triplets are
/// also rotated by the rod-frame change of basis for (`label`, source rod).
pub fn apply_group_to_sample(
    group: &D3Group,
    label: GroupLabel,
    sample: &WindowSample,
    mode: GroupActionMode,
) -> WindowSample {
    let g = group.element(label);
    let l = sample.window_len();
    let mut out = sample.clone();
    for r in 0..NUM_RODS {
        let dst = g.rod_perm[r];
        match mode {
            GroupActionMode::IndexOnly => {
                out.rod_features[dst] = sample.rod_features[r].clone();
            }
            GroupActionMode::Physical => {
                let basis = group.rod_conjugation(label, r);
                out.rod_features[dst] = rotate_triplets(&sample.rod_features[r], &basis, l);
            }
        }
    }
    for k in 0..NUM_TENDONS {
        out.tendon_features[g.tendon_perm[k]] = sample.tendon_features[k].clone();
    }
    for i in 0..NUM_ENDCAPS {
        out.label.0[g.endcap_perm[i]] = sample.label.0[i];
    }
    out
}

/// Rotate both 3-channel triplets (accel, gyro) of a channel-major rod
/// block by `basis`: out_c(t) = sum_k basis[c][k] * in_k(t).
pub(crate) fn rotate_triplets(block: &[f64], basis: &nalgebra::Matrix3<f64>, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; block.len()];
    for triplet in 0..2 {
        let base = triplet * 3 * l;
        for c in 0..3 {
            for k in 0..3 {
                let b = basis[(c, k)];
                if b == 0.0 {
                    continue;
                }
                let src = &block[base + k * l..base + (k + 1) * l];
                let dst = &mut out[base + c * l..base + (c + 1) * l];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += b * v;
                }
            }
        }
    }
    out
}

/// Typed directed edge classes of the heterogeneous graph, in canonical
/// one-hot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeType {
    RodToEndcap = 0,
    EndcapToRod = 1,
    TendonToEndcap = 2,
    EndcapToTendon = 3,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::RodToEndcap,
        EdgeType::EndcapToRod,
        EdgeType::TendonToEndcap,
        EdgeType::EndcapToTendon,
    ];

    pub fn one_hot(&self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[*self as usize] = 1.0;
        v
    }
}

/// The fixed heterogeneous graph skeleton: 3 rod, 9 tendon, 6 endcap nodes
/// and four typed directed edge lists in deterministic canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    /// (rod, endcap) in rod order, each rod's endpoints in tuple order.
    pub rod_to_endcap: Vec<(u32, u32)>,
    /// Reversal of `rod_to_endcap`, same order.
    pub endcap_to_rod: Vec<(u32, u32)>,
    /// (tendon, endcap) in tendon order, endpoints in tuple order.
    pub tendon_to_endcap: Vec<(u32, u32)>,
    /// Reversal of `tendon_to_endcap`, same order.
    pub endcap_to_tendon: Vec<(u32, u32)>,
}

impl HeteroGraph {
    pub fn edge_count(&self) -> usize {
        self.rod_to_endcap.len()
            + self.endcap_to_rod.len()
            + self.tendon_to_endcap.len()
            + self.endcap_to_tendon.len()
    }

    pub fn edges(&self, ty: EdgeType) -> &[(u32, u32)] {
        match ty {
            EdgeType::RodToEndcap => &self.rod_to_endcap,
            EdgeType::EndcapToRod => &self.endcap_to_rod,
            EdgeType::TendonToEndcap => &self.tendon_to_endcap,
            EdgeType::EndcapToTendon => &self.endcap_to_tendon,
        }
    }
}

/// Build the typed edge lists from a validated topology.
pub fn assemble_graph(topology: &TensegrityTopology) -> HeteroGraph {
    let mut rod_to_endcap = Vec::with_capacity(2 * NUM_RODS);
    for (r, &(a, b)) in topology.rods.iter().enumerate() {
        rod_to_endcap.push((r as u32, a as u32));
        rod_to_endcap.push((r as u32, b as u32));
    }
    let endcap_to_rod = rod_to_endcap.iter().map(|&(r, e)| (e, r)).collect();
    let mut tendon_to_endcap = Vec::with_capacity(2 * NUM_TENDONS);
    for (k, &(a, b)) in topology.tendons.iter().enumerate() {
        tendon_to_endcap.push((k as u32, a as u32));
        tendon_to_endcap.push((k as u32, b as u32));
    }
    let endcap_to_tendon = tendon_to_endcap.iter().map(|&(k, e)| (e, k)).collect();
    HeteroGraph {
        rod_to_endcap,
        endcap_to_rod,
        tendon_to_endcap,
        endcap_to_tendon,
    }
}

// ---- dataset file format --------------------------------------------------

/// Write a sequence as CSV (34 columns, or 28 without contact labels).
/// Floats use shortest round-tripping decimal text.
pub fn write_dataset(path: &Path, seq: &SensorSequence) -> Result<(), GraphDataError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let labeled = seq.contacts.is_some();
    writeln!(w, "{}", if labeled { HEADER_LABELED } else { HEADER_UNLABELED })?;
    let mut line = String::with_capacity(512);
    for t in 0..seq.len() {
        line.clear();
        push_f64(&mut line, t as f64 / seq.sample_rate);
        for chan in &seq.imu {
            line.push(',');
            push_f64(&mut line, chan[t]);
        }
        for chan in &seq.tendon_lengths {
            line.push(',');
            push_f64(&mut line, chan[t]);
        }
        if let Some(contacts) = &seq.contacts {
            for f in contacts[t].0 {
                line.push(',');
                line.push(if f == 1 { '1' } else { '0' });
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn push_f64(buf: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(buf, "{v}");
}

/// Read a dataset CSV, validating the header, column counts, and contact
/// flag domain. The sample rate is inferred from the `t` column (snapped to
/// an integer when within 1e-6 relative); single-row files fall back to the
/// nominal 100 Hz.
pub fn read_dataset(path: &Path) -> Result<SensorSequence, GraphDataError> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| GraphDataError::FormatError("empty file".into()))??;
    let labeled = match header.trim_end() {
        h if h == HEADER_LABELED => true,
        h if h == HEADER_UNLABELED => false,
        h => {
            return Err(GraphDataError::FormatError(format!(
                "unrecognized header ({} columns, expected 34 or 28)",
                h.split(',').count()
            )))
        }
    };
    let ncols = if labeled { 34 } else { 28 };
    let mut times: Vec<f64> = Vec::new();
    let mut imu: Vec<Vec<f64>> = vec![Vec::new(); IMU_CHANNELS];
    let mut tendons: Vec<Vec<f64>> = vec![Vec::new(); NUM_TENDONS];
    let mut contacts: Vec<ContactVector> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(GraphDataError::FormatError(format!(
                "row {}: {} columns, expected {ncols}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, GraphDataError> {
            s.trim().parse::<f64>().map_err(|_| {
                GraphDataError::FormatError(format!("row {}: bad {what} value {s:?}", lineno + 2))
            })
        };
        times.push(parse(fields[0], "time")?);
        for (c, chan) in imu.iter_mut().enumerate() {
            chan.push(parse(fields[1 + c], "imu")?);
        }
        for (k, chan) in tendons.iter_mut().enumerate() {
            chan.push(parse(fields[1 + IMU_CHANNELS + k], "tendon")?);
        }
        if labeled {
            let mut flags = [0u8; 6];
            for (i, flag) in flags.iter_mut().enumerate() {
                let v = parse(fields[28 + i], "contact")?;
                if v == 0.0 {
                    *flag = 0;
                } else if v == 1.0 {
                    *flag = 1;
                } else {
                    return Err(GraphDataError::FormatError(format!(
                        "row {}: contact flag {v} is not 0/1",
                        lineno + 2
                    )));
                }
            }
            contacts.push(ContactVector(flags));
        }
    }
    if times.is_empty() {
        return Err(GraphDataError::FormatError("no data rows".into()));
    }
    let sample_rate = infer_rate(&times);
    SensorSequence::new(
        sample_rate,
        imu,
        tendons,
        if labeled { Some(contacts) } else { None },
    )
}

fn infer_rate(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return NOMINAL_RATE;
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return NOMINAL_RATE;
    }
    let rate = 1.0 / dt;
    let snapped = rate.round();
    if snapped >= 1.0 && (rate - snapped).abs() <= 1e-6 * snapped.max(1.0) {
        snapped
    } else {
        rate
    }
}

// ---- lazy window collections ------------------------------------------------

/// Reference to one (possibly group-augmented) window of a stored sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub sequence: u32,
    pub start: u32,
    pub group: GroupLabel,
}

/// A set of window references over shared sequences. Windows are
/// materialized (sliced, group-transformed, normalized) on demand, so large
/// datasets cost memory proportional to the raw recordings rather than to
/// `windows x window length`.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub sequences: Vec<Arc<SensorSequence>>,
    pub refs: Vec<WindowRef>,
    pub window: usize,
}

impl WindowSet {
    /// Index every stride-spaced window of every sequence (identity group
    /// element). Sequences shorter than the window are rejected.
    pub fn from_sequences(
        sequences: Vec<Arc<SensorSequence>>,
        window: usize,
        stride: usize,
    ) -> Result<Self, GraphDataError> {
        assert!(stride > 0, "stride must be positive");
        let mut refs = Vec::new();
        for (si, seq) in sequences.iter().enumerate() {
            let t = seq.len();
            if t < window || window == 0 {
                return Err(GraphDataError::SequenceTooShort { length: t, window });
            }
            let count = (t - window) / stride + 1;
            for k in 0..count {
                refs.push(WindowRef {
                    sequence: si as u32,
                    start: (k * stride) as u32,
                    group: GroupLabel::E,
                });
            }
        }
        Ok(WindowSet {
            sequences,
            refs,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Slice, group-transform, and normalize window `idx`.
    pub fn materialize(
        &self,
        idx: usize,
        group: &D3Group,
        mode: GroupActionMode,
    ) -> WindowSample {
        let r = self.refs[idx];
        let seq = &self.sequences[r.sequence as usize];
        let raw = extract_window(seq, r.start as usize, self.window);
        let transformed = if r.group == GroupLabel::E {
            raw
        } else {
            apply_group_to_sample(group, r.group, &raw, mode)
        };
        normalize_window(&transformed)
    }

    /// Fisher-Yates shuffle of the reference list.
    pub fn shuffle(&mut self, rng: &mut impl rand::Rng) {
        use rand::seq::SliceRandom;
        self.refs.shuffle(rng);
    }

    /// Split off the first `frac` of the (already shuffled) references into
    /// one set and the remainder into another, sharing the sequences.
    pub fn split(&self, frac: f64) -> (WindowSet, WindowSet) {
        assert!((0.0..=1.0).contains(&frac));
        let cut = ((self.refs.len() as f64) * frac).round() as usize;
        let a = WindowSet {
            sequences: self.sequences.clone(),
            refs: self.refs[..cut].to_vec(),
            window: self.window,
        };
        let b = WindowSet {
            sequences: self.sequences.clone(),
            refs: self.refs[cut..].to_vec(),
            window: self.window,
        };
        (a, b)
    }

    /// Keep a random subset of at most `n` references.
    pub fn subsample(&mut self, n: usize, rng: &mut impl rand::Rng) {
        if self.refs.len() > n {
            self.shuffle(rng);
            self.refs.truncate(n);
        }
    }

    /// Replace every reference by its orbit under `labels` (training-time
    /// group augmentation).
    pub fn augment(&mut self, labels: &[GroupLabel]) {
        let mut out = Vec::with_capacity(self.refs.len() * labels.len());
        for &r in &self.refs {
            debug_assert_eq!(r.group, GroupLabel::E, "augmenting an augmented set");
            for &g in labels {
                out.push(WindowRef { group: g, ..r });
            }
        }
        self.refs = out;
    }
}
