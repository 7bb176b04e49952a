//! Canonical 3-bar prism geometry and its order-6 symmetry group.
//!
//! The robot is a twisted triangular prism: three rigid rods, each carrying
//! two endcaps, braced by nine tendons (top triangle, bottom triangle, and a
//! right-handed weave of side cables). Its symmetry group is dihedral of
//! order 6, realised here by proper rotations only: the two non-trivial
//! rotations about the long axis, plus three end-over-end flips about
//! horizontal axes. A mirror across a vertical plane is *not* a symmetry of
//! this structure — the side-cable weave is chiral — so the "reflection-like"
//! elements are the flips, which preserve the weave while exchanging the top
//! and bottom triangles.
//!
//! Group elements are derived geometrically: apply the rigid transform to the
//! endcap positions, match each image to its nearest canonical endcap, and
//! induce the rod and tendon permutations through the edge sets. Anything
//! that fails to match exactly (within [`MATCH_TOLERANCE`]) is an error, so a
//! topology that lacks the symmetry cannot silently produce a bogus group.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use thiserror::Error;

pub const NUM_ENDCAPS: usize = 6;
pub const NUM_RODS: usize = 3;
pub const NUM_TENDONS: usize = 9;

/// Point-matching tolerance (metres) when deriving permutations.
pub const MATCH_TOLERANCE: f64 = 1e-6;

/// Circumradius of the endcap triangles (m).
const PRISM_RADIUS: f64 = 0.25;
/// Vertical separation of the triangles (m).
const PRISM_HEIGHT: f64 = 0.40;
/// Relative twist of the top triangle about the long axis. 150 degrees is
/// the equilibrium twist of a 3-bar prism with this cabling handedness.
const PRISM_TWIST: f64 = 5.0 * PI / 6.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    /// A rigid transform did not map the structure onto itself.
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    /// Composition left the derived element set.
    #[error("closure violation: {0}")]
    ClosureViolation(String),
}

/// Static description of the robot: endcap positions in the body frame plus
/// the rod and tendon connectivity over endcap indices.
#[derive(Debug, Clone)]
pub struct TensegrityTopology {
    /// Endcaps 0-2 form the top triangle (counterclockwise about
    /// `rod_axis`), 3-5 the bottom triangle; rod `i` is `(i, i+3)`.
    pub endcap_positions: [Vector3<f64>; NUM_ENDCAPS],
    pub rods: [(usize, usize); NUM_RODS],
    /// Tendons 0-2: top triangle, 3-5: bottom triangle, 6-8: side cables.
    pub tendons: [(usize, usize); NUM_TENDONS],
    /// Central longitudinal axis of the prism (unit).
    pub rod_axis: Vector3<f64>,
}

/// Canonical rest configuration: bottom triangle in the ground plane
/// (z = 0), top triangle at z = `PRISM_HEIGHT`, twisted by `PRISM_TWIST`.
pub fn build_canonical_topology() -> TensegrityTopology {
    let mut pos = [Vector3::zeros(); NUM_ENDCAPS];
    for i in 0..3 {
        let a_top = PRISM_TWIST + 2.0 * PI * i as f64 / 3.0;
        let a_bot = 2.0 * PI * i as f64 / 3.0;
        pos[i] = Vector3::new(PRISM_RADIUS * a_top.cos(), PRISM_RADIUS * a_top.sin(), PRISM_HEIGHT);
        pos[i + 3] = Vector3::new(PRISM_RADIUS * a_bot.cos(), PRISM_RADIUS * a_bot.sin(), 0.0);
    }
    TensegrityTopology {
        endcap_positions: pos,
        rods: [(0, 3), (1, 4), (2, 5)],
        tendons: [
            (0, 1),
            (1, 2),
            (2, 0),
            (3, 4),
            (4, 5),
            (5, 3),
            (0, 4),
            (1, 5),
            (2, 3),
        ],
        rod_axis: Vector3::z(),
    }
}

impl TensegrityTopology {
    /// Geometric centre of the endcaps; also the fixed point used for all
    /// group transforms and the reference point for the body IMU fusion.
    pub fn center(&self) -> Vector3<f64> {
        self.endcap_positions.iter().sum::<Vector3<f64>>() / NUM_ENDCAPS as f64
    }

    /// Endcap positions relative to [`Self::center`], used as the lever arms
    /// of the contact points in the state estimator.
    pub fn endcap_offsets(&self) -> [Vector3<f64>; NUM_ENDCAPS] {
        let c = self.center();
        let mut out = [Vector3::zeros(); NUM_ENDCAPS];
        for (o, p) in out.iter_mut().zip(&self.endcap_positions) {
            *o = p - c;
        }
        out
    }

    /// Nominal (rest) length of tendon `t`.
    pub fn tendon_rest_length(&self, t: usize) -> f64 {
        let (a, b) = self.tendons[t];
        (self.endcap_positions[a] - self.endcap_positions[b]).norm()
    }

    /// Structural sanity checks: every endcap on exactly one rod, every
    /// endcap on exactly three tendons, no tendon duplicating a rod, and the
    /// endcap set invariant under a 120-degree rotation about `rod_axis`.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let mut rod_degree = [0usize; NUM_ENDCAPS];
        for &(a, b) in &self.rods {
            rod_degree[a] += 1;
            rod_degree[b] += 1;
        }
        if rod_degree.iter().any(|&d| d != 1) {
            return Err(GeometryError::GeometryMismatch(format!(
                "each endcap must sit on exactly one rod, got degrees {rod_degree:?}"
            )));
        }
        let mut tendon_degree = [0usize; NUM_ENDCAPS];
        for &(a, b) in &self.tendons {
            if a == b {
                return Err(GeometryError::GeometryMismatch("degenerate tendon".into()));
            }
            tendon_degree[a] += 1;
            tendon_degree[b] += 1;
        }
        if tendon_degree.iter().any(|&d| d != 3) {
            return Err(GeometryError::GeometryMismatch(format!(
                "each endcap must touch exactly three tendons, got degrees {tendon_degree:?}"
            )));
        }
        for &(a, b) in &self.tendons {
            if self.rods.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
                return Err(GeometryError::GeometryMismatch(format!(
                    "tendon ({a},{b}) duplicates a rod"
                )));
            }
        }
        let rot = rotation_about(&self.rod_axis, 2.0 * PI / 3.0);
        let c = self.center();
        for p in &self.endcap_positions {
            let q = rot * (p - c) + c;
            if !self
                .endcap_positions
                .iter()
                .any(|e| (e - q).norm() < MATCH_TOLERANCE)
            {
                return Err(GeometryError::GeometryMismatch(
                    "endcap set not invariant under 120-degree rotation".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Labels for the six group elements. `R` rotates 120 degrees about the long
/// axis; `F` is the end-over-end flip (180-degree rotation about a
/// horizontal axis through the centre); products are `F` after `R^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupLabel {
    E,
    R,
    R2,
    F,
    FR,
    FR2,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 6] = [
        GroupLabel::E,
        GroupLabel::R,
        GroupLabel::R2,
        GroupLabel::F,
        GroupLabel::FR,
        GroupLabel::FR2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupLabel::E => "e",
            GroupLabel::R => "r",
            GroupLabel::R2 => "r2",
            GroupLabel::F => "f",
            GroupLabel::FR => "fr",
            GroupLabel::FR2 => "fr2",
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|l| l == self).unwrap()
    }
}

impl std::fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One symmetry element as coordinated index permutations. Permutations are
/// stored in image form: applying the element sends index `i` to
/// `perm[i]`, i.e. `new[perm[i]] = old[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupElement {
    pub label: GroupLabel,
    pub endcap_perm: [usize; NUM_ENDCAPS],
    pub rod_perm: [usize; NUM_RODS],
    pub tendon_perm: [usize; NUM_TENDONS],
}

impl GroupElement {
    pub fn is_identity(&self) -> bool {
        self.endcap_perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// The derived group: six elements, their rigid rotations, the composition
/// table, and the per-rod sensor-frame conjugations used by the physical
/// group action on samples.
#[derive(Debug, Clone)]
pub struct D3Group {
    elements: [GroupElement; 6],
    rotations: [Matrix3<f64>; 6],
    center: Vector3<f64>,
    /// `rod_conj[g][r]` maps rod `r`'s sensor readings into the frame of the
    /// rod it becomes under element `g` (a proper rotation; identity for the
    /// pure axis rotations, a 180-degree roll for the flips).
    rod_conj: [[Matrix3<f64>; 3]; 6],
    table: [[usize; 6]; 6],
    inverse: [usize; 6],
}

/// Rotation by `angle` about unit `axis`.
fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle)
        .into_inner()
}

/// Right-handed orthonormal frame for each rod: z along the rod
/// (bottom endcap toward top endcap), x radially outward from the prism
/// axis at the rod midpoint, y completing the frame. Columns of the returned
/// matrices are the rod-frame axes expressed in the body frame.
pub fn rod_frames(topo: &TensegrityTopology) -> [Matrix3<f64>; NUM_RODS] {
    let c = topo.center();
    let mut out = [Matrix3::identity(); NUM_RODS];
    for (r, &(top, bottom)) in topo.rods.iter().enumerate() {
        let z = (topo.endcap_positions[top] - topo.endcap_positions[bottom]).normalize();
        let mid = (topo.endcap_positions[top] + topo.endcap_positions[bottom]) / 2.0;
        let w = mid - c;
        let mut x = w - z * w.dot(&z);
        if x.norm() < 1e-9 {
            // rod midpoint on the prism axis; fall back to a fixed reference
            x = Vector3::x() - z * z.x;
        }
        let x = x.normalize();
        let y = z.cross(&x);
        out[r] = Matrix3::from_columns(&[x, y, z]);
    }
    out
}

/// Positions of the rod-mounted IMUs (rod midpoints) in the body frame,
/// relative to the endcap centre. Their mean is exactly zero, which is what
/// makes the three-IMU average equal the specific force at the centre.
pub fn rod_sensor_offsets(topo: &TensegrityTopology) -> [Vector3<f64>; NUM_RODS] {
    let c = topo.center();
    let mut out = [Vector3::zeros(); NUM_RODS];
    for (r, &(a, b)) in topo.rods.iter().enumerate() {
        out[r] = (topo.endcap_positions[a] + topo.endcap_positions[b]) / 2.0 - c;
    }
    out
}

/// Derive the full symmetry group of `topo` geometrically.
pub fn build_d3_group(topo: &TensegrityTopology) -> Result<D3Group, GeometryError> {
    topo.validate()?;
    let c = topo.center();

    // The flip axis is horizontal, through the centre, at the azimuth that
    // exchanges the endpoints of rod 0 (an end-over-end somersault of the
    // prism). For the canonical twist the azimuth is half the twist angle.
    let flip_azimuth = PRISM_TWIST / 2.0;
    let flip_axis = Vector3::new(flip_azimuth.cos(), flip_azimuth.sin(), 0.0);

    let rz = |k: f64| rotation_about(&topo.rod_axis, k * 2.0 * PI / 3.0);
    let qf = rotation_about(&flip_axis, PI);
    let rotations = [
        Matrix3::identity(),
        rz(1.0),
        rz(2.0),
        qf,
        qf * rz(1.0),
        qf * rz(2.0),
    ];

    let mut elements = Vec::with_capacity(6);
    for (label, q) in GroupLabel::ALL.iter().zip(&rotations) {
        elements.push(derive_element(topo, *label, q, &c)?);
    }
    let elements: [GroupElement; 6] = elements.try_into().unwrap();

    // Composition table over endcap permutations, resolved against the
    // derived element set.
    let mut table = [[usize::MAX; 6]; 6];
    for (gi, g) in elements.iter().enumerate() {
        for (hi, h) in elements.iter().enumerate() {
            let mut composed = [0usize; NUM_ENDCAPS];
            for (i, slot) in composed.iter_mut().enumerate() {
                *slot = g.endcap_perm[h.endcap_perm[i]];
            }
            let idx = elements
                .iter()
                .position(|e| e.endcap_perm == composed)
                .ok_or_else(|| {
                    GeometryError::ClosureViolation(format!(
                        "{} * {} leaves the element set",
                        g.label, h.label
                    ))
                })?;
            table[gi][hi] = idx;
        }
    }

    let mut inverse = [usize::MAX; 6];
    for gi in 0..6 {
        let inv = (0..6).find(|&hi| table[gi][hi] == 0).ok_or_else(|| {
            GeometryError::ClosureViolation(format!("{} has no inverse", elements[gi].label))
        })?;
        inverse[gi] = inv;
    }

    // Sensor-frame conjugations for the physical action: how rod r's IMU
    // readings re-express in the frame of the rod it becomes under g. With
    // the canonical frames these are signed permutation matrices; snap the
    // floating-point products to exact {-1, 0, 1} entries so downstream
    // sample transforms stay bitwise deterministic, and reject geometries
    // where the product is not within rounding error of such a matrix.
    let frames = rod_frames(topo);
    let mut rod_conj = [[Matrix3::identity(); 3]; 6];
    for (gi, g) in elements.iter().enumerate() {
        for r in 0..NUM_RODS {
            let raw = frames[g.rod_perm[r]].transpose() * rotations[gi] * frames[r];
            rod_conj[gi][r] = snap_signed_permutation(&raw).ok_or_else(|| {
                GeometryError::GeometryMismatch(format!(
                    "sensor-frame change of basis for ({}, rod {r}) is not a signed axis permutation: {raw}",
                    g.label
                ))
            })?;
        }
    }

    Ok(D3Group {
        elements,
        rotations,
        center: c,
        rod_conj,
        table,
        inverse,
    })
}

/// Round a matrix whose entries are all within `1e-9` of `{-1, 0, 1}` (with
/// exactly one nonzero per row and column) to the exact signed permutation;
/// returns `None` for anything else.
fn snap_signed_permutation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let v = m[(i, j)];
            let snapped = v.round();
            if (v - snapped).abs() > 1e-9 || snapped.abs() > 1.0 {
                return None;
            }
            out[(i, j)] = snapped;
        }
    }
    for k in 0..3 {
        let row_nonzero = (0..3).filter(|&j| out[(k, j)] != 0.0).count();
        let col_nonzero = (0..3).filter(|&i| out[(i, k)] != 0.0).count();
        if row_nonzero != 1 || col_nonzero != 1 {
            return None;
        }
    }
    Some(out)
}

fn derive_element(
    topo: &TensegrityTopology,
    label: GroupLabel,
    q: &Matrix3<f64>,
    center: &Vector3<f64>,
) -> Result<GroupElement, GeometryError> {
    let mut endcap_perm = [usize::MAX; NUM_ENDCAPS];
    for (i, p) in topo.endcap_positions.iter().enumerate() {
        let image = q * (p - center) + center;
        let (best, dist) = topo
            .endcap_positions
            .iter()
            .enumerate()
            .map(|(j, e)| (j, (e - image).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if dist > MATCH_TOLERANCE {
            return Err(GeometryError::GeometryMismatch(format!(
                "element {label}: endcap {i} image misses every endcap (nearest {dist:.3e} m)"
            )));
        }
        endcap_perm[i] = best;
    }
    let mut seen = [false; NUM_ENDCAPS];
    for &p in &endcap_perm {
        if seen[p] {
            return Err(GeometryError::GeometryMismatch(format!(
                "element {label}: endcap permutation not a bijection: {endcap_perm:?}"
            )));
        }
        seen[p] = true;
    }

    let rod_perm = induce_edge_perm(&topo.rods, &endcap_perm).map_err(|pair| {
        GeometryError::GeometryMismatch(format!(
            "element {label}: rod image {pair:?} is not a rod"
        ))
    })?;
    let tendon_perm = induce_edge_perm(&topo.tendons, &endcap_perm).map_err(|pair| {
        GeometryError::GeometryMismatch(format!(
            "element {label}: tendon image {pair:?} is not a tendon"
        ))
    })?;

    Ok(GroupElement {
        label,
        endcap_perm,
        rod_perm: rod_perm.try_into().unwrap(),
        tendon_perm: tendon_perm.try_into().unwrap(),
    })
}

/// Map each edge through the endcap permutation and find which edge it
/// lands on (unordered match). Errors with the offending image pair.
fn induce_edge_perm<const N: usize>(
    edges: &[(usize, usize); N],
    endcap_perm: &[usize; NUM_ENDCAPS],
) -> Result<Vec<usize>, (usize, usize)> {
    let mut perm = Vec::with_capacity(N);
    for &(a, b) in edges.iter() {
        let (ia, ib) = (endcap_perm[a], endcap_perm[b]);
        let pos = edges
            .iter()
            .position(|&(x, y)| (x, y) == (ia, ib) || (x, y) == (ib, ia))
            .ok_or((ia, ib))?;
        perm.push(pos);
    }
    let mut seen = vec![false; N];
    for &p in &perm {
        if seen[p] {
            return Err((p, p));
        }
        seen[p] = true;
    }
    Ok(perm)
}

impl D3Group {
    pub fn elements(&self) -> &[GroupElement; 6] {
        &self.elements
    }

    pub fn identity(&self) -> &GroupElement {
        &self.elements[0]
    }

    pub fn element(&self, label: GroupLabel) -> &GroupElement {
        &self.elements[label.index()]
    }

    /// `compose(g, h)` = apply `h` first, then `g`.
    pub fn compose(
        &self,
        g: &GroupElement,
        h: &GroupElement,
    ) -> Result<&GroupElement, GeometryError> {
        let gi = self.position_of(g)?;
        let hi = self.position_of(h)?;
        Ok(&self.elements[self.table[gi][hi]])
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<&GroupElement, GeometryError> {
        let gi = self.position_of(g)?;
        Ok(&self.elements[self.inverse[gi]])
    }

    fn position_of(&self, g: &GroupElement) -> Result<usize, GeometryError> {
        self.elements
            .iter()
            .position(|e| e.endcap_perm == g.endcap_perm)
            .ok_or_else(|| {
                GeometryError::ClosureViolation(format!(
                    "element with permutation {:?} is not in the group",
                    g.endcap_perm
                ))
            })
    }

    /// Rigid rotation of element `label` (about [`Self::transform_center`]).
    pub fn rotation(&self, label: GroupLabel) -> &Matrix3<f64> {
        &self.rotations[label.index()]
    }

    pub fn transform_center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// Sensor-frame conjugation for rod `r` under element `label`.
    pub fn rod_conjugation(&self, label: GroupLabel, r: usize) -> &Matrix3<f64> {
        &self.rod_conj[label.index()][r]
    }
}
