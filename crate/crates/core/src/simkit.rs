//! Synthetic sensor-data generator: a kinematic scripted-tumble model of the
//! rolling prism.
//!
//! This is deliberately *not* a dynamics simulation. Each locomotion step
//! pivots the rigid body about one edge of its current support triangle
//! through the exact tip-over angle (the smallest rotation that brings
//! another endcap to the ground), with a smooth angular-velocity profile and
//! a dwell between steps. That produces trajectories with the right contact
//! semantics (3 contacts at rest, 2 during a pivot), exact analytic IMU
//! signals (gravity, angular rate, and the centripetal/tangential terms of
//! the pivot kinematics), scripted tendon-length modulation, and ground-truth
//! poses — a learnable, symmetric, fully reproducible stand-in for recorded
//! robot data.
//!
//! Conventions: ground plane z = 0, gravity 9.81 m/s² along −z. `F`/`B`
//! travel along ±x; the `L`/`R` primitives curve the path counterclockwise /
//! clockwise as seen from above, with the turn per step growing linearly as
//! `turning_ratio` shrinks (1.0 = nominal turn, smaller = tighter). Tendon
//! lengths are sinusoids around the nominal inter-endcap distances, phased by
//! the step cadence and the primitive, with the side-cable amplitude made
//! asymmetric by the turning ratio.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::geometry::{
    build_canonical_topology, rod_frames, TensegrityTopology, NUM_ENDCAPS, NUM_RODS, NUM_TENDONS,
};
use crate::graphdata::{ContactVector, GraphDataError, SensorSequence, IMU_CHANNELS};
use crate::util::SeedTree;

pub const GRAVITY: f64 = 9.81;
/// Endcap height below which ground contact is declared (m).
pub const DEFAULT_CONTACT_TOLERANCE: f64 = 0.005;
/// Pivot motion time per step (s).
const PIVOT_DURATION: f64 = 0.8;
/// Rest time between pivots (s); the sequence also starts with one dwell.
const DWELL_DURATION: f64 = 0.4;
/// Nominal turn per step for the turning primitives (rad).
const BASE_TURN: f64 = 0.15;
/// Relative amplitude of the tendon-length modulation.
const TENDON_AMPLITUDE: f64 = 0.08;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Data(#[from] GraphDataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pose file: {0}")]
    PoseFormat(String),
}

type Result<T> = std::result::Result<T, SimError>;

/// The six scripted locomotion behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Primitive {
    /// Forward (+x).
    F,
    /// Backward (−x).
    B,
    /// Forward-left (counterclockwise curvature).
    FL,
    /// Forward-right (clockwise curvature).
    FR,
    /// Backward-left.
    BL,
    /// Backward-right.
    BR,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::F,
        Primitive::B,
        Primitive::FL,
        Primitive::FR,
        Primitive::BL,
        Primitive::BR,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Primitive::F => "F",
            Primitive::B => "B",
            Primitive::FL => "FL",
            Primitive::FR => "FR",
            Primitive::BL => "BL",
            Primitive::BR => "BR",
        }
    }

    /// Initial travel azimuth (rad).
    fn base_heading(&self) -> f64 {
        match self {
            Primitive::F | Primitive::FL | Primitive::FR => 0.0,
            Primitive::B | Primitive::BL | Primitive::BR => PI,
        }
    }

    /// Sign of the path curvature (+1 counterclockwise, −1 clockwise).
    fn turn_sign(&self) -> f64 {
        match self {
            Primitive::FL | Primitive::BL => 1.0,
            Primitive::FR | Primitive::BR => -1.0,
            Primitive::F | Primitive::B => 0.0,
        }
    }

    /// Whether the gait curves (everything except `F`/`B`).
    pub fn is_turning(&self) -> bool {
        self.turn_sign() != 0.0
    }

    fn index(&self) -> usize {
        Primitive::ALL.iter().position(|p| p == self).unwrap()
    }
}

impl std::str::FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(Primitive::F),
            "B" => Ok(Primitive::B),
            "FL" => Ok(Primitive::FL),
            "FR" => Ok(Primitive::FR),
            "BL" => Ok(Primitive::BL),
            "BR" => Ok(Primitive::BR),
            other => Err(format!("unknown primitive {other:?} (expected F, B, FL, FR, BL, BR)")),
        }
    }
}

impl std::fmt::Display for Primitive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-channel Gaussian noise levels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    /// Accelerometer std (m/s²).
    pub accel_std: f64,
    /// Gyroscope std (rad/s).
    pub gyro_std: f64,
    /// Tendon length std (m).
    pub tendon_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            accel_std: 0.05,
            gyro_std: 0.005,
            tendon_std: 0.001,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            accel_std: 0.0,
            gyro_std: 0.0,
            tendon_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub primitive: Primitive,
    /// Turn tightness in (0, 1]; 1.0 is the nominal turning gait. Ignored by
    /// `F`/`B`.
    pub turning_ratio: f64,
    /// Sequence duration (s).
    pub duration: f64,
    /// Sample rate (Hz).
    pub sample_rate: f64,
    pub noise: NoiseModel,
    /// Endcap height threshold for ground-truth contact (m).
    pub contact_height_tolerance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            primitive: Primitive::F,
            turning_ratio: 1.0,
            duration: 60.0,
            sample_rate: 100.0,
            noise: NoiseModel::default(),
            contact_height_tolerance: DEFAULT_CONTACT_TOLERANCE,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::ConfigInvalid(msg));
        if !(self.turning_ratio > 0.0 && self.turning_ratio <= 1.0) {
            return bad(format!("turning_ratio {} outside (0, 1]", self.turning_ratio));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("sample_rate {} must be positive", self.sample_rate));
        }
        for (name, std) in [
            ("accel_std", self.noise.accel_std),
            ("gyro_std", self.noise.gyro_std),
            ("tendon_std", self.noise.tendon_std),
        ] {
            if !(std >= 0.0 && std.is_finite()) {
                return bad(format!("{name} {std} must be non-negative"));
            }
        }
        if !(self.contact_height_tolerance > 0.0 && self.contact_height_tolerance.is_finite()) {
            return bad(format!(
                "contact_height_tolerance {} must be positive",
                self.contact_height_tolerance
            ));
        }
        Ok(())
    }
}

/// Ground-truth body state at one timestamp. The reference point is the
/// endcap centroid (the same point the state estimator tracks).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStamped {
    pub t: f64,
    pub rotation: UnitQuaternion<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// A simulation run: the sensor sequence plus the true trajectory.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub sequence: SensorSequence,
    pub truth: Vec<PoseStamped>,
}

/// One scheduled tip-over step.
struct Tumble {
    /// Pivot motion starts here (s); dwell follows the motion.
    start: f64,
    /// Unit rotation axis (horizontal), oriented so positive rotation tips
    /// the body outward.
    axis: Vector3<f64>,
    /// A point on the pivot line (a support endcap).
    pivot: Vector3<f64>,
    /// Total tip-over angle (rad).
    angle: f64,
    /// Pose before the step.
    rot_before: Matrix3<f64>,
    pos_before: Vector3<f64>,
    /// Snapped pose after the step.
    rot_after: Matrix3<f64>,
    pos_after: Vector3<f64>,
}

/// Precomputed tumbling schedule over the whole duration.
struct Schedule {
    tumbles: Vec<Tumble>,
}

impl Schedule {
    /// Pose, world angular velocity/acceleration, and pivot point at time `t`.
    fn state_at(&self, t: f64) -> BodyState {
        // before the first pivot, or no pivots at all: initial rest
        let rest = |rot: Matrix3<f64>, pos: Vector3<f64>| BodyState {
            rot,
            pos,
            omega: Vector3::zeros(),
            alpha: Vector3::zeros(),
            pivot: None,
        };
        let Some(first) = self.tumbles.first() else {
            return rest(Matrix3::identity(), Vector3::zeros());
        };
        if t < first.start {
            return rest(first.rot_before, first.pos_before);
        }
        // find the last tumble that has started
        let idx = match self
            .tumbles
            .binary_search_by(|tb| tb.start.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let tb = &self.tumbles[idx];
        let s = (t - tb.start) / PIVOT_DURATION;
        if s >= 1.0 {
            return rest(tb.rot_after, tb.pos_after);
        }
        // smooth profile: theta(s) = angle * (1 - cos(pi s)) / 2
        let theta = tb.angle * (1.0 - (PI * s).cos()) / 2.0;
        let rate = tb.angle * PI / (2.0 * PIVOT_DURATION) * (PI * s).sin();
        let accel = tb.angle * (PI / PIVOT_DURATION).powi(2) / 2.0 * (PI * s).cos();
        let q = Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(tb.axis),
            theta,
        );
        let rot = q * tb.rot_before;
        let pos = tb.pivot + q * (tb.pos_before - tb.pivot);
        BodyState {
            rot,
            pos,
            omega: tb.axis * rate,
            alpha: tb.axis * accel,
            pivot: Some(tb.pivot),
        }
    }
}

/// Instantaneous rigid-body state: `x_world = rot · x_body + pos`, rotating
/// about the line through `pivot` with angular velocity `omega`.
struct BodyState {
    rot: Matrix3<f64>,
    pos: Vector3<f64>,
    omega: Vector3<f64>,
    alpha: Vector3<f64>,
    pivot: Option<Vector3<f64>>,
}

impl BodyState {
    fn point(&self, body: &Vector3<f64>) -> Vector3<f64> {
        self.rot * body + self.pos
    }

    fn point_velocity(&self, world_point: &Vector3<f64>) -> Vector3<f64> {
        match &self.pivot {
            Some(c) => self.omega.cross(&(world_point - c)),
            None => Vector3::zeros(),
        }
    }

    /// Acceleration of a body-fixed point: tangential + centripetal terms of
    /// the fixed-axis pivot.
    fn point_acceleration(&self, world_point: &Vector3<f64>) -> Vector3<f64> {
        match &self.pivot {
            Some(c) => {
                let r = world_point - c;
                self.alpha.cross(&r) + self.omega.cross(&self.omega.cross(&r))
            }
            None => Vector3::zeros(),
        }
    }
}

/// Smallest positive rotation about `(pivot, axis)` that brings `point` to
/// the ground plane, or `None` if the point never reaches it.
fn tip_angle_to_ground(point: &Vector3<f64>, pivot: &Vector3<f64>, axis: &Vector3<f64>) -> Option<f64> {
    let v = point - pivot;
    let w = v - axis * v.dot(axis);
    let c = w.z;
    let s = axis.cross(&w).z;
    if c * c + s * s < 1e-18 {
        return None; // on the axis
    }
    // height(theta) = c cos(theta) + s sin(theta); first positive root
    let theta = f64::atan2(c, -s);
    let theta = if theta <= 1e-9 { theta + 2.0 * PI } else { theta };
    Some(theta)
}

fn build_schedule(topo: &TensegrityTopology, config: &SimConfig) -> Schedule {
    let mut rot = Matrix3::identity();
    let mut pos = Vector3::zeros();
    // canonical rest: bottom triangle (endcaps 3, 4, 5) on the ground
    let mut support = [3usize, 4, 5];
    let mut heading = config.primitive.base_heading();
    let turn_per_step =
        config.primitive.turn_sign() * BASE_TURN * (2.0 - config.turning_ratio);

    let straight = turn_per_step == 0.0;
    let base_dir = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let base_perp = Vector3::new(-heading.sin(), heading.cos(), 0.0);

    let mut tumbles = Vec::new();
    let mut clock = DWELL_DURATION; // initial rest phase
    let step_period = PIVOT_DURATION + DWELL_DURATION;
    while clock < config.duration {
        let world: Vec<Vector3<f64>> = topo
            .endcap_positions
            .iter()
            .map(|e| rot * e + pos)
            .collect();
        let centroid = (world[support[0]] + world[support[1]] + world[support[2]]) / 3.0;
        // The roll directions available from one face are quantized to three
        // edge normals, and the twist makes them chirally biased, so an
        // open-loop straight gait drifts sideways. Steer the straight
        // primitives back toward their intended line; turning primitives
        // follow the integrated heading.
        let dir = if straight {
            let lateral = centroid.dot(&base_perp);
            (base_dir - base_perp * (2.0 * lateral).clamp(-0.7, 0.7)).normalize()
        } else {
            Vector3::new(heading.cos(), heading.sin(), 0.0)
        };

        // support edge whose outward normal best matches the heading
        let edges = [
            (support[0], support[1]),
            (support[1], support[2]),
            (support[2], support[0]),
        ];
        let (i, j) = edges
            .into_iter()
            .max_by(|a, b| {
                let score = |&(p, q): &(usize, usize)| {
                    let mid = (world[p] + world[q]) / 2.0;
                    let mut u = mid - centroid;
                    u.z = 0.0;
                    u.normalize().dot(&dir)
                };
                score(a).partial_cmp(&score(b)).unwrap()
            })
            .unwrap();

        // orient the axis so positive rotation tips the body over the edge:
        // the support vertex that is not on the pivot edge must lift. (Its
        // initial vertical velocity is the z-component of axis x (v - pivot),
        // a quantity of order the triangle size, so the sign test is robust.)
        let k_old = support
            .iter()
            .copied()
            .find(|k| *k != i && *k != j)
            .expect("support triangle has three distinct vertices");
        let mut axis = (world[j] - world[i]).normalize();
        if axis.cross(&(world[k_old] - world[i])).z < 0.0 {
            axis = -axis;
        }

        // exact tip-over: the first remaining endcap to reach the ground
        let (next_vertex, angle) = (0..NUM_ENDCAPS)
            .filter(|k| !support.contains(k))
            .filter_map(|k| tip_angle_to_ground(&world[k], &world[i], &axis).map(|a| (k, a)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("a tip-over target always exists");

        let q = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let rot_next_raw = q * rot;
        let pos_next_raw = world[i] + q * (pos - world[i]);
        // re-orthonormalize and re-level so error cannot accumulate
        let rot_next = *Rotation3::from_matrix(&rot_next_raw).matrix();
        let mut pos_next = pos_next_raw;
        support = [i, j, next_vertex];
        let mean_height: f64 = support
            .iter()
            .map(|&k| (rot_next * topo.endcap_positions[k] + pos_next).z)
            .sum::<f64>()
            / 3.0;
        pos_next.z -= mean_height;

        tumbles.push(Tumble {
            start: clock,
            axis,
            pivot: world[i],
            angle,
            rot_before: rot,
            pos_before: pos,
            rot_after: rot_next,
            pos_after: pos_next,
        });
        rot = rot_next;
        pos = pos_next;
        heading += turn_per_step;
        clock += step_period;
    }
    Schedule { tumbles }
}

/// Run the scripted-tumble model and return the sensor sequence together
/// with the ground-truth trajectory.
pub fn simulate_with_truth(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let topo = build_canonical_topology();
    let frames = rod_frames(&topo);
    let center = topo.center();
    let sensors: [Vector3<f64>; NUM_RODS] = std::array::from_fn(|r| {
        let (a, b) = topo.rods[r];
        (topo.endcap_positions[a] + topo.endcap_positions[b]) / 2.0
    });
    let schedule = build_schedule(&topo, config);

    let n = (config.duration * config.sample_rate).round().max(1.0) as usize;
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY);
    let step_period = PIVOT_DURATION + DWELL_DURATION;
    let omega_tendon = 2.0 * PI / step_period;
    let phase_primitive = config.primitive.index() as f64 * PI / 3.0;
    let side_asymmetry = 1.0
        + config.primitive.turn_sign() * (1.0 - config.turning_ratio) * 0.8;

    let mut imu = vec![vec![0.0; n]; IMU_CHANNELS];
    let mut tendons = vec![vec![0.0; n]; NUM_TENDONS];
    let mut contacts = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);

    for k in 0..n {
        let t = k as f64 / config.sample_rate;
        let state = schedule.state_at(t);

        for r in 0..NUM_RODS {
            let world_frame = state.rot * frames[r];
            let sensor_world = state.point(&sensors[r]);
            let accel = state.point_acceleration(&sensor_world);
            let specific_force = world_frame.transpose() * (accel - gravity);
            let rate = world_frame.transpose() * state.omega;
            for axis in 0..3 {
                imu[r * 6 + axis][k] = specific_force[axis];
                imu[r * 6 + 3 + axis][k] = rate[axis];
            }
        }

        for (ti, row) in tendons.iter_mut().enumerate() {
            let nominal = topo.tendon_rest_length(ti);
            let amplitude = if ti >= 6 {
                TENDON_AMPLITUDE * side_asymmetry
            } else {
                TENDON_AMPLITUDE
            };
            let phase = 2.0 * PI * (ti % 3) as f64 / 3.0
                + phase_primitive
                + if ti < 3 { 0.0 } else if ti < 6 { PI / 2.0 } else { PI };
            row[k] = nominal * (1.0 + amplitude * (omega_tendon * t + phase).sin());
        }

        let mut flags = [0u8; NUM_ENDCAPS];
        for (e, flag) in flags.iter_mut().enumerate() {
            let z = state.point(&topo.endcap_positions[e]).z;
            *flag = u8::from(z < config.contact_height_tolerance);
        }
        contacts.push(ContactVector::new(flags));

        let center_world = state.point(&center);
        truth.push(PoseStamped {
            t,
            rotation: UnitQuaternion::from_matrix(&state.rot),
            position: center_world,
            velocity: state.point_velocity(&center_world),
        });
    }

    let clean = SensorSequence::new(config.sample_rate, imu, tendons, Some(contacts))?;
    let sequence = add_sensor_noise(&clean, &config.noise, config.seed);
    Ok(SimOutput { sequence, truth })
}

/// Run the scripted-tumble model; sensor data only.
pub fn simulate(config: &SimConfig) -> Result<SensorSequence> {
    Ok(simulate_with_truth(config)?.sequence)
}

/// Add i.i.d. zero-mean Gaussian noise per channel (contact labels are never
/// touched). Draws are ordered channel-by-channel, so a given `(seq, noise,
/// seed)` triple always produces the same output.
pub fn add_sensor_noise(seq: &SensorSequence, noise: &NoiseModel, seed: u64) -> SensorSequence {
    let mut out = seq.clone();
    if noise.accel_std == 0.0 && noise.gyro_std == 0.0 && noise.tendon_std == 0.0 {
        return out;
    }
    let mut rng = SeedTree::new(seed).child("sensor-noise").rng();
    let mut perturb = |row: &mut [f64], std: f64| {
        if std == 0.0 {
            // zero-std channels are skipped entirely, so they stay bitwise
            // identical to the clean signal
            return;
        }
        let dist = Normal::new(0.0, std).expect("validated std");
        for x in row.iter_mut() {
            *x += dist.sample(&mut rng);
        }
    };
    for (ch, row) in out.imu.iter_mut().enumerate() {
        let std = if ch % 6 < 3 { noise.accel_std } else { noise.gyro_std };
        perturb(row, std);
    }
    for row in out.tendon_lengths.iter_mut() {
        perturb(row, noise.tendon_std);
    }
    out
}

// ---- ground-truth pose io -----------------------------------------------------

const POSE_HEADER: &str = "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz";

/// Write the trajectory as CSV (`t,qw,qx,qy,qz,px,py,pz,vx,vy,vz`).
pub fn write_pose_csv(w: &mut impl Write, truth: &[PoseStamped]) -> std::io::Result<()> {
    writeln!(w, "{POSE_HEADER}")?;
    for p in truth {
        let q = p.rotation.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.t,
            q.w,
            q.i,
            q.j,
            q.k,
            p.position.x,
            p.position.y,
            p.position.z,
            p.velocity.x,
            p.velocity.y,
            p.velocity.z
        )?;
    }
    Ok(())
}

/// Read a trajectory written by [`write_pose_csv`].
pub fn read_pose_csv(r: &mut impl BufRead) -> Result<Vec<PoseStamped>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::PoseFormat("empty file".into()))??;
    if header.trim() != POSE_HEADER {
        return Err(SimError::PoseFormat(format!(
            "unexpected header {header:?}"
        )));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SimError::PoseFormat(format!("line {}: {e}", lineno + 2)))?;
        if fields.len() != 11 {
            return Err(SimError::PoseFormat(format!(
                "line {}: expected 11 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        out.push(PoseStamped {
            t: fields[0],
            rotation: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                fields[1], fields[2], fields[3], fields[4],
            )),
            position: Vector3::new(fields[5], fields[6], fields[7]),
            velocity: Vector3::new(fields[8], fields[9], fields[10]),
        });
    }
    Ok(out)
}

/// Total travelled distance of the reference point.
pub fn path_length(truth: &[PoseStamped]) -> f64 {
    truth
        .windows(2)
        .map(|w| (w[1].position - w[0].position).norm())
        .sum()
}

/// Final position error as a percentage of the path length.
pub fn drift_percent(truth: &[PoseStamped], final_estimate: &Vector3<f64>) -> f64 {
    let err = (truth.last().expect("nonempty trajectory").position - final_estimate).norm();
    100.0 * err / path_length(truth).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn quiet(primitive: Primitive, duration: f64) -> SimConfig {
        SimConfig {
            primitive,
            duration,
            noise: NoiseModel::zero(),
            ..SimConfig::default()
        }
    }

    /// Cumulative signed heading change of the ground track. Positions are
    /// sampled every other step period so the left-right zig-zag of a rolling
    /// gait averages out, then consecutive displacement segments contribute
    /// atan2(cross, dot). Unlike comparing endpoint directions, this cannot
    /// alias when a turning path wraps a full circle.
    fn total_turn(truth: &[PoseStamped], sample_rate: f64) -> f64 {
        let stride = (2.0 * (PIVOT_DURATION + DWELL_DURATION) * sample_rate).round() as usize;
        let pts: Vec<Vector3<f64>> = truth.iter().step_by(stride).map(|p| p.position).collect();
        let segs: Vec<Vector3<f64>> = pts
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| d.xy().norm() > 1e-6)
            .collect();
        segs.windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y)
            })
            .sum()
    }

    #[test]
    fn rest_statics_are_exact() {
        // duration shorter than the initial dwell: the body never moves
        let out = simulate_with_truth(&quiet(Primitive::F, 0.3)).unwrap();
        let seq = &out.sequence;
        let contacts = seq.contacts.as_ref().unwrap();
        assert!(!out.truth.is_empty());
        for c in contacts {
            assert_eq!(c.0, [0, 0, 0, 1, 1, 1], "rest support is the bottom triangle");
        }
        for (ch, row) in seq.imu.iter().enumerate() {
            if ch % 6 >= 3 {
                assert!(row.iter().all(|&x| x == 0.0), "gyro channel {ch} at rest");
            }
        }
        for k in 0..out.truth.len() {
            for r in 0..NUM_RODS {
                let f = Vector3::new(seq.imu[r * 6][k], seq.imu[r * 6 + 1][k], seq.imu[r * 6 + 2][k]);
                assert!(
                    (f.norm() - GRAVITY).abs() < 1e-12,
                    "specific force at rest must be exactly gravity, got {}",
                    f.norm()
                );
            }
            let p = &out.truth[k];
            assert_eq!(p.velocity, Vector3::zeros());
            assert!((p.position - Vector3::new(0.0, 0.0, 0.2)).norm() < 1e-12);
            assert!((p.rotation.angle()).abs() < 1e-12);
        }
    }

    #[test]
    fn tip_angle_is_the_first_ground_crossing() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..200 {
            let pivot = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            );
            let az: f64 = rng.random_range(0.0..2.0 * PI);
            let axis = Vector3::new(az.cos(), az.sin(), 0.0);
            let point = pivot
                + Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.05..0.5),
                );
            let Some(theta) = tip_angle_to_ground(&point, &pivot, &axis) else {
                continue;
            };
            checked += 1;
            let height = |phi: f64| {
                let q = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), phi);
                (pivot + q * (point - pivot)).z
            };
            assert!(
                height(theta).abs() < 1e-9,
                "point must land on the ground at the tip angle"
            );
            // no earlier crossing: the height stays non-negative on (0, theta)
            for step in 1..200 {
                let phi = theta * step as f64 / 200.0;
                assert!(height(phi) > -1e-9, "premature ground crossing at {phi}");
            }
        }
        assert!(checked > 150, "generator produced too few valid cases");
    }

    #[test]
    fn one_tumble_passes_through_a_two_contact_phase() {
        // one pivot fits: initial dwell 0.4 s + pivot 0.8 s + trailing rest,
        // ending before the next step begins at 1.6 s
        let cfg = SimConfig {
            sample_rate: 200.0,
            ..quiet(Primitive::F, 1.55)
        };
        let out = simulate_with_truth(&cfg).unwrap();
        let contacts = out.sequence.contacts.as_ref().unwrap();
        let counts: Vec<usize> = contacts.iter().map(|c| c.count()).collect();
        assert_eq!(counts[0], 3);
        assert_eq!(*counts.last().unwrap(), 3);
        assert_eq!(*counts.iter().min().unwrap(), 2, "pivot phase rolls on an edge");
        let transitions = counts.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(transitions, 2, "exactly one dip: 3 -> 2 -> 3, got {counts:?}");
        // after one tip-over the support is two old bottom endcaps plus one
        // endcap from the top triangle
        let last = contacts.last().unwrap();
        let bottom = (3..6).filter(|&e| last.is_set(e)).count();
        let top = (0..3).filter(|&e| last.is_set(e)).count();
        assert_eq!((bottom, top), (2, 1), "support after a tumble: {:?}", last.0);
    }

    #[test]
    fn contact_counts_and_tendon_band_hold_for_all_primitives() {
        let topo = build_canonical_topology();
        for p in Primitive::ALL {
            let out = simulate_with_truth(&quiet(p, 30.0)).unwrap();
            let seq = &out.sequence;
            for c in seq.contacts.as_ref().unwrap() {
                assert!(
                    (2..=3).contains(&c.count()),
                    "{p}: contact count {} outside rolling range",
                    c.count()
                );
            }
            for (ti, row) in seq.tendon_lengths.iter().enumerate() {
                let nominal = topo.tendon_rest_length(ti);
                for &l in row {
                    assert!(
                        l > 0.5 * nominal && l < 1.5 * nominal,
                        "{p}: tendon {ti} length {l} left the plausible band around {nominal}"
                    );
                }
            }
        }
    }

    #[test]
    fn straight_gaits_travel_along_their_axis() {
        for (p, sign) in [(Primitive::F, 1.0), (Primitive::B, -1.0)] {
            let out = simulate_with_truth(&quiet(p, 30.0)).unwrap();
            let end = out.truth.last().unwrap().position;
            assert!(
                sign * end.x > 3.0,
                "{p}: expected several meters of travel along {:+}x, got {end:?}",
                sign
            );
            assert!(
                end.y.abs() < 0.5,
                "{p}: straight gait drifted sideways to y = {}",
                end.y
            );
        }
    }

    #[test]
    fn turning_gaits_curve_with_the_commanded_sign() {
        for p in Primitive::ALL {
            let cfg = quiet(p, 30.0);
            let out = simulate_with_truth(&cfg).unwrap();
            let turn = total_turn(&out.truth, cfg.sample_rate);
            match p {
                Primitive::F | Primitive::B => assert!(
                    turn.abs() < 1.6,
                    "{p}: straight gait accumulated {turn} rad of heading"
                ),
                Primitive::FL | Primitive::BL => {
                    assert!(turn > 2.0, "{p}: left turn must be counterclockwise, got {turn}")
                }
                Primitive::FR | Primitive::BR => {
                    assert!(turn < -2.0, "{p}: right turn must be clockwise, got {turn}")
                }
            }
        }
    }

    #[test]
    fn smaller_turning_ratio_turns_harder() {
        let measure = |ratio: f64| {
            let cfg = SimConfig {
                turning_ratio: ratio,
                ..quiet(Primitive::FR, 30.0)
            };
            let out = simulate_with_truth(&cfg).unwrap();
            total_turn(&out.truth, cfg.sample_rate)
        };
        let nominal = measure(1.0);
        let tight = measure(0.4);
        assert!(
            tight < nominal - 0.5,
            "ratio 0.4 should turn clockwise harder than 1.0: {tight} vs {nominal}"
        );
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let cfg = SimConfig {
            duration: 5.0,
            seed: 77,
            ..SimConfig::default()
        };
        let a = simulate_with_truth(&cfg).unwrap();
        let b = simulate_with_truth(&cfg).unwrap();
        assert_eq!(a.sequence.imu, b.sequence.imu);
        assert_eq!(a.sequence.tendon_lengths, b.sequence.tendon_lengths);
        assert_eq!(a.sequence.contacts, b.sequence.contacts);
        assert_eq!(a.truth, b.truth);

        let c = simulate(&SimConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.sequence.imu, c.imu, "a different seed must draw different noise");
    }

    #[test]
    fn zero_noise_is_the_identity() {
        let out = simulate(&quiet(Primitive::FL, 3.0)).unwrap();
        let same = add_sensor_noise(&out, &NoiseModel::zero(), 123);
        assert_eq!(out.imu, same.imu);
        assert_eq!(out.tendon_lengths, same.tendon_lengths);

        // partially disabled noise leaves the zero-std channels bitwise intact
        let partial = NoiseModel {
            accel_std: 0.1,
            gyro_std: 0.0,
            tendon_std: 0.0,
        };
        let noisy = add_sensor_noise(&out, &partial, 123);
        for ch in 0..IMU_CHANNELS {
            if ch % 6 < 3 {
                assert_ne!(out.imu[ch], noisy.imu[ch], "accel channel {ch} must change");
            } else {
                assert_eq!(out.imu[ch], noisy.imu[ch], "gyro channel {ch} must not change");
            }
        }
        assert_eq!(out.tendon_lengths, noisy.tendon_lengths);
    }

    #[test]
    fn noise_statistics_match_the_request() {
        let n = 10_000;
        let seq = SensorSequence::new(
            100.0,
            vec![vec![0.0; n]; IMU_CHANNELS],
            vec![vec![0.0; n]; NUM_TENDONS],
            None,
        )
        .unwrap();
        let noise = NoiseModel {
            accel_std: 0.1,
            gyro_std: 0.02,
            tendon_std: 0.004,
        };
        let noisy = add_sensor_noise(&seq, &noise, 9);
        let check = |row: &[f64], target: f64, what: &str| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64;
            let std = var.sqrt();
            assert!(
                (std / target - 1.0).abs() < 0.05,
                "{what}: empirical std {std} vs requested {target}"
            );
            assert!(
                mean.abs() < 5.0 * target / (row.len() as f64).sqrt(),
                "{what}: mean {mean} too far from zero"
            );
        };
        for (ch, row) in noisy.imu.iter().enumerate() {
            let target = if ch % 6 < 3 { noise.accel_std } else { noise.gyro_std };
            check(row, target, &format!("imu channel {ch}"));
        }
        for (ti, row) in noisy.tendon_lengths.iter().enumerate() {
            check(row, noise.tendon_std, &format!("tendon {ti}"));
        }
    }

    #[test]
    fn noise_never_touches_contacts_or_truth() {
        let loud = SimConfig {
            noise: NoiseModel {
                accel_std: 5.0,
                gyro_std: 2.0,
                tendon_std: 0.5,
            },
            ..quiet(Primitive::BR, 4.0)
        };
        let clean = simulate_with_truth(&quiet(Primitive::BR, 4.0)).unwrap();
        let noisy = simulate_with_truth(&loud).unwrap();
        assert_eq!(clean.sequence.contacts, noisy.sequence.contacts);
        assert_eq!(clean.truth, noisy.truth);
        assert_ne!(clean.sequence.imu, noisy.sequence.imu);
    }

    #[test]
    fn primitives_produce_distinct_tendon_patterns() {
        let runs: Vec<SensorSequence> = Primitive::ALL
            .iter()
            .map(|&p| simulate(&quiet(p, 2.0)).unwrap())
            .collect();
        for a in 0..runs.len() {
            for b in (a + 1)..runs.len() {
                let max_gap = runs[a].tendon_lengths[0]
                    .iter()
                    .zip(&runs[b].tendon_lengths[0])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(
                    max_gap > 1e-3,
                    "{} and {} have indistinguishable tendon commands",
                    Primitive::ALL[a],
                    Primitive::ALL[b]
                );
            }
        }
    }

    #[test]
    fn turning_ratio_skews_side_cable_amplitudes() {
        let topo = build_canonical_topology();
        let side_swing = |p: Primitive| {
            let cfg = SimConfig {
                turning_ratio: 0.3,
                ..quiet(p, 2.4)
            };
            let seq = simulate(&cfg).unwrap();
            (6..NUM_TENDONS)
                .map(|ti| {
                    let nominal = topo.tendon_rest_length(ti);
                    seq.tendon_lengths[ti]
                        .iter()
                        .map(|l| (l / nominal - 1.0).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let left = side_swing(Primitive::FL);
        let right = side_swing(Primitive::FR);
        let straight = side_swing(Primitive::F);
        assert!(
            left > straight + 0.02 && straight > right + 0.02,
            "side-cable swing must grow on one side and shrink on the other: \
             left {left}, straight {straight}, right {right}"
        );
    }

    #[test]
    fn truth_kinematics_are_self_consistent() {
        let topo = build_canonical_topology();
        let cfg = quiet(Primitive::F, 2.0);
        let schedule = build_schedule(&topo, &cfg);
        let center = topo.center();
        let h = 1e-5;
        // probe the middle of the first pivot and a point near its end
        for t in [0.8, 1.1] {
            let state = schedule.state_at(t);
            let p = state.point(&center);
            let before = schedule.state_at(t - h);
            let after = schedule.state_at(t + h);
            let v_numeric = (after.point(&center) - before.point(&center)) / (2.0 * h);
            let v = state.point_velocity(&p);
            assert!(
                (v - v_numeric).norm() < 1e-6,
                "velocity vs numeric derivative at t={t}: {v:?} vs {v_numeric:?}"
            );
            let v_before = before.point_velocity(&before.point(&center));
            let v_after = after.point_velocity(&after.point(&center));
            let a_numeric = (v_after - v_before) / (2.0 * h);
            let a = state.point_acceleration(&p);
            assert!(
                (a - a_numeric).norm() < 1e-5,
                "acceleration vs numeric derivative at t={t}: {a:?} vs {a_numeric:?}"
            );
        }

        // the recorded trajectory agrees with a coarse finite difference too
        let out = simulate_with_truth(&SimConfig { sample_rate: 200.0, ..cfg }).unwrap();
        let k = 160; // t = 0.8, mid-pivot
        let numeric = (out.truth[k + 1].position - out.truth[k - 1].position) * 200.0 / 2.0;
        assert!((out.truth[k].velocity - numeric).norm() < 5e-4);
    }

    #[test]
    fn sampling_rate_does_not_change_the_trajectory() {
        let coarse = simulate_with_truth(&quiet(Primitive::FL, 1.7)).unwrap();
        let fine = simulate_with_truth(&SimConfig {
            sample_rate: 200.0,
            ..quiet(Primitive::FL, 1.7)
        })
        .unwrap();
        // samples at even indices of the fine run share timestamps with the
        // coarse run and must carry bitwise identical states
        for (k, p) in coarse.truth.iter().enumerate() {
            let q = &fine.truth[2 * k];
            assert_eq!(p.t, q.t);
            assert_eq!(p.position, q.position);
            assert_eq!(p.velocity, q.velocity);
            assert_eq!(p.rotation, q.rotation);
        }
    }

    #[test]
    fn pose_csv_round_trips() {
        let out = simulate_with_truth(&quiet(Primitive::BL, 1.7)).unwrap();
        let mut buf = Vec::new();
        write_pose_csv(&mut buf, &out.truth).unwrap();
        let back = read_pose_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), out.truth.len());
        for (a, b) in out.truth.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
            // reading re-normalizes the quaternion, which may shave an ulp
            let gap = (a.rotation.quaternion().coords - b.rotation.quaternion().coords).norm();
            assert!(gap < 1e-14, "quaternion changed by {gap}");
        }
    }

    #[test]
    fn pose_csv_rejects_malformed_input() {
        let read = |text: &str| read_pose_csv(&mut text.as_bytes());
        assert!(matches!(read(""), Err(SimError::PoseFormat(_))));
        assert!(matches!(read("time,stuff\n1,2\n"), Err(SimError::PoseFormat(_))));
        let header = "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz\n";
        assert!(matches!(
            read(&format!("{header}1,2,3\n")),
            Err(SimError::PoseFormat(_))
        ));
        assert!(matches!(
            read(&format!("{header}1,2,3,4,5,6,7,8,9,10,oops\n")),
            Err(SimError::PoseFormat(_))
        ));
        assert_eq!(read(header).unwrap(), vec![]);
    }

    #[test]
    fn path_metrics_match_hand_values() {
        let pose = |t: f64, p: Vector3<f64>| PoseStamped {
            t,
            rotation: UnitQuaternion::identity(),
            position: p,
            velocity: Vector3::zeros(),
        };
        let truth = vec![
            pose(0.0, Vector3::zeros()),
            pose(1.0, Vector3::new(3.0, 4.0, 0.0)),
        ];
        assert!((path_length(&truth) - 5.0).abs() < 1e-15);
        let estimate = Vector3::new(3.0, 4.0, 0.05);
        assert!((drift_percent(&truth, &estimate) - 1.0).abs() < 1e-12);
        let exact = Vector3::new(3.0, 4.0, 0.0);
        assert_eq!(drift_percent(&truth, &exact), 0.0);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = SimConfig::default();
        assert!(ok.validate().is_ok());
        let cases: Vec<SimConfig> = vec![
            SimConfig { turning_ratio: 0.0, ..ok.clone() },
            SimConfig { turning_ratio: 1.5, ..ok.clone() },
            SimConfig { duration: 0.0, ..ok.clone() },
            SimConfig { duration: f64::NAN, ..ok.clone() },
            SimConfig { sample_rate: -1.0, ..ok.clone() },
            SimConfig {
                noise: NoiseModel { accel_std: -0.1, ..NoiseModel::default() },
                ..ok.clone()
            },
            SimConfig { contact_height_tolerance: 0.0, ..ok.clone() },
        ];
        for bad in cases {
            assert!(
                matches!(bad.validate(), Err(SimError::ConfigInvalid(_))),
                "accepted invalid config {bad:?}"
            );
        }
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(p.as_str().parse::<Primitive>().unwrap(), p);
            assert_eq!(p.as_str().to_lowercase().parse::<Primitive>().unwrap(), p);
            assert_eq!(format!("{p}"), p.as_str());
        }
        assert!("sideways".parse::<Primitive>().is_err());
    }
}
