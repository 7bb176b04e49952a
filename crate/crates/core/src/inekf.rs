//! Contact-aided invariant extended Kalman filter.
//!
//! Estimates the global pose of the rolling body from an IMU stream plus
//! per-timestep ground-contact flags. The state lives on the matrix Lie
//! group SE_{2+m}(3): rotation, velocity, position, and one world-frame
//! landmark per currently active contact. Errors are right-invariant
//! (world-frame), which makes the propagation Jacobian independent of the
//! state estimate, and contact corrections use the zero-velocity assumption
//! of a stationary ground contact: the tracked landmark must coincide with
//! the body-frame endcap pushed through the current pose.
//!
//! The three rod IMUs are fused into one virtual body IMU by rotating each
//! measurement into the body frame and averaging. Because the rod midpoints
//! average to the tracked reference point and rigid-body point acceleration
//! is affine in the point, the averaged specific force is exactly the
//! specific force at the reference point.
//!
//! IMU biases are not estimated; a bias-augmented state is a natural
//! extension point. Endcap positions use the nominal rigid geometry, so
//! compliance-induced offsets surface as drift rather than being modeled.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use crate::geometry::{build_canonical_topology, rod_frames, NUM_ENDCAPS, NUM_RODS};
use crate::graphdata::{ContactVector, SensorSequence};
use crate::simkit::{PoseStamped, GRAVITY};

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("contact stream length {found} does not match sequence length {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cannot run the estimator on an empty sequence")]
    EmptySequence,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

type Result<T> = std::result::Result<T, EstimatorError>;

/// Noise parameters and initial uncertainties. Tuned on the synthetic
/// pipeline; none are published for the real system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    /// Gyro white-noise density (rad/s per sample-interval scale).
    pub gyro_noise_std: f64,
    /// Accelerometer white-noise density (m/s²).
    pub accel_noise_std: f64,
    /// Contact-slip process noise (m/√s): how fast a "stationary" contact
    /// point is allowed to wander.
    pub contact_slip_std: f64,
    /// Contact-position measurement noise (m).
    pub measurement_noise_std: f64,
    /// Std of a freshly added contact point (m); effectively uninformative.
    pub new_contact_std: f64,
    pub initial_rotation_std: f64,
    pub initial_velocity_std: f64,
    pub initial_position_std: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            gyro_noise_std: 1e-4,
            accel_noise_std: 1e-2,
            contact_slip_std: 1e-3,
            measurement_noise_std: 1e-3,
            new_contact_std: 1.0,
            initial_rotation_std: 1e-2,
            initial_velocity_std: 1e-2,
            initial_position_std: 1e-2,
        }
    }
}

/// One fused body-frame IMU reading covering a `dt` propagation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Specific force (m/s²): body-frame acceleration minus gravity.
    pub accel: Vector3<f64>,
    /// Angular velocity (rad/s), body frame.
    pub gyro: Vector3<f64>,
    /// Interval length (s), > 0.
    pub dt: f64,
}

/// Filter state: pose, velocity, active contact landmarks, and the
/// right-invariant error covariance over all of them.
///
/// Contact points are kept in insertion order; the covariance blocks after
/// the leading 9×9 follow that order exactly, so the layout is a pure
/// function of the contact stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    rotation: Matrix3<f64>,
    velocity: Vector3<f64>,
    position: Vector3<f64>,
    /// (endcap index, world-frame contact point), insertion-ordered.
    contacts: Vec<(usize, Vector3<f64>)>,
    covariance: DMatrix<f64>,
}

impl EstimatorState {
    /// Fresh state at a known pose with the configured initial uncertainty
    /// and no active contacts.
    pub fn new(
        rotation: Matrix3<f64>,
        velocity: Vector3<f64>,
        position: Vector3<f64>,
        config: &FilterConfig,
    ) -> Self {
        let mut covariance = DMatrix::zeros(9, 9);
        for i in 0..3 {
            covariance[(i, i)] = config.initial_rotation_std.powi(2);
            covariance[(3 + i, 3 + i)] = config.initial_velocity_std.powi(2);
            covariance[(6 + i, 6 + i)] = config.initial_position_std.powi(2);
        }
        EstimatorState {
            rotation,
            velocity,
            position,
            contacts: Vec::new(),
            covariance,
        }
    }

    /// State at the canonical rest pose (identity attitude, zero velocity,
    /// reference point at the endcap centroid).
    pub fn at_canonical_rest(config: &FilterConfig) -> Self {
        let topo = build_canonical_topology();
        EstimatorState::new(Matrix3::identity(), Vector3::zeros(), topo.center(), config)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.velocity
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    /// Active (endcap, world contact point) pairs in covariance order.
    pub fn contact_points(&self) -> &[(usize, Vector3<f64>)] {
        &self.contacts
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Error-state dimension: 9 + 3 per active contact.
    pub fn dim(&self) -> usize {
        9 + 3 * self.contacts.len()
    }

    /// Group adjoint of the state, mapping body-frame perturbations to
    /// world-frame (right-invariant) ones.
    fn adjoint(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut ad = DMatrix::zeros(n, n);
        let r = &self.rotation;
        let blocks: Vec<(usize, Vector3<f64>)> = std::iter::empty()
            .chain([(3, self.velocity), (6, self.position)])
            .chain(
                self.contacts
                    .iter()
                    .enumerate()
                    .map(|(s, (_, d))| (9 + 3 * s, *d)),
            )
            .collect();
        ad.view_mut((0, 0), (3, 3)).copy_from(r);
        for (row, u) in blocks {
            ad.view_mut((row, row), (3, 3)).copy_from(r);
            ad.view_mut((row, 0), (3, 3)).copy_from(&(skew(&u) * r));
        }
        ad
    }

    /// Left-multiply the state by the group exponential of a world-frame
    /// correction, then re-orthonormalize the rotation.
    fn apply_correction(&mut self, delta: &DVector<f64>) {
        debug_assert_eq!(delta.len(), self.dim());
        let xi: Vector3<f64> = delta.fixed_rows::<3>(0).into();
        let g0 = so3_exp(&xi);
        let jl = so3_left_jacobian(&xi);
        self.rotation = orthonormalized(&(g0 * self.rotation));
        self.velocity = g0 * self.velocity + jl * Vector3::from(delta.fixed_rows::<3>(3));
        self.position = g0 * self.position + jl * Vector3::from(delta.fixed_rows::<3>(6));
        for (slot, (_, d)) in self.contacts.iter_mut().enumerate() {
            *d = g0 * *d + jl * Vector3::from(delta.fixed_rows::<3>(9 + 3 * slot));
        }
    }

    fn slot_of(&self, endcap: usize) -> Option<usize> {
        self.contacts.iter().position(|(e, _)| *e == endcap)
    }

    /// Start tracking a landmark for `endcap` at its predicted world
    /// position. The new error block is the position error plus isotropic
    /// placement noise, so its covariance copies the position rows/columns
    /// with an inflated diagonal.
    fn add_contact(&mut self, endcap: usize, body_point: &Vector3<f64>, config: &FilterConfig) {
        debug_assert!(self.slot_of(endcap).is_none());
        let world = self.position + self.rotation * body_point;
        let n = self.dim();
        let mut grown = DMatrix::zeros(n + 3, n + 3);
        grown.view_mut((0, 0), (n, n)).copy_from(&self.covariance);
        let p_rows = self.covariance.view((6, 0), (3, n)).into_owned();
        let p_cols = self.covariance.view((0, 6), (n, 3)).into_owned();
        let p_block = self.covariance.view((6, 6), (3, 3)).into_owned();
        grown.view_mut((n, 0), (3, n)).copy_from(&p_rows);
        grown.view_mut((0, n), (n, 3)).copy_from(&p_cols);
        grown
            .view_mut((n, n), (3, 3))
            .copy_from(&(p_block + Matrix3::identity() * config.new_contact_std.powi(2)));
        self.covariance = grown;
        self.contacts.push((endcap, world));
    }

    /// Stop tracking `endcap`, dropping its covariance rows and columns.
    fn remove_contact(&mut self, endcap: usize) {
        let Some(slot) = self.slot_of(endcap) else {
            return;
        };
        let n = self.dim();
        let cut = 9 + 3 * slot;
        let keep: Vec<usize> = (0..n).filter(|i| !(cut..cut + 3).contains(i)).collect();
        let mut shrunk = DMatrix::zeros(n - 3, n - 3);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                shrunk[(a, b)] = self.covariance[(i, j)];
            }
        }
        self.covariance = shrunk;
        self.contacts.remove(slot);
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::from_scaled_axis(*w).matrix()
}

/// Left Jacobian of SO(3): the translational part of the SE_k(3)
/// exponential. Series expansion below the float noise floor of the closed
/// form.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let wx = skew(w);
    if theta2 < 1e-14 {
        Matrix3::identity() + wx * 0.5 + wx * wx / 6.0
    } else {
        let theta = theta2.sqrt();
        let a = (1.0 - theta.cos()) / theta2;
        let b = (theta - theta.sin()) / (theta2 * theta);
        Matrix3::identity() + wx * a + wx * wx * b
    }
}

fn orthonormalized(m: &Matrix3<f64>) -> Matrix3<f64> {
    *Rotation3::from_matrix(m).matrix()
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn check_finite(v: &Vector3<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EstimatorError::NonFiniteInput(format!("{what}: {v:?}")))
    }
}

/// Strapdown propagation through one IMU interval.
///
/// Mean: `R ← R·Exp(ω dt)`, `v ← v + (R·a + g) dt`,
/// `p ← p + v dt + ½ (R·a + g) dt²`; contact points stay put. Covariance:
/// the right-invariant transition matrix is exact at second order (the
/// error dynamics are nilpotent), and body-frame process noise is mapped
/// through the group adjoint.
pub fn propagate(
    state: &EstimatorState,
    imu: &ImuSample,
    config: &FilterConfig,
) -> Result<EstimatorState> {
    check_finite(&imu.accel, "accel")?;
    check_finite(&imu.gyro, "gyro")?;
    if !(imu.dt > 0.0 && imu.dt.is_finite()) {
        return Err(EstimatorError::NonFiniteInput(format!("dt: {}", imu.dt)));
    }
    let dt = imu.dt;
    let g = Vector3::new(0.0, 0.0, -GRAVITY);

    let mut next = state.clone();
    let accel_world = state.rotation * imu.accel + g;
    next.rotation = orthonormalized(&(state.rotation * so3_exp(&(imu.gyro * dt))));
    next.velocity = state.velocity + accel_world * dt;
    next.position = state.position + state.velocity * dt + accel_world * (0.5 * dt * dt);

    let n = state.dim();
    let gx = skew(&g);
    let mut phi = DMatrix::identity(n, n);
    phi.view_mut((3, 0), (3, 3)).copy_from(&(gx * dt));
    phi.view_mut((6, 0), (3, 3)).copy_from(&(gx * (0.5 * dt * dt)));
    phi.view_mut((6, 3), (3, 3))
        .copy_from(&(Matrix3::identity() * dt));

    let mut qc = DMatrix::zeros(n, n);
    for i in 0..3 {
        qc[(i, i)] = config.gyro_noise_std.powi(2);
        qc[(3 + i, 3 + i)] = config.accel_noise_std.powi(2);
        for slot in 0..state.contacts.len() {
            let k = 9 + 3 * slot + i;
            qc[(k, k)] = config.contact_slip_std.powi(2);
        }
    }
    let ad = state.adjoint();
    let spread = &phi * &ad;
    let q_d = &spread * qc * spread.transpose() * dt;
    next.covariance = symmetrized(&phi * &state.covariance * phi.transpose() + q_d);
    Ok(next)
}

/// Contact bookkeeping plus the kalman correction from persisting contacts.
///
/// Departed endcaps are dropped, persisting ones contribute the stacked
/// measurement "tracked landmark minus predicted endcap position = 0"
/// (world-frame innovation, Joseph-form covariance update), and newly
/// touching endcaps are added afterwards at their predicted positions so
/// they never influence the correction that creates them.
///
/// `body_endcaps` are the endcap positions in the body frame, relative to
/// the tracked reference point. An infinite measurement noise skips the
/// correction entirely (it would be a no-op in exact arithmetic).
pub fn contact_update(
    state: &EstimatorState,
    contacts: &ContactVector,
    body_endcaps: &[Vector3<f64>; NUM_ENDCAPS],
    config: &FilterConfig,
) -> Result<EstimatorState> {
    let mut st = state.clone();

    let departed: Vec<usize> = st
        .contacts
        .iter()
        .map(|(e, _)| *e)
        .filter(|&e| !contacts.is_set(e))
        .collect();
    for e in departed {
        st.remove_contact(e);
    }

    let persisting: Vec<usize> = st.contacts.iter().map(|(e, _)| *e).collect();
    if !persisting.is_empty() && config.measurement_noise_std.is_finite() {
        let n = st.dim();
        let rows = 3 * persisting.len();
        let mut h = DMatrix::zeros(rows, n);
        let mut innovation = DVector::zeros(rows);
        for (row, &e) in persisting.iter().enumerate() {
            let slot = st.slot_of(e).expect("persisting contact is tracked");
            let (_, landmark) = st.contacts[slot];
            h.view_mut((3 * row, 6), (3, 3))
                .copy_from(&(-Matrix3::identity()));
            h.view_mut((3 * row, 9 + 3 * slot), (3, 3))
                .copy_from(&Matrix3::identity());
            let r = landmark - st.position - st.rotation * body_endcaps[e];
            if !r.iter().all(|x| x.is_finite()) {
                return Err(EstimatorError::NonFiniteInput(format!(
                    "innovation for endcap {e}: {r:?}"
                )));
            }
            innovation.rows_mut(3 * row, 3).copy_from(&r);
        }
        let noise = DMatrix::identity(rows, rows) * config.measurement_noise_std.powi(2);
        let s = &h * &st.covariance * h.transpose() + &noise;
        let s_inv = s
            .clone()
            .cholesky()
            .ok_or_else(|| EstimatorError::Numerical("innovation covariance not PD".into()))?
            .inverse();
        let gain = &st.covariance * h.transpose() * s_inv;
        let delta = -(&gain * &innovation);
        st.apply_correction(&delta);
        let joseph = DMatrix::identity(n, n) - &gain * &h;
        st.covariance =
            symmetrized(&joseph * &st.covariance * joseph.transpose() + &gain * noise * gain.transpose());
    }

    for e in 0..NUM_ENDCAPS {
        if contacts.is_set(e) && st.slot_of(e).is_none() {
            st.add_contact(e, &body_endcaps[e], config);
        }
    }
    Ok(st)
}

/// Average the three rod IMUs (rotated into the body frame) at sample `k`.
fn fuse_body_imu(
    seq: &SensorSequence,
    frames: &[Matrix3<f64>; NUM_RODS],
    k: usize,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut accel = Vector3::zeros();
    let mut gyro = Vector3::zeros();
    for (r, frame) in frames.iter().enumerate() {
        let a = Vector3::new(seq.imu[r * 6][k], seq.imu[r * 6 + 1][k], seq.imu[r * 6 + 2][k]);
        let w = Vector3::new(
            seq.imu[r * 6 + 3][k],
            seq.imu[r * 6 + 4][k],
            seq.imu[r * 6 + 5][k],
        );
        accel += frame * a;
        gyro += frame * w;
    }
    (accel / NUM_RODS as f64, gyro / NUM_RODS as f64)
}

/// Filter a whole sequence: alternate propagation and contact updates,
/// starting from `initial`, and return one corrected state per sample.
pub fn run_estimator(
    seq: &SensorSequence,
    contacts: &[ContactVector],
    config: &FilterConfig,
    initial: EstimatorState,
) -> Result<Vec<EstimatorState>> {
    if seq.is_empty() {
        return Err(EstimatorError::EmptySequence);
    }
    if contacts.len() != seq.len() {
        return Err(EstimatorError::LengthMismatch {
            expected: seq.len(),
            found: contacts.len(),
        });
    }
    let topo = build_canonical_topology();
    let frames = rod_frames(&topo);
    let center = topo.center();
    let body_endcaps: [Vector3<f64>; NUM_ENDCAPS] =
        std::array::from_fn(|e| topo.endcap_positions[e] - center);
    let dt = 1.0 / seq.sample_rate;

    let mut state = initial;
    let mut out = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        if k > 0 {
            let (accel, gyro) = fuse_body_imu(seq, &frames, k - 1);
            state = propagate(&state, &ImuSample { accel, gyro, dt }, config)?;
        }
        state = contact_update(&state, &contacts[k], &body_endcaps, config)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Final-position error as a percentage of the ground-truth path length.
pub fn final_drift_percent(trajectory: &[EstimatorState], truth: &[PoseStamped]) -> f64 {
    let last = trajectory.last().expect("nonempty trajectory");
    crate::simkit::drift_percent(truth, last.position())
}
