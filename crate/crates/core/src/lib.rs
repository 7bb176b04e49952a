//! Proprioceptive contact estimation and state estimation for 3-bar
//! tensegrity robots.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`geometry`] — canonical 3-bar prism topology and its order-6 symmetry
//!   group (rotations about the long axis plus end-over-end flips), derived
//!   geometrically as coordinated index permutations.
//! * [`graphdata`] — sensor sequences, sliding-window samples, per-window
//!   normalization, the group action on samples, heterogeneous graph
//!   assembly, and the dataset CSV format.
//! * [`autodiff`] — a minimal reverse-mode engine over dense `f64` tensors
//!   (just enough ops for the model, each with a finite-difference oracle).
//! * [`hgnn`] — the typed message-passing network over the robot graph and
//!   its symmetry-averaged forward pass.
//! * [`training`] — Adam training loop, evaluation metrics, checkpoints.
//! * [`simkit`] — scripted quasi-static tumbling simulator producing IMU,
//!   tendon-length, contact, and ground-truth pose streams.
//! * [`inekf`] — contact-aided right-invariant EKF over the fused body IMU.
//!
//! Parallelism: data-parallel inner loops (matmul row blocks, batch
//! assembly, evaluation) dispatch through rayon when the default `parallel`
//! feature is enabled, with a sequential fallback otherwise. Both paths are
//! bitwise deterministic; see `benches/parallel.rs` for the comparison.

pub mod autodiff;
pub mod geometry;
pub mod graphdata;
pub mod hgnn;
pub mod inekf;
pub mod kernels;
pub mod simkit;
pub mod training;
pub mod util;
