//! Coordinated emergency frequency control (CEFC).
//!
//! The crate is organised around the control pipeline:
//!
//! - [`gridsim`]: nonlinear center-of-inertia frequency simulator used as the
//!   ground-truth plant (governors, motor loads, rate-limited HVDC links).
//! - [`koopman`]: lifted observables with time-delay embedding, least-squares
//!   identification of the lifted linear model and rollout prediction.
//! - [`controller`]: activation, max-DC prediction, one-shot load shedding
//!   (condensed QP + feeder quantization) and LQR modulation of DC references.
//! - [`robustness`]: switched-mode representation of feeder shedding, costate
//!   recursion, Hamiltonian mode values and the mode-selection agreement check.
//! - [`bench`]: desk-scale experiments (prediction table, coordinated subcases,
//!   closed-loop vs constant-max DC support).
//! - [`config`]: the single JSON run configuration shared by the CLI and bindings.

pub mod bench;
pub mod config;
pub mod controller;
mod error;
pub mod gridsim;
pub mod koopman;
pub mod linalg;
pub mod robustness;
pub mod units;

pub use error::{Error, Result};
