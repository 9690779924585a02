//! Secure ISAC beamforming: two-stage alternating optimization of transmit
//! covariances and SINR thresholds for a multi-user, multi-target
//! dual-function radar-communication base station facing an active and a
//! passive eavesdropper.

pub mod ao;
pub mod constraints;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
