//! Wideband terahertz near-field massive-MIMO channel estimation.
//!
//! The crate covers the whole estimation pipeline:
//!
//! - [`channel`]: spherical-wavefront multipath channels over `K` subcarriers.
//! - [`dictionary`]: frequency-dependent polar-domain dictionaries and the
//!   far-field angular baseline.
//! - [`measurement`]: one-bit phase-shifter pilots and noisy observations.
//! - [`estimators`]: SOMP, MSBL and AMP-SBL for the multiple-measurement-vector
//!   problem, plus NMSE scoring.
//! - [`unfolded`]: the unfolded AMP-SBL network whose M-step is a small
//!   convolutional network with configuration attention.
//! - [`training`]: exact reverse-mode gradients through the unfolded network,
//!   Adam, layer-wise growth and weighted mixed training.

pub mod channel;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod measurement;
pub mod rng;
pub mod training;
pub mod unfolded;

pub use config::{SystemConfig, SPEED_OF_LIGHT};
pub use error::{Error, Result};

pub use num_complex::Complex64;

/// Column-major complex matrix used throughout the crate.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
