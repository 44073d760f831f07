//! Cogradient descent for bilinear models.
//!
//! [`coupling`] holds the problem-independent mechanism: an asynchrony
//! gate, a kernelized coupling coefficient, and the projection that
//! backtracks the sparse factor. The remaining modules apply it to
//! bilinear least squares and the Beale benchmark ([`bilinear`]),
//! convolutional sparse coding ([`csc`]), and a small masked network
//! ([`deep`]).

pub mod bilinear;
pub mod coupling;
pub mod csc;
pub mod deep;
pub mod error;
pub mod metrics;
pub mod optim;

pub use error::{Error, Result};
