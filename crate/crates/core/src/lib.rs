//! Critical-precision analysis for Gaussian-mixture probes.
//!
//! The numerical core ([`mathcore`], [`gmm_probe`], [`hessian`], [`sde`]) is
//! generic over the scalar type (`f32` or `f64`); the experiment harnesses
//! ([`escape_lab`], [`experiments`], [`taxonomy`]) run in `f64`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod escape_lab;
pub mod experiments;
pub mod gmm_probe;
pub mod hessian;
pub mod mathcore;
pub mod scalar;
pub mod sde;
pub mod taxonomy;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

/// `f64` dense matrix.
pub type Matrix = mathcore::DenseMatrix<f64>;
/// `f32` dense matrix.
pub type Matrix32 = mathcore::DenseMatrix<f32>;
/// `f64` eigendecomposition.
pub type Spectrum = mathcore::SpectrumResult<f64>;
/// `f64` escape-model fit.
pub type EscapeFit = mathcore::FitReport<f64>;
/// `f64` probe state.
pub type ProbeState = gmm_probe::GmmProbeState<f64>;
/// `f32` probe state.
pub type ProbeState32 = gmm_probe::GmmProbeState<f32>;
/// `f64` simulation output.
pub type SdeRun = sde::SdeRunResult<f64>;
