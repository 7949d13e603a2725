//! Simulation, reconstruction and calibration toolkit for photon-subtracted
//! squeezed states of light.
//!
//! The analytic pieces ([`model`], [`spectrum`], the Fock kernels in
//! [`fock`]) are generic over [`Real`] and work in `f32` or `f64`; the
//! numerical pipeline (mode solving, sampling, tomography, fitting) runs in
//! `f64`. Aliases for the common `f64` instantiations live at the crate root.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod eigen;
pub mod error;
pub mod fock;
pub mod io;
pub mod model;
pub mod modes;
pub mod sampler;
pub mod scalar;
pub mod spectrum;
pub mod tomography;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type CavityParams = model::CavityParams<f64>;
pub type DetectorModel = model::DetectorModel<f64>;
pub type LossModel = model::LossModel<f64>;
pub type PumpRatio = model::PumpRatio<f64>;
pub type GaussianComponent = model::GaussianComponent<f64>;
pub type ModelConfig = model::ModelConfig<f64>;
pub type ConditionalState = model::ConditionalState<f64>;
pub type FilterChain = spectrum::FilterChain<f64>;

/// Tool version embedded in every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
