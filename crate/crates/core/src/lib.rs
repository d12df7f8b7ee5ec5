//! Speciation and collapse times of diffusion models trained on
//! Gaussian mixtures supported on nonlinear manifolds.
//!
//! The crate covers the data model ([`model`]), the forward/backward diffusion
//! with the empirical score ([`diffusion`]), the analytic predictions for the
//! two dynamical transitions ([`speciation`], [`collapse`]) and the stochastic
//! experiments that test them ([`experiments`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collapse;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod speciation;
pub mod stats;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, Result};
pub use model::{Activation, Center, Dataset, Ensemble, ManifoldModel, ModelConfig};
