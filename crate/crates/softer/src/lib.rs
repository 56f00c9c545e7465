//! Soft tensor regression: Bayesian linear regression of a scalar outcome on
//! a K-mode tensor predictor.
//!
//! The coefficient tensor is modeled as a sum of D Hadamard products of full
//! tensors whose mode-k slices are shrunk toward slice-level means, softening
//! the classical rank-D decomposition in which each slice is exactly
//! constant. A calibrated hierarchical prior controls how much of the prior
//! variance the softening contributes, and a Gibbs sampler with generalized
//! inverse Gaussian conditionals draws from the posterior. Symmetric and
//! semi-symmetric variants cover network-valued predictors.
//!
//! Module map:
//! - [`tensor`]: dense K-mode tensors and algebraic primitives
//! - [`calibrate`]: prior moments and hyperparameter calibration
//! - [`model`]: dataset, configuration, parameter state, log densities
//! - [`gig`]: generalized inverse Gaussian sampling
//! - [`sampler`]: the Gibbs sweep and chain driver
//! - [`symmetric`]: symmetric and semi-symmetric variants
//! - [`diagnostics`]: posterior summaries, convergence diagnostics, prediction
//! - [`simbench`]: simulation scenarios and benchmark metrics
//! - [`io`]: file formats, manifests, chain persistence
//! - [`cli`]: the `softer` command-line surface

pub mod calibrate;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gig;
pub mod io;
pub mod model;
pub mod sampler;
pub mod simbench;
pub mod symmetric;
pub mod tensor;

pub use error::{Result, SofterError};
