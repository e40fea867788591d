//! Tempered-posterior stochastic-gradient MCMC for small Bayesian neural
//! networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`models`]: fully connected and convolutional networks, likelihoods.
//! - [`priors`]: Gaussian, Laplace, Student-t, Matérn-correlated and flat
//!   weight priors with exact densities, gradients and samplers.
//! - [`posterior`]: the potential `U(w) = -log p(y|w,x) - log p(w)` and its
//!   minibatch gradient.
//! - [`samplers`]: SGD, SGLD and the OBABO Langevin kernel with a cyclical
//!   schedule, noise gating and diagonal preconditioning.
//! - [`diagnostics`], [`metrics`], [`weightstats`]: sampler checks,
//!   predictive evaluation and empirical weight analysis.
//! - [`data`], [`checkpoint`]: dataset ingestion and the parameter file format.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod params;
pub mod posterior;
pub mod priors;
pub mod rng;
pub mod samplers;
pub mod tensor;
pub mod weightstats;

pub use error::{Error, Result};
pub use params::{ParamEntry, ParamTree, Role};
pub use tensor::{Real, Tensor};
