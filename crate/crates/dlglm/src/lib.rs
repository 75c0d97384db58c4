//! Deeply-learned generalized linear models with missing covariates.
//!
//! The crate trains GLMs whose linear predictor is built on a neural
//! feature map, jointly with a deep latent-variable model of the covariates
//! and (optionally) an explicit model of the missingness mask, optimized
//! through importance-weighted variational bounds. It covers:
//!
//! - a reverse-mode autodiff engine over dense f64 tensors ([`tensor`]),
//! - ADAM/SGD ascent and semi-orthogonal initialization ([`optim`], [`init`]),
//! - the building-block densities ([`distributions`]) and GLM families ([`glm`]),
//! - synthetic data and mask generation ([`data`], [`missingness`]),
//! - the model, its bound estimators, and training ([`model`], [`bounds`], [`train`]),
//! - self-normalized importance-sampling imputation and prediction ([`inference`]),
//! - evaluation metrics ([`metrics`]) and the experiment pipeline ([`experiment`]).

pub mod bounds;
pub mod data;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod glm;
pub mod gradcheck;
pub mod inference;
pub mod init;
pub mod metrics;
pub mod missingness;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
