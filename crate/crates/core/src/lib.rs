//! Estimation and inference for generalized functional linear models under
//! roughness regularization.
//!
//! The pipeline is: put curves on a [`funcspace::Grid`], build an
//! [`eigensys::EigenSystem`] that simultaneously diagonalizes the covariance
//! form `V` and the roughness penalty `J`, fit the penalized model in that
//! basis ([`fit`]), then run interval estimates and tests ([`infer`],
//! [`adaptive`]). [`sim`] reproduces the size/power/coverage studies.

pub mod adaptive;
pub mod eigensys;
pub mod error;
pub mod fit;
pub mod funcspace;
pub mod infer;
pub mod io;
mod linalg;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
