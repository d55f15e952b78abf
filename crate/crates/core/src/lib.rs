//! Approximate message passing for sparse (soft-threshold) and robust (Huber)
//! linear regression with Gaussian designs.
//!
//! The crate covers the AMP recursion and its error form, the matching
//! state-evolution recursions, the exact Gaussian decomposition of the AMP
//! iterates with its residual terms, and scalar diagnostics (one-dimensional
//! Wasserstein distance, scaling fits, H-function curves). The `experiment`
//! module wires everything into seeded multi-trial runs used by the CLI.

pub mod amp;
pub mod config;
pub mod decomp;
pub mod denoise;
pub mod diag;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod optim;
pub mod rng;
pub mod se;
pub mod svg;

pub use error::{Error, Result};
