//! Resonances of distant multi-well perturbations on a Dirichlet strip.
//!
//! The crate builds glued operators from single-perturbation blocks joined by
//! periodic backgrounds, computes Floquet band data and complex exponents,
//! extracts bound-state tails, assembles the interaction matrix whose
//! eigenvalues predict the resonance shifts, and checks the predictions with
//! an independent transfer-matrix resonance solver.

#![allow(clippy::needless_range_loop)]

pub mod bound_states;
pub mod config;
pub mod error;
pub mod expr;
pub mod floquet;
pub mod interaction;
pub mod linalg;
pub mod model;
pub mod output;
pub mod pencil;
pub mod pipeline;
pub mod propagate;
pub mod resonance;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{CMat, CVec, C64};
