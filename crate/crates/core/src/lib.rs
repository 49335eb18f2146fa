//! Desk-scale laboratory for SVD-initialized low-rank adaptation.
//!
//! OSoRA freezes the top-`r` singular vectors of a pretrained weight and trains
//! only the singular values `S_r` and an output-dimension scaling vector `O`:
//!
//! ```text
//! y = W0' x + diag(O) U_r diag(S_r) V_rᵀ x
//! ```
//!
//! The crate builds that adapter and its baselines (LoRA, VeRA, PiSSA, DoRA,
//! the input-side variant and the DoRA fusion), evaluates and merges them,
//! differentiates a squared-error loss analytically, trains toy tasks, counts
//! parameters for real model shapes, and stores compact checkpoints.

pub mod accounting;
pub mod adapters;
pub mod densela;
mod error;
pub mod exec;
pub mod gradients;
pub mod persist;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
