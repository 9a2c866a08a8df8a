//! Null-space constrained editing of linear associative memories.
//!
//! A weight matrix `W` is read as a key-value store (`W k = v`). Editing
//! installs new associations `(K₁, V₁)` by adding a perturbation `Δ`. The
//! crate provides closed-form solvers for the unconstrained, the
//! preserved-knowledge-regularized (MEMIT) and the null-space projected
//! (AlphaEdit) objectives, a gradient-descent oracle that certifies them, and
//! a sequential-editing harness that tracks how well preserved and previously
//! edited knowledge survives.

pub mod certify;
pub mod cli;
pub mod config;
pub mod editors;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod numerics;
pub mod oracle;
pub mod projector;

pub use error::{Error, Result};
