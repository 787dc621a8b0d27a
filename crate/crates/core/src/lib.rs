//! Adversarially trained embeddings plus entropic optimal-transport alignment
//! for few-shot classification under support-query distribution shift.
//!
//! The crate is organized along the pipeline:
//!
//! - [`math`]: dense matrices, seeded random streams, finite-difference oracle
//! - [`diffnet`]: the small differentiable model stack (embedding, classifier
//!   head, perturbation generator, projection) with hand-derived gradients
//! - [`transport`]: entropic optimal transport (log-domain Sinkhorn), an exact
//!   small-instance solver, and barycentric mapping
//! - [`episodes`]: synthetic few-shot episode generation with controllable
//!   support-query shift, classifiers, and single-episode evaluation
//! - [`experiments`]: the adversarial training loop, transport-error theory
//!   harnesses, ablation runner, and statistics aggregation

pub mod diffnet;
pub mod episodes;
mod error;
pub mod experiments;
pub mod math;
pub mod transport;

pub use error::{Error, Result};
