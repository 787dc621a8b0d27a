//! Dense numeric kernels, seeded sampling, and the finite-difference oracle.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::finite_diff_grad;
pub use matrix::{pairwise_sq_dist, Matrix};
pub use rng::{gaussian_sample, RngStream};
