//! Entropic-regularized discrete optimal transport: Sinkhorn solver for the
//! beta-weighted objective, exact small-instance oracle, and barycentric
//! mapping.

mod exact;
mod map;
mod plan;
mod sinkhorn;

pub use exact::{exact_ot_small, EXACT_OT_MAX_CELLS};
pub use map::{barycentric_map, wasserstein_estimate};
pub use plan::TransportPlan;
pub use sinkhorn::{lambda_from_beta, sinkhorn, sinkhorn_default, DEFAULT_MAX_ITER, DEFAULT_TOL};
