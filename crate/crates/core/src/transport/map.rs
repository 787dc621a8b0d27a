//! Barycentric mapping and the plug-in Wasserstein estimate.

use crate::error::{Error, Result};
use crate::math::{pairwise_sq_dist, Matrix};

use super::plan::TransportPlan;
use super::sinkhorn::{cost_from_potentials, solve_potentials};

/// Replaces each source point by the plan-weighted average of target
/// embeddings: `out[i] = sum_j plan[i][j] * q_emb[j] / sum_j plan[i][j]`.
/// Every output row lies in the convex hull of the target rows.
pub fn barycentric_map(plan: &TransportPlan, q_emb: &Matrix) -> Result<Matrix> {
    let p = plan.plan();
    if p.cols() != q_emb.rows() {
        return Err(Error::Shape(format!(
            "plan has {} columns but target embedding has {} rows",
            p.cols(),
            q_emb.rows()
        )));
    }
    let mut out = Matrix::zeros(p.rows(), q_emb.cols());
    for i in 0..p.rows() {
        let mass: f64 = p.row(i).iter().sum();
        if mass <= 0.0 {
            return Err(Error::DegeneratePlan(format!("plan row {i} carries no mass")));
        }
        for (j, &w) in p.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let q_row = q_emb.row(j);
            let out_row = out.row_mut(i);
            for (o, &q) in out_row.iter_mut().zip(q_row) {
                *o += (w / mass) * q;
            }
        }
    }
    out.check_finite("barycentric_map")?;
    Ok(out)
}

/// Entropic plug-in estimate of the Wasserstein-2 distance between the
/// empirical distributions of the rows of `x` and `y`: the square root of the
/// Sinkhorn transport cost under squared-Euclidean ground cost and uniform
/// marginals.
pub fn wasserstein_estimate(
    x: &Matrix,
    y: &Matrix,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let c = pairwise_sq_dist(x, y)?;
    let a = vec![1.0 / x.rows() as f64; x.rows()];
    let b = vec![1.0 / y.rows() as f64; y.rows()];
    let sol = solve_potentials(&c, &a, &b, beta, tol, max_iter)?;
    let cost = cost_from_potentials(&sol, &c);
    if !cost.is_finite() {
        return Err(Error::Numeric(format!("non-finite transport cost {cost}")));
    }
    Ok(cost.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{gaussian_sample, RngStream};
    use crate::transport::sinkhorn::sinkhorn_default;

    #[test]
    fn permutation_plan_maps_to_matched_point() {
        let c = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let plan = sinkhorn_default(&c, &[0.5, 0.5], &[0.5, 0.5], 0.99).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let mapped = barycentric_map(&plan, &q).unwrap();
        for j in 0..2 {
            assert!((mapped.get(0, j) - 1.0).abs() < 1e-3);
            assert!((mapped.get(1, j) - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_plan_maps_to_barycenter() {
        let plan_m = Matrix::filled(2, 2, 0.25).unwrap();
        let plan = TransportPlan::new(
            plan_m,
            vec![0.5; 2],
            vec![0.5; 2],
            0.0,
            0.5,
            1,
            true,
            0.0,
        )
        .unwrap();
        let q = Matrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 2.0]]).unwrap();
        let mapped = barycentric_map(&plan, &q).unwrap();
        for i in 0..2 {
            assert!((mapped.get(i, 0) - 2.0).abs() < 1e-12);
            assert!((mapped.get(i, 1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let plan_m = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let plan = TransportPlan::new(
            plan_m,
            vec![0.0, 1.0],
            vec![0.5; 2],
            0.0,
            0.5,
            1,
            true,
            0.0,
        )
        .unwrap();
        let q = Matrix::zeros(2, 3);
        assert!(matches!(
            barycentric_map(&plan, &q),
            Err(crate::Error::DegeneratePlan(_))
        ));
    }

    #[test]
    fn self_distance_is_zero_on_separated_points() {
        // points far apart relative to the entropic scale, so the plan
        // collapses onto the identity matching
        let x = gaussian_sample(RngStream::new(11, 0), 0.0, 1.0, (20, 16)).unwrap();
        let w = wasserstein_estimate(&x, &x, 0.99, 1e-9, 20_000).unwrap();
        assert!(w < 1e-6, "self distance {w}");
    }
}
