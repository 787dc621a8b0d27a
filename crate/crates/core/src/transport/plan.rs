//! Coupling matrix with marginals, cost value and solver diagnostics.

use crate::error::{Error, Result};
use crate::math::Matrix;

/// A converged (or iteration-capped) transport coupling.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    plan: Matrix,
    a: Vec<f64>,
    b: Vec<f64>,
    transport_cost: f64,
    beta: f64,
    iterations: usize,
    converged: bool,
    marginal_violation: f64,
}

impl TransportPlan {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        plan: Matrix,
        a: Vec<f64>,
        b: Vec<f64>,
        transport_cost: f64,
        beta: f64,
        iterations: usize,
        converged: bool,
        marginal_violation: f64,
    ) -> Result<Self> {
        if plan.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("negative plan entry".into()));
        }
        if !transport_cost.is_finite() {
            return Err(Error::Numeric(format!("non-finite transport cost {transport_cost}")));
        }
        Ok(TransportPlan {
            plan,
            a,
            b,
            transport_cost,
            beta,
            iterations,
            converged,
            marginal_violation,
        })
    }

    pub fn plan(&self) -> &Matrix {
        &self.plan
    }

    pub fn source_marginal(&self) -> &[f64] {
        &self.a
    }

    pub fn target_marginal(&self) -> &[f64] {
        &self.b
    }

    /// `<plan, C>` for the cost matrix the solver ran on.
    pub fn transport_cost(&self) -> f64 {
        self.transport_cost
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Worst absolute deviation of a plan marginal from its prescription.
    pub fn marginal_violation(&self) -> f64 {
        self.marginal_violation
    }

    /// Shannon entropy `-sum pi log pi` with the 0 log 0 = 0 convention.
    pub fn entropy(&self) -> f64 {
        self.plan
            .data()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Dumps the plan as CSV rows `(row, col, mass)` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,mass\n");
        for i in 0..self.plan.rows() {
            for j in 0..self.plan.cols() {
                out.push_str(&format!("{},{},{:.10e}\n", i, j, self.plan.get(i, j)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_2x2() {
        let plan = Matrix::filled(2, 2, 0.25).unwrap();
        let p = TransportPlan::new(plan, vec![0.5; 2], vec![0.5; 2], 0.0, 0.5, 1, true, 0.0)
            .unwrap();
        assert!((p.entropy() - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_handles_zero_mass() {
        let plan = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let p = TransportPlan::new(plan, vec![0.5; 2], vec![0.5; 2], 0.0, 0.5, 1, true, 0.0)
            .unwrap();
        assert!((p.entropy() - (2.0f64).ln()).abs() < 1e-12);
    }
}
