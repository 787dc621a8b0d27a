//! Central finite-difference gradient oracle used to validate hand-derived
//! backward passes.

use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` per coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("step h must be finite and > 0, got {h}")));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective near coordinate {i}: f+={up}, f-={down}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6, "got {}", g[0]);
    }

    #[test]
    fn constant_is_zero() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_squares() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let r = finite_diff_grad(|x| (-x[0]).sqrt(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn degree_two_polynomials_exact_on_random_coeffs() {
        // deterministic LCG so the test needs no rng plumbing
        let mut state = 0x12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..100 {
            let dim = 3;
            let a: Vec<f64> = (0..dim).map(|_| next()).collect();
            let b: Vec<f64> = (0..dim).map(|_| next()).collect();
            let c = next();
            let x: Vec<f64> = (0..dim).map(|_| 2.0 * next()).collect();
            let f = |v: &[f64]| {
                let quad: f64 = v.iter().zip(&a).map(|(vi, ai)| ai * vi * vi).sum();
                let lin: f64 = v.iter().zip(&b).map(|(vi, bi)| bi * vi).sum();
                quad + lin + c
            };
            let g = finite_diff_grad(f, &x, 1e-5).unwrap();
            for i in 0..dim {
                let expect = 2.0 * a[i] * x[i] + b[i];
                assert!((g[i] - expect).abs() < 1e-6, "coord {i}: {} vs {expect}", g[i]);
            }
        }
    }
}
