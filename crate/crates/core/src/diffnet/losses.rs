//! The three training losses and their gradients: cross-entropy on class
//! logits, the normalized-temperature contrastive loss over augmentation
//! pairs, and the embedding-distance objective driving the perturbation
//! generator.

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::stack::{forward_embed, ModelStack};

/// Mean cross-entropy of `logits` against integer `labels`, with the gradient
/// w.r.t. the logits. With one-hot targets this equals the KL divergence
/// between the predicted distribution and the label up to a constant.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, classes) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), n)));
    }
    if n == 0 {
        return Err(Error::Domain("cross_entropy needs at least one row".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = Matrix::zeros(n, classes);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += (log_z - row[labels[i]]) * inv_n;
        let grow = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            grow[j] = ((v - log_z).exp() - if j == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite cross entropy {loss}")));
    }
    Ok((loss, grad))
}

/// Normalized-temperature cross-entropy over adjacent augmentation pairs
/// (rows 2k and 2k+1 are positives of each other). Cosine similarities are
/// scaled by `1/tau`; the denominator for anchor `i` runs over every row
/// except `i` itself. Returns the loss and its gradient w.r.t. `z`.
pub fn ntxent_loss(z: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let n2 = z.rows();
    if n2 < 2 || n2 % 2 != 0 {
        return Err(Error::Shape(format!("need an even row count >= 2, got {n2}")));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be finite and > 0, got {tau}")));
    }
    let d = z.cols();
    let mut norms = Vec::with_capacity(n2);
    for i in 0..n2 {
        let r = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::Domain(format!("zero-norm row {i}: cosine undefined")));
        }
        norms.push(r);
    }
    let unit = Matrix::from_fn(n2, d, |i, j| z.get(i, j) / norms[i])?;
    // scaled cosine similarities
    let sim = {
        let mut s = unit.matmul(&unit.transpose())?;
        for v in s.data_mut() {
            *v /= tau;
        }
        s
    };

    let inv_n2 = 1.0 / n2 as f64;
    let mut loss = 0.0;
    // d loss / d sim
    let mut gsim = Matrix::zeros(n2, n2);
    for i in 0..n2 {
        let partner = i ^ 1;
        let row = sim.row(i);
        let mut max = f64::NEG_INFINITY;
        for (k, &v) in row.iter().enumerate() {
            if k != i && v > max {
                max = v;
            }
        }
        let mut denom = 0.0;
        for (k, &v) in row.iter().enumerate() {
            if k != i {
                denom += (v - max).exp();
            }
        }
        let log_z = max + denom.ln();
        loss += (log_z - row[partner]) * inv_n2;
        let grow = gsim.row_mut(i);
        for (k, &v) in row.iter().enumerate() {
            if k == i {
                continue;
            }
            let p = (v - log_z).exp();
            grow[k] = (p - if k == partner { 1.0 } else { 0.0 }) * inv_n2;
        }
    }

    // through sim = unit unit^T / tau: d/d unit_a = (G + G^T) unit / tau
    let mut gsym = gsim.transpose();
    gsym.add_scaled(&gsim, 1.0)?;
    let mut gunit = gsym.matmul(&unit)?;
    for v in gunit.data_mut() {
        *v /= tau;
    }
    // through row normalization: (I - u u^T) / ||z||
    let mut gz = Matrix::zeros(n2, d);
    for i in 0..n2 {
        let u = unit.row(i);
        let g = gunit.row(i);
        let along: f64 = u.iter().zip(g).map(|(&a, &b)| a * b).sum();
        let out = gz.row_mut(i);
        for ((o, &gv), &uv) in out.iter_mut().zip(g).zip(u) {
            *o = (gv - along * uv) / norms[i];
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite contrastive loss {loss}")));
    }
    Ok((loss, gz))
}

/// Mean squared embedding distance `1/n sum_i ||phi(xp_i) - phi(x_i)||^2`
/// with its gradient w.r.t. `xp`. Parameter gradients of this objective flow
/// through [`backward`](super::backward::backward) with the generator-step
/// selector.
pub fn embed_distance_loss(m: &ModelStack, x: &Matrix, xp: &Matrix) -> Result<(f64, Matrix)> {
    if x.rows() != xp.rows() || x.cols() != xp.cols() {
        return Err(Error::Shape(format!(
            "x is {}x{} but xp is {}x{}",
            x.rows(),
            x.cols(),
            xp.rows(),
            xp.cols()
        )));
    }
    let cache = m.phi.forward_cached(xp)?;
    let ex = forward_embed(m, x)?;
    let exp_ = cache.output();
    let (loss, upstream) = embed_distance_value_grad(exp_, &ex)?;
    let (_, grad_xp) = m.phi.backward(&cache, &upstream, None)?;
    Ok((loss, grad_xp))
}

/// Loss value and gradient w.r.t. the first embedding argument.
pub(crate) fn embed_distance_value_grad(
    e_perturbed: &Matrix,
    e_clean: &Matrix,
) -> Result<(f64, Matrix)> {
    let n = e_perturbed.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(e_perturbed.rows(), e_perturbed.cols());
    for i in 0..e_perturbed.rows() {
        let gp = grad.row_mut(i);
        for (k, (&a, &b)) in e_perturbed.row(i).iter().zip(e_clean.row(i)).enumerate() {
            let diff = a - b;
            loss += diff * diff / n;
            gp[k] = 2.0 * diff / n;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite embedding distance {loss}")));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::stack::{Activation, AffineLayer, AffineStack, Generator, ModelStack};
    use crate::math::finite_diff_grad;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Matrix::zeros(3, 4);
        let (loss, _) = cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let logits = Matrix::from_rows(&[vec![50.0, 0.0]]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn two_class_worked_example() {
        let logits = Matrix::from_rows(&[vec![(3.0f64).ln(), 0.0]]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - (-0.75f64.ln())).abs() < 1e-12);
        assert!((grad.get(0, 0) - (0.75 - 1.0)).abs() < 1e-12);
        assert!((grad.get(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(cross_entropy(&logits, &[2]), Err(Error::Domain(_))));
    }

    #[test]
    fn cross_entropy_grad_matches_finite_diff() {
        let logits = Matrix::from_rows(&[vec![0.3, -1.2, 0.8], vec![1.5, 0.1, -0.4]]).unwrap();
        let labels = [2usize, 0];
        let (_, grad) = cross_entropy(&logits, &labels).unwrap();
        let flat = logits.data().to_vec();
        let fd = finite_diff_grad(
            |v| {
                let l = Matrix::new(2, 3, v.to_vec()).unwrap();
                cross_entropy(&l, &labels).unwrap().0
            },
            &flat,
            1e-6,
        )
        .unwrap();
        for (a, b) in grad.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn ntxent_single_pair_is_zero() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.9]]).unwrap();
        let (loss, grad) = ntxent_loss(&z, 0.5).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn ntxent_identical_rows_is_ln3() {
        let z = Matrix::from_rows(&[vec![0.4, 0.2]; 4]).unwrap();
        let (loss, _) = ntxent_loss(&z, 0.7).unwrap();
        assert!((loss - (3.0f64).ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn ntxent_orthogonal_negatives_worked_example() {
        // positive pairs perfectly aligned, cross-pair cosines all zero
        let z = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let (loss, _) = ntxent_loss(&z, 1.0).unwrap();
        let e = 1.0f64.exp();
        let expect = -(e / (e + 2.0)).ln();
        assert!((loss - expect).abs() < 1e-12, "loss {loss} expect {expect}");
    }

    #[test]
    fn ntxent_rejects_zero_norm_and_odd_counts() {
        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(ntxent_loss(&z, 0.5), Err(Error::Domain(_))));
        let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(ntxent_loss(&z, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn ntxent_scale_invariance() {
        let z = Matrix::from_rows(&[
            vec![0.5, 1.0, -0.3],
            vec![0.4, 0.9, -0.1],
            vec![-1.0, 0.2, 0.8],
            vec![-0.9, 0.1, 0.9],
        ])
        .unwrap();
        let (l1, _) = ntxent_loss(&z, 0.5).unwrap();
        let scaled = z.map(|v| v * 37.5).unwrap();
        let (l2, _) = ntxent_loss(&scaled, 0.5).unwrap();
        assert!((l1 - l2).abs() < 1e-8);
    }

    #[test]
    fn ntxent_grad_matches_finite_diff() {
        let z = Matrix::from_rows(&[
            vec![0.5, 1.0, -0.3],
            vec![0.4, 0.9, -0.1],
            vec![-1.0, 0.2, 0.8],
            vec![0.7, 0.1, 0.9],
            vec![0.2, -0.5, 0.4],
            vec![0.1, -0.6, 0.5],
        ])
        .unwrap();
        let (_, grad) = ntxent_loss(&z, 0.37).unwrap();
        let flat = z.data().to_vec();
        let fd = finite_diff_grad(
            |v| ntxent_loss(&Matrix::new(6, 3, v.to_vec()).unwrap(), 0.37).unwrap().0,
            &flat,
            1e-6,
        )
        .unwrap();
        for (a, b) in grad.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    fn identity_model(dim: usize) -> ModelStack {
        let phi = AffineStack::new(vec![AffineLayer::identity(dim)]).unwrap();
        let theta = AffineStack::new(vec![AffineLayer::new(
            Matrix::identity(dim),
            vec![0.0; dim],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let gen = Generator::identity(dim, 0.0, 1.0).unwrap();
        ModelStack::new(phi, theta, gen, Matrix::identity(dim), 0.5).unwrap()
    }

    #[test]
    fn embed_distance_zero_when_equal() {
        let m = identity_model(2);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (loss, grad) = embed_distance_loss(&m, &x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.max_abs() == 0.0);
    }

    #[test]
    fn embed_distance_identity_phi() {
        let m = identity_model(2);
        let x = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let xp = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (loss, _) = embed_distance_loss(&m, &x, &xp).unwrap();
        assert!((loss - 25.0).abs() < 1e-12);
    }

    #[test]
    fn embed_distance_nonnegative() {
        let m = ModelStack::init(
            crate::diffnet::stack::StackDims { input: 3, hidden: 4, embed: 2, classes: 2, proj: 2 },
            1.0,
            0.0,
            0.5,
            crate::math::RngStream::new(2, 0),
        )
        .unwrap();
        for t in 0..20 {
            let x = crate::math::gaussian_sample(crate::math::RngStream::new(60, t), 0.0, 1.0, (4, 3))
                .unwrap();
            let xp =
                crate::math::gaussian_sample(crate::math::RngStream::new(61, t), 0.0, 1.0, (4, 3))
                    .unwrap();
            let (loss, _) = embed_distance_loss(&m, &x, &xp).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
