//! Symmetric InfoNCE over in-batch negatives and its closed-form gradient.
//!
//! For anchors `A` and targets `T` (both `B x d`, rows matched) the logits
//! are `Z = A T^T / tau`. The loss is the mean of the row-wise and
//! column-wise softmax cross-entropies with the diagonal as positives, each
//! averaged over the batch.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// dL/dA, `B x d`.
    pub grad_anchor: DMatrix<f64>,
    /// dL/dT, `B x d`.
    pub grad_target: DMatrix<f64>,
}

fn check(anchor: &DMatrix<f64>, target: &DMatrix<f64>, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if anchor.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "anchor {:?} and target {:?} shapes differ",
            anchor.shape(),
            target.shape()
        )));
    }
    if anchor.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Loss and `dL/dZ` for a square logit matrix.
///
/// Each cross-entropy term is `ln(sum) + (max - positive)`, and the terms are
/// averaged as offsets from the first one, so a constant matrix yields
/// exactly `ln B` in floating point.
pub fn logits_loss(z: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let b = z.nrows();
    let bf = b as f64;
    let mut grad = DMatrix::zeros(b, b);
    let mut terms = Vec::with_capacity(2 * b);
    // rows: anchor i against all targets
    for i in 0..b {
        let m = z.row(i).max();
        let sum: f64 = z.row(i).iter().map(|v| (v - m).exp()).sum();
        terms.push(sum.ln() + (m - z[(i, i)]));
        for j in 0..b {
            grad[(i, j)] += (z[(i, j)] - m).exp() / sum / (2.0 * bf);
        }
        grad[(i, i)] -= 1.0 / (2.0 * bf);
    }
    // columns: target j against all anchors
    for j in 0..b {
        let m = z.column(j).max();
        let sum: f64 = z.column(j).iter().map(|v| (v - m).exp()).sum();
        terms.push(sum.ln() + (m - z[(j, j)]));
        for i in 0..b {
            grad[(i, j)] += (z[(i, j)] - m).exp() / sum / (2.0 * bf);
        }
        grad[(j, j)] -= 1.0 / (2.0 * bf);
    }
    let first = terms[0];
    let offset: f64 = terms.iter().map(|t| t - first).sum();
    (first + offset / (2.0 * bf), grad)
}

pub fn infonce_symmetric(anchor: &DMatrix<f64>, target: &DMatrix<f64>, tau: f64) -> Result<f64> {
    check(anchor, target, tau)?;
    let z = anchor * target.transpose() / tau;
    Ok(logits_loss(&z).0)
}

pub fn infonce_gradient(anchor: &DMatrix<f64>, target: &DMatrix<f64>, tau: f64) -> Result<LossGrad> {
    check(anchor, target, tau)?;
    let z = anchor * target.transpose() / tau;
    let (loss, g) = logits_loss(&z);
    Ok(LossGrad {
        loss,
        grad_anchor: &g * target / tau,
        grad_target: g.transpose() * anchor / tau,
    })
}

/// `L = L(P, I) + L(P, T)` and its gradient with respect to `P`; image and
/// text embeddings are frozen.
pub fn trimodal_loss(
    points: &DMatrix<f64>,
    images: &DMatrix<f64>,
    texts: &DMatrix<f64>,
    tau: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let pi = infonce_gradient(points, images, tau)?;
    let pt = infonce_gradient(points, texts, tau)?;
    Ok((pi.loss + pt.loss, pi.grad_anchor + pt.grad_anchor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_oracle() {
        let a = DMatrix::<f64>::identity(2, 2);
        let l = infonce_symmetric(&a, &a, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn constant_similarities_give_ln_b() {
        for b in [1usize, 2, 5, 16] {
            let z = DMatrix::from_element(b, b, 0.37);
            assert_eq!(logits_loss(&z).0, (b as f64).ln());
        }
        let one = DMatrix::from_row_slice(1, 3, &[0.6, 0.8, 0.0]);
        assert_eq!(infonce_symmetric(&one, &one, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert!(infonce_symmetric(&a, &a, 0.0).is_err());
        assert!(infonce_symmetric(&a, &a, -1.0).is_err());
        assert!(infonce_symmetric(&a, &DMatrix::identity(3, 2), 1.0).is_err());
    }

    #[test]
    fn saturated_alignment_has_vanishing_gradient() {
        let a = DMatrix::<f64>::identity(4, 4);
        let g = infonce_gradient(&a, &a, 0.01).unwrap();
        assert!(g.grad_anchor.norm() < 1e-30);
        assert!(g.loss < 1e-30);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn batch(b: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0..1.0f64, b * d).prop_map(move |v| DMatrix::from_row_slice(b, d, &v))
    }

    fn pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
        (1usize..8, 1usize..6).prop_flat_map(|(b, d)| (batch(b, d), batch(b, d)))
    }

    proptest! {
        #[test]
        fn loss_is_non_negative((a, t) in pair(), tau in 0.05..2.0f64) {
            prop_assert!(infonce_symmetric(&a, &t, tau).unwrap() >= 0.0);
        }

        #[test]
        fn matched_row_permutation_leaves_loss_unchanged((a, t) in pair(), seed in any::<u64>()) {
            let b = a.nrows();
            let mut order: Vec<usize> = (0..b).collect();
            let mut s = seed;
            for i in (1..b).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pa = DMatrix::from_fn(b, a.ncols(), |i, j| a[(order[i], j)]);
            let pt = DMatrix::from_fn(b, t.ncols(), |i, j| t[(order[i], j)]);
            let l = infonce_symmetric(&a, &t, 0.1).unwrap();
            let lp = infonce_symmetric(&pa, &pt, 0.1).unwrap();
            prop_assert!((l - lp).abs() <= 1e-12 * (1.0 + l.abs()));
        }

        #[test]
        fn temperature_scales_logits((a, t) in pair(), tau in 0.05..2.0f64, s in 0.1..10.0f64) {
            let l = infonce_symmetric(&a, &t, tau).unwrap();
            prop_assert_eq!(l, logits_loss(&(&a * t.transpose() / tau)).0);
            let scaled = infonce_symmetric(&(&a * s), &t, tau * s).unwrap();
            prop_assert!((l - scaled).abs() <= 1e-9 * (1.0 + l.abs()));
        }
    }
}
