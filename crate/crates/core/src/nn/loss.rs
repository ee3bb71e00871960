use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Class-weighted softmax cross-entropy over the columns of a `classes x n` matrix.
///
/// Returns the mean over the `n` samples of `w[label] * -log softmax[label]`
/// together with its gradient with respect to `logits`. Rank-3 logits
/// `[classes, h, w]` are accepted and treated as `classes x (h*w)`.
pub fn weighted_softmax_loss(
    logits: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Tensor)> {
    let classes = logits.shape()[0];
    let n = logits.len() / classes;
    if labels.len() != n {
        return Err(shape_err(
            "weighted_softmax_loss",
            format!("{} labels for {n} samples", labels.len()),
        ));
    }
    if class_weights.len() != classes {
        return Err(shape_err(
            "weighted_softmax_loss",
            format!("{} class weights for {classes} classes", class_weights.len()),
        ));
    }
    if class_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(shape_err(
            "weighted_softmax_loss",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    let x = logits.data();
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut probs = vec![0.0; classes];
    for (i, &label) in labels.iter().enumerate() {
        let max = (0..classes).map(|c| x[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (c, p) in probs.iter_mut().enumerate() {
            *p = (x[c * n + i] - max).exp();
            z += *p;
        }
        let w = class_weights[label];
        loss += w * (z.ln() - (x[label * n + i] - max));
        for (c, p) in probs.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[c * n + i] = w * (p / z - onehot) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Gradients of [`contrastive_loss`] with respect to both embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Margin contrastive loss `1/2 c D^2 + 1/2 (1-c) max(0, margin - D^2)`
/// with `D = |a - b|`.
pub fn contrastive_loss(a: &[f64], b: &[f64], same: bool, margin: f64) -> Result<ContrastiveGrad> {
    if a.len() != b.len() {
        return Err(shape_err(
            "contrastive_loss",
            format!("embedding lengths {} and {}", a.len(), b.len()),
        ));
    }
    if !(margin > 0.0) {
        return Err(Error::Config(format!("contrastive margin must be positive, got {margin}")));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d2: f64 = diff.iter().map(|v| v * v).sum();
    let (loss, coef) = if same {
        (0.5 * d2, 1.0)
    } else if d2 < margin {
        (0.5 * (margin - d2), -1.0)
    } else {
        (0.0, 0.0)
    };
    let grad_a: Vec<f64> = diff.iter().map(|d| coef * d).collect();
    let grad_b = grad_a.iter().map(|g| -g).collect();
    Ok(ContrastiveGrad { loss, grad_a, grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_grad, relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::zeros(&[2, 5]);
        let (loss, _) = weighted_softmax_loss(&logits, &[0, 1, 1, 0, 1], &[1.0, 1.0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let logits = Tensor::new(vec![2, 2], vec![60.0, -60.0, -60.0, 60.0]).unwrap();
        let (loss, _) = weighted_softmax_loss(&logits, &[0, 1], &[1.0, 1.0]).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(weighted_softmax_loss(&Tensor::zeros(&[2, 1]), &[2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(120 + seed);
            let logits = Tensor::randn(&[3, 7], 2.0, &mut rng);
            let labels: Vec<usize> = (0..7).map(|_| rng.gen_range(0..3)).collect();
            let w = [0.5, 2.0, 1.3];
            let (_, ana) = weighted_softmax_loss(&logits, &labels, &w).unwrap();
            let num = finite_diff_grad(|t| weighted_softmax_loss(t, &labels, &w).unwrap().0, &logits, 1e-5);
            assert!(relative_error(&ana, &num) < 1e-4);
        }
    }

    #[test]
    fn contrastive_trivial_cases() {
        let a = [0.6, 0.8];
        assert_eq!(contrastive_loss(&a, &a, true, 1.0).unwrap().loss, 0.0);
        // D^2 = 4 >= margin
        assert_eq!(contrastive_loss(&[1.0, 0.0], &[-1.0, 0.0], false, 1.0).unwrap().loss, 0.0);
        // D = 0, dissimilar pair, margin 1: 1/2 * (1 - 0)
        assert_eq!(contrastive_loss(&a, &a, false, 1.0).unwrap().loss, 0.5);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(140 + seed);
            let a = Tensor::randn(&[6], 0.3, &mut rng);
            let b = Tensor::randn(&[6], 0.3, &mut rng);
            for same in [true, false] {
                let g = contrastive_loss(a.data(), b.data(), same, 1.0).unwrap();
                let num_a = finite_diff_grad(|t| contrastive_loss(t.data(), b.data(), same, 1.0).unwrap().loss, &a, 1e-5);
                let num_b = finite_diff_grad(|t| contrastive_loss(a.data(), t.data(), same, 1.0).unwrap().loss, &b, 1e-5);
                assert!(relative_error(&Tensor::from_vec(g.grad_a), &num_a) < 1e-4);
                assert!(relative_error(&Tensor::from_vec(g.grad_b), &num_b) < 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn contrastive_is_non_negative(
            a in prop::collection::vec(-2f64..2.0, 5),
            b in prop::collection::vec(-2f64..2.0, 5),
            same in any::<bool>(),
            margin in 0.01f64..4.0,
        ) {
            prop_assert!(contrastive_loss(&a, &b, same, margin).unwrap().loss >= 0.0);
        }
    }
}
