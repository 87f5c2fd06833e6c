use super::activation::sigmoid;
use super::tensor::Tensor;

/// Sum of squared differences with its gradient w.r.t. `pred`.
pub fn squared_l2(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    debug_assert_eq!(pred.shape(), target.shape());
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d;
    }
    (loss, grad)
}

/// Euclidean distance ||pred - target||₂ with its gradient w.r.t. `pred`.
/// The gradient is zero at coincident points (subgradient choice).
pub fn l2_norm(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    debug_assert_eq!(pred.shape(), target.shape());
    let diff = pred.sub(target);
    let norm = diff.norm2();
    if norm < 1e-12 {
        return (norm, Tensor::zeros(pred.shape()));
    }
    let mut grad = diff;
    grad.scale(1.0 / norm);
    (norm, grad)
}

/// Per-bit binary cross-entropy on logits (numerically stable form),
/// summed over all entries; gradient w.r.t. the logits.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> (f64, Tensor) {
    debug_assert_eq!(logits.shape(), targets.shape());
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for ((g, &z), &y) in grad
        .data_mut()
        .iter_mut()
        .zip(logits.data())
        .zip(targets.data())
    {
        loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        *g = sigmoid(z) - y;
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_l2_gradient_is_analytic() {
        let p = Tensor::vector(vec![1.0, -2.0]);
        let t = Tensor::vector(vec![0.5, 0.0]);
        let (loss, g) = squared_l2(&p, &t);
        assert!((loss - (0.25 + 4.0)).abs() < 1e-15);
        assert_eq!(g.data(), &[1.0, -4.0]);
    }

    #[test]
    fn l2_norm_handles_coincident_points() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        let (loss, g) = l2_norm(&p, &p);
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_matches_finite_differences() {
        let z = Tensor::vector(vec![0.7, -1.3, 2.0]);
        let y = Tensor::vector(vec![1.0, 0.0, 1.0]);
        let (_, g) = bce_with_logits(&z, &y);
        let h = 1e-6;
        for i in 0..3 {
            let mut zu = z.clone();
            zu.data_mut()[i] += h;
            let mut zd = z.clone();
            zd.data_mut()[i] -= h;
            let fd = (bce_with_logits(&zu, &y).0 - bce_with_logits(&zd, &y).0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
