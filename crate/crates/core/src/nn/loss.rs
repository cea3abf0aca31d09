use super::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    /// `(softmax(logits) - onehot(labels)) / batch`.
    pub grad: Tensor<T>,
    /// Rows whose argmax equals the label.
    pub correct: usize,
}

/// Softmax cross-entropy on `[batch, classes]` logits.
pub fn softmax_cross_entropy<T: Scalar>(
    layer: &str,
    logits: &Tensor<T>,
    labels: &[u16],
) -> Result<LossOutput<T>, NnError> {
    if logits.rank() != 2 {
        return Err(NnError::ShapeMismatch {
            layer: layer.to_string(),
            expected: "[batch, classes]".into(),
            actual: logits.shape().to_vec(),
        });
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(NnError::LabelCount {
            layer: layer.to_string(),
            labels: labels.len(),
            batch,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= classes) {
        return Err(NnError::LabelOutOfRange {
            layer: layer.to_string(),
            label: usize::from(bad),
            num_classes: classes,
        });
    }

    let inv_batch = T::one() / T::from_usize(batch).unwrap();
    let mut grad = Vec::with_capacity(logits.numel());
    let mut total = T::zero();
    let mut correct = 0;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let label = usize::from(label);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total += sum.ln() + max - row[label];
        for (k, e) in exps.iter().enumerate() {
            let target = if k == label { T::one() } else { T::zero() };
            grad.push((*e / sum - target) * inv_batch);
        }
        let mut best = 0;
        for k in 1..classes {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    let loss = total * inv_batch;
    let grad = Tensor::new(logits.shape().to_vec(), grad)?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(NnError::NonFinite {
            layer: layer.to_string(),
        });
    }
    Ok(LossOutput {
        loss,
        grad,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f32>::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let out = softmax_cross_entropy("ce", &logits, &[0]).unwrap();
        assert!((out.loss - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(out.grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn saturated_correct_prediction() {
        let logits = Tensor::<f32>::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let out = softmax_cross_entropy("ce", &logits, &[0]).unwrap();
        assert!(out.loss.abs() < 1e-6);
        assert!(out.grad.data().iter().all(|g| g.abs() < 1e-6));
        assert_eq!(out.correct, 1);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy("ce", &logits, &[0, 3]),
            Err(NnError::LabelOutOfRange { label: 3, num_classes: 3, .. })
        ));
        assert!(matches!(
            softmax_cross_entropy("ce", &logits, &[0]),
            Err(NnError::LabelCount { .. })
        ));
    }

    #[test]
    fn matches_central_differences() {
        // Random 4x3 logits, gradient checked against a 64-bit central difference.
        let mut rng = crate::rng::SplitMix64::new(11);
        let data: Vec<f64> = (0..12).map(|_| rng.next_symmetric(3.0)).collect();
        let labels = [2u16, 0, 1, 1];
        let logits = Tensor::new(vec![4, 3], data.clone()).unwrap();
        let analytic = softmax_cross_entropy("ce", &logits.cast::<f32>(), &labels).unwrap();
        let eps = 1e-3;
        for i in 0..12 {
            let mut plus = data.clone();
            plus[i] += eps;
            let mut minus = data.clone();
            minus[i] -= eps;
            let lp = softmax_cross_entropy("ce", &Tensor::new(vec![4, 3], plus).unwrap(), &labels)
                .unwrap()
                .loss;
            let lm = softmax_cross_entropy("ce", &Tensor::new(vec![4, 3], minus).unwrap(), &labels)
                .unwrap()
                .loss;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = f64::from(analytic.grad.data()[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < 1e-3, "entry {i}: analytic {a} numeric {numeric}");
        }
    }
}
