use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use super::{TrainError, Weighting};
use crate::Real;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-class loss weights.
///
/// Uniform weighting uses all ones, which makes the weighted loss reduce to
/// the plain mean cross-entropy bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassWeightVector {
    pub weights: Vec<f64>,
}

impl ClassWeightVector {
    pub fn uniform(k: usize) -> Self {
        Self { weights: vec![1.0; k] }
    }

    pub fn for_mode(mode: Weighting, class_counts: &[usize]) -> Result<Self, TrainError> {
        match mode {
            Weighting::Uniform => Ok(Self::uniform(class_counts.len())),
            Weighting::Inverse => inverse_frequency_weights(class_counts),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

/// `w(c) = (1/n_c) / Σ_j 1/n_j`.
pub fn inverse_frequency_weights(class_counts: &[usize]) -> Result<ClassWeightVector, TrainError> {
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(TrainError::ZeroCount(c));
    }
    let inv: Vec<f64> = class_counts.iter().map(|&n| 1.0 / n as f64).collect();
    let total: f64 = inv.iter().sum();
    Ok(ClassWeightVector {
        weights: inv.into_iter().map(|w| w / total).collect(),
    })
}

fn clamped_log<T: Real>(p: T) -> T {
    p.max(T::lit(LOG_CLAMP)).ln()
}

fn check_batch<T: Real>(probs: &ArrayView2<'_, T>, targets: &[usize]) -> Result<(), TrainError> {
    if probs.nrows() != targets.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} probability rows for {} targets",
            probs.nrows(),
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= probs.ncols()) {
        return Err(TrainError::ShapeMismatch(format!(
            "target {t} out of range for {} classes",
            probs.ncols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of the target classes.
pub fn cross_entropy<T: Real>(probs: ArrayView2<'_, T>, targets: &[usize]) -> Result<T, TrainError> {
    check_batch(&probs, targets)?;
    let mut sum = T::zero();
    for (row, &t) in probs.outer_iter().zip(targets) {
        sum += clamped_log(row[t]);
    }
    Ok(-(sum / T::lit(targets.len() as f64)))
}

/// Gradient on the logits of one sample: `(p - onehot) * w / Σw`.
pub(crate) fn sample_logit_grad<T: Real>(probs: ArrayView1<'_, T>, target: usize, scale: T) -> ndarray::Array1<T> {
    let mut g = probs.to_owned();
    g[target] -= T::one();
    g.mapv_inplace(|x| x * scale);
    g
}

/// Weighted cross-entropy normalized by the batch's total weight, and its
/// gradient on the logits (through the softmax).
pub fn weighted_cross_entropy<T: Real>(
    probs: ArrayView2<'_, T>,
    targets: &[usize],
    weights: &ClassWeightVector,
) -> Result<(T, Array2<T>), TrainError> {
    check_batch(&probs, targets)?;
    if weights.len() != probs.ncols() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.ncols()
        )));
    }
    let w = |t: usize| T::lit(weights.weights[t]);
    let mut num = T::zero();
    let mut den = T::zero();
    for (row, &t) in probs.outer_iter().zip(targets) {
        num += w(t) * clamped_log(row[t]);
        den += w(t);
    }
    let loss = -(num / den);
    let mut grad = Array2::zeros(probs.raw_dim());
    for ((row, &t), mut g) in probs.outer_iter().zip(targets).zip(grad.outer_iter_mut()) {
        g.assign(&sample_logit_grad(row, t, w(t) / den));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::softmax;
    use ndarray::{array, Array1};

    #[test]
    fn inverse_weights() {
        assert_eq!(inverse_frequency_weights(&[10, 10]).unwrap().weights, vec![0.5, 0.5]);
        let w = inverse_frequency_weights(&[1, 3]).unwrap().weights;
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let w = inverse_frequency_weights(&[1, 1, 2]).unwrap().weights;
        for (a, b) in w.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(matches!(inverse_frequency_weights(&[3, 0]), Err(TrainError::ZeroCount(1))));
    }

    #[test]
    fn loss_examples() {
        let (l, _) = weighted_cross_entropy(array![[0.0f64, 1.0]].view(), &[1], &ClassWeightVector::uniform(2)).unwrap();
        assert_eq!(l, 0.0);

        let p = array![[0.5f64, 0.5], [0.75, 0.25]];
        let (l, _) = weighted_cross_entropy(p.view(), &[0, 1], &ClassWeightVector::uniform(2)).unwrap();
        assert!((l - 1.039721).abs() < 1e-6);

        let w = ClassWeightVector { weights: vec![0.75, 0.25] };
        let p = array![[0.5f64, 0.5], [0.5, 0.5]];
        let (l, _) = weighted_cross_entropy(p.view(), &[0, 1], &w).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn clamps_zero_probability() {
        let (l, _) = weighted_cross_entropy(array![[1.0f64, 0.0]].view(), &[1], &ClassWeightVector::uniform(2)).unwrap();
        assert!((l - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences_through_softmax() {
        let logits = array![[0.3f64, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let targets = [2, 0];
        let w = ClassWeightVector { weights: vec![0.2, 0.5, 0.3] };
        let loss_of = |z: &Array2<f64>| {
            let p = Array2::from_shape_fn(z.raw_dim(), |(i, j)| softmax(z.row(i))[j]);
            weighted_cross_entropy(p.view(), &targets, &w).unwrap().0
        };
        let p = Array2::from_shape_fn(logits.raw_dim(), |(i, j)| softmax(logits.row(i))[j]);
        let (_, grad) = weighted_cross_entropy(p.view(), &targets, &w).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)] {
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up[idx] += h;
            down[idx] -= h;
            let fd = (loss_of(&up) - loss_of(&down)) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-5, "{idx:?}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn rejects_mismatched_batches() {
        let p = array![[0.5f64, 0.5]];
        assert!(weighted_cross_entropy(p.view(), &[0, 1], &ClassWeightVector::uniform(2)).is_err());
        assert!(weighted_cross_entropy(p.view(), &[2], &ClassWeightVector::uniform(2)).is_err());
        assert!(weighted_cross_entropy(p.view(), &[0], &ClassWeightVector::uniform(3)).is_err());
        let _ = Array1::<f64>::zeros(1);
    }
}
