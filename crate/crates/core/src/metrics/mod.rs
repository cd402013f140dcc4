//! Evaluation metrics, all derived from one confusion matrix.
//!
//! Conventions for degenerate cells: a class nobody predicted has precision
//! 0, and a class with `P + R = 0` has F1 0. Values are fractions in `[0, 1]`
//! (adjusted balanced accuracy can go negative); percentage formatting is left
//! to the caller.

mod report;

pub use report::{evaluate, ClassStats, EvalReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("sample {index}: label {label} out of range for {k} classes")]
    LabelOutOfRange { index: usize, label: usize, k: usize },
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("confusion matrix holds no samples")]
    EmptyMatrix,
    #[error("class {0} has no true samples")]
    ZeroSupportClass(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("confusion matrix must be square with at least one class")]
    BadShape,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) || class_names.len() != k {
            return Err(MetricsError::BadShape);
        }
        Ok(Self {
            k,
            counts: rows.into_iter().flatten().collect(),
            class_names,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.rows().nth(class).map_or(0, |r| r.iter().sum())
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, class)).sum()
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted = self.predicted_count(class);
        if predicted == 0 {
            0.0
        } else {
            self.get(class, class) as f64 / predicted as f64
        }
    }

    pub fn recall(&self, class: usize) -> f64 {
        let support = self.support(class);
        if support == 0 {
            0.0
        } else {
            self.get(class, class) as f64 / support as f64
        }
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Same matrix with class indices relabeled: class `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut counts = vec![0; self.k * self.k];
        let mut names = vec![String::new(); self.k];
        for t in 0..self.k {
            names[perm[t]] = self.class_names[t].clone();
            for p in 0..self.k {
                counts[perm[t] * self.k + perm[p]] = self.get(t, p);
            }
        }
        Self {
            k: self.k,
            counts,
            class_names: names,
        }
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if k == 0 {
        return Err(MetricsError::BadShape);
    }
    let mut counts = vec![0u64; k * k];
    for (index, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        for label in [t, p] {
            if label >= k {
                return Err(MetricsError::LabelOutOfRange { index, label, k });
            }
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix {
        k,
        counts,
        class_names: (0..k).map(|i| i.to_string()).collect(),
    })
}

fn nonempty(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(MetricsError::EmptyMatrix),
        n => Ok(n as f64),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)?;
    let correct: u64 = (0..cm.k).map(|i| cm.get(i, i)).sum();
    Ok(correct as f64 / n)
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    Ok((0..cm.k).map(|i| cm.f1(i)).sum::<f64>() / cm.k as f64)
}

pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let n = nonempty(cm)?;
    Ok((0..cm.k).map(|i| cm.support(i) as f64 / n * cm.f1(i)).sum())
}

/// Mean per-class recall, rescaled so chance is 0 and perfect is 1.
pub fn adjusted_balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    if let Some(c) = (0..cm.k).find(|&c| cm.support(c) == 0) {
        return Err(MetricsError::ZeroSupportClass(c));
    }
    let k = cm.k as f64;
    let balanced = (0..cm.k).map(|i| cm.recall(i)).sum::<f64>() / k;
    let chance = 1.0 / k;
    Ok((balanced - chance) / (1.0 - chance))
}

/// Majority class of `train_labels`; ties go to the lowest index.
pub fn majority_class(train_labels: &[usize]) -> Result<usize> {
    let k = train_labels.iter().max().ok_or(MetricsError::EmptyInput)? + 1;
    let mut counts = vec![0usize; k];
    for &c in train_labels {
        counts[c] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// ZeroR: predict the training majority class for every evaluated sample.
pub fn zero_rule_predict(train_labels: &[usize], n_eval: usize) -> Result<Vec<usize>> {
    Ok(vec![majority_class(train_labels)?; n_eval])
}
