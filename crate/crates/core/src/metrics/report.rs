use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{
    accuracy, adjusted_balanced_accuracy, confusion_matrix, macro_f1, weighted_f1, ConfusionMatrix,
    MetricsError,
};
use crate::adapter::{predict, AdapterParams, ClassifierHead};
use crate::dataio::{EmbeddingSet, LabelTable};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// `None` when some class has no true samples in the evaluated set.
    pub adjusted_balanced_accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassStats>,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self, MetricsError> {
        let aba = match adjusted_balanced_accuracy(&confusion) {
            Ok(v) => Some(v),
            Err(MetricsError::ZeroSupportClass(_)) => None,
            Err(e) => return Err(e),
        };
        let per_class = (0..confusion.n_classes())
            .map(|c| ClassStats {
                name: confusion.class_names[c].clone(),
                precision: confusion.precision(c),
                recall: confusion.recall(c),
                f1: confusion.f1(c),
                support: confusion.support(c),
            })
            .collect();
        Ok(Self {
            n_samples: confusion.total(),
            accuracy: accuracy(&confusion)?,
            macro_f1: macro_f1(&confusion)?,
            weighted_f1: weighted_f1(&confusion)?,
            adjusted_balanced_accuracy: aba,
            per_class,
            confusion,
        })
    }

    /// Flat key-value document of the headline metrics (fractions).
    pub fn metrics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "adjusted_balanced_accuracy": self.adjusted_balanced_accuracy,
        })
    }

    /// Confusion matrix with a header row and column of class names.
    pub fn confusion_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_owned()];
        header.extend(self.confusion.class_names.iter().cloned());
        w.write_record(&header).unwrap();
        for (name, row) in self.confusion.class_names.iter().zip(self.confusion.rows()) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn per_class_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for stats in &self.per_class {
            w.serialize(stats).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn write_files(&self, dir: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(&self.metrics_json()).expect("serializable");
        json.push('\n');
        File::create(dir.join("metrics.json"))?.write_all(json.as_bytes())?;
        File::create(dir.join("confusion.csv"))?.write_all(self.confusion_csv().as_bytes())?;
        File::create(dir.join("per_class.csv"))?.write_all(self.per_class_csv().as_bytes())?;
        Ok(())
    }
}

/// Scores the adapter on every labeled image (view 0, eval mode).
pub fn evaluate<T: Real>(
    params: &AdapterParams<T>,
    head: &ClassifierHead<T>,
    embeddings: &EmbeddingSet,
    labels: &LabelTable,
    class_names: &[String],
) -> Result<EvalReport, crate::Error> {
    let rows = labels.resolve(embeddings)?;
    let images: Vec<usize> = rows.iter().map(|&(i, _)| i).collect();
    let truth: Vec<usize> = rows.iter().map(|&(_, c)| c).collect();
    let predicted = predict(params, head, embeddings, &images)?;
    let mut cm = confusion_matrix(&truth, &predicted, head.n_classes())?;
    cm.class_names = class_names.to_vec();
    Ok(EvalReport::from_confusion(cm)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        let cm = ConfusionMatrix::from_counts(
            vec![vec![8, 2], vec![1, 1]],
            vec!["true".into(), "false".into()],
        )
        .unwrap();
        EvalReport::from_confusion(cm).unwrap()
    }

    #[test]
    fn csv_exports() {
        let r = report();
        assert_eq!(r.confusion_csv(), "true\\predicted,true,false\ntrue,8,2\nfalse,1,1\n");
        let per = r.per_class_csv();
        let mut lines = per.lines();
        assert_eq!(lines.next(), Some("name,precision,recall,f1,support"));
        assert!(lines.next().unwrap().starts_with("true,0.888"));
    }

    #[test]
    fn json_is_flat() {
        let v = report().metrics_json();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 5);
        assert_eq!(obj["accuracy"].as_f64().unwrap(), 0.75);
    }

    #[test]
    fn missing_class_leaves_aba_undefined() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 1], vec![0, 0]], vec!["a".into(), "b".into()]).unwrap();
        let r = EvalReport::from_confusion(cm).unwrap();
        assert_eq!(r.adjusted_balanced_accuracy, None);
        assert!(r.metrics_json()["adjusted_balanced_accuracy"].is_null());
    }
}
