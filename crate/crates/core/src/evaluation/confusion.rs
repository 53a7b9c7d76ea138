use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use crate::dataset::LabelSet;
use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Class names in label order; indices as strings when unnamed.
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn with_labels(mut self, labels: &LabelSet) -> Result<Self> {
        if labels.len() != self.num_classes() {
            return Err(Error::Shape {
                expected: format!("{} labels", self.num_classes()),
                got: labels.len().to_string(),
            });
        }
        self.labels = labels.names();
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let labels = &self.labels;
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(labels.iter().cloned());
        let mut rows = vec![header];
        for (name, row) in labels.iter().zip(&self.counts) {
            let mut r = vec![name.clone()];
            r.extend(row.iter().map(u64::to_string));
            rows.push(r);
        }
        for r in rows {
            writer.write_record(&r).expect("in-memory csv write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", truth.len()),
            got: predicted.len().to_string(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class index out of range for {num_classes} classes: true {t}, predicted {p}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: (0..num_classes).map(|i| i.to_string()).collect(),
        counts,
    })
}

/// Confusion matrix of top-1 predictions from score rows.
pub fn confusion_from_scores(truth: &[usize], scores: &[Vec<f64>], num_classes: usize) -> Result<ConfusionMatrix> {
    let predicted: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
    confusion_matrix(truth, &predicted, num_classes)
}
