use serde::{Deserialize, Serialize};

use super::metrics::check_probability_rows;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at or above this are called positive. The first
    /// point uses positive infinity.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `None` for the micro-average over all classes.
    pub class: Option<usize>,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Binary ROC curve. Thresholds are the distinct scores in descending
/// order, so tied scores produce a single diagonal step. Starts at (0, 0)
/// and ends at (1, 1); AUC is the trapezoid area under the points.
pub fn roc_curve(positive: &[bool], scores: &[f64]) -> Result<RocCurve> {
    if positive.len() != scores.len() {
        return Err(Error::Shape {
            expected: format!("{} scores", positive.len()),
            got: scores.len().to_string(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "ROC needs both classes present, got {p} positives and {n} negatives"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let threshold = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == threshold {
            if positive[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve {
        class: None,
        points,
        auc,
    })
}

/// One-vs-rest curve of `class` from probability rows.
pub fn one_vs_rest(truth: &[usize], scores: &[Vec<f64>], class: usize) -> Result<RocCurve> {
    let k = scores.first().map_or(0, Vec::len);
    check_probability_rows(scores, k)?;
    if class >= k {
        return Err(Error::InvalidArgument(format!("class {class} out of range for {k} classes")));
    }
    let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
    let column: Vec<f64> = scores.iter().map(|r| r[class]).collect();
    let mut curve = roc_curve(&positive, &column)?;
    curve.class = Some(class);
    Ok(curve)
}

/// Micro-average: every (sample, class) pair is one binary decision.
pub fn micro_average(truth: &[usize], scores: &[Vec<f64>]) -> Result<RocCurve> {
    let k = scores.first().map_or(0, Vec::len);
    check_probability_rows(scores, k)?;
    let mut positive = Vec::with_capacity(truth.len() * k);
    let mut flat = Vec::with_capacity(truth.len() * k);
    for (&t, row) in truth.iter().zip(scores) {
        for (c, &s) in row.iter().enumerate() {
            positive.push(t == c);
            flat.push(s);
        }
    }
    roc_curve(&positive, &flat)
}
