use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compare::ComparisonReport;
use super::confusion::{confusion_from_scores, ConfusionMatrix};
use super::metrics::accuracy_and_loss;
use super::roc::{micro_average, one_vs_rest, RocCurve};
use crate::dataset::LabelSet;
use crate::error::Result;
use crate::plot::{confusion_heatmap, xy_chart, Series};
use crate::util;

/// Held-out evaluation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    /// One-vs-rest curves for every class with both positives and negatives.
    pub roc: Vec<RocCurve>,
    pub micro_roc: Option<RocCurve>,
}

pub fn evaluate_scores(
    model: &str,
    labels: &LabelSet,
    truth: &[usize],
    scores: &[Vec<f64>],
) -> Result<EvaluationReport> {
    let (accuracy, loss) = accuracy_and_loss(truth, scores)?;
    let confusion = confusion_from_scores(truth, scores, labels.len())?.with_labels(labels)?;
    let mut roc = Vec::new();
    for class in 0..labels.len() {
        match one_vs_rest(truth, scores, class) {
            Ok(curve) => roc.push(curve),
            Err(e) => log::warn!("no ROC curve for {}: {e}", labels.name(class as u16).unwrap_or("?")),
        }
    }
    Ok(EvaluationReport {
        model: model.to_string(),
        accuracy,
        loss,
        confusion,
        roc,
        micro_roc: micro_average(truth, scores).ok(),
    })
}

/// Lowercase file-name stem for a model name.
pub fn file_stem(model: &str) -> String {
    let mut out = String::new();
    for c in model.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_matches('-');
    if trimmed.is_empty() {
        "model".into()
    } else {
        trimmed.into()
    }
}

fn roc_plot(report: &EvaluationReport, path: &Path) -> Result<()> {
    let names: Vec<String> = report
        .roc
        .iter()
        .map(|c| {
            let class = c.class.unwrap_or(0);
            let name = report.confusion.labels.get(class).map_or("?", String::as_str);
            format!("{name} (AUC {:.3})", c.auc)
        })
        .chain(report.micro_roc.iter().map(|c| format!("micro (AUC {:.3})", c.auc)))
        .collect();
    let curves = report.roc.iter().chain(report.micro_roc.iter());
    let series: Vec<Series<'_>> = curves
        .zip(&names)
        .map(|(c, name)| Series {
            name,
            points: c.points.iter().map(|p| (p.fpr, p.tpr)).collect(),
        })
        .collect();
    xy_chart(
        &format!("ROC: {}", report.model),
        "false positive rate",
        "true positive rate",
        &series,
        (0.0, 1.0),
        (0.0, 1.0),
        true,
    )
    .save(path)
}

/// Writes, per evaluated model, `<stem>_confusion.png`, `<stem>_roc.png`
/// (every class plus the micro-average) and `<stem>_evaluation.json`, and
/// once `comparison.csv` and `comparison.html`. Returns the written paths.
pub fn render_report(
    comparison: &ComparisonReport,
    evaluations: &[EvaluationReport],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    util::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for report in evaluations {
        let stem = file_stem(&report.model);
        let heat = out_dir.join(format!("{stem}_confusion.png"));
        confusion_heatmap(
            &format!("Confusion: {}", report.model),
            &report.confusion.labels,
            &report.confusion.counts,
        )
        .save(&heat)?;
        written.push(heat);

        let roc = out_dir.join(format!("{stem}_roc.png"));
        roc_plot(report, &roc)?;
        written.push(roc);

        let json = out_dir.join(format!("{stem}_evaluation.json"));
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        util::write_file(&json, text.as_bytes())?;
        written.push(json);
    }
    let csv = out_dir.join("comparison.csv");
    util::write_file(&csv, comparison.to_csv().as_bytes())?;
    written.push(csv);
    let html = out_dir.join("comparison.html");
    util::write_file(&html, comparison.to_html().as_bytes())?;
    written.push(html);
    Ok(written)
}
