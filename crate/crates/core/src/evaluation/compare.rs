use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::TrainingHistory;

pub const COMPARISON_CSV_HEADER: &str =
    "model,train_accuracy_pct,train_loss_pct,test_accuracy_pct,test_loss_pct,best";

/// Held-out metrics of one model, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub accuracy: f64,
    pub loss: f64,
}

/// One table row. Metrics are percentages rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub train_accuracy_pct: f64,
    pub train_loss_pct: f64,
    pub test_accuracy_pct: f64,
    pub test_loss_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Index into `rows` of the best model.
    pub best: usize,
}

fn pct(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl ComparisonRow {
    pub fn new(
        model: impl Into<String>,
        train_accuracy: f64,
        train_loss: f64,
        test: TestMetrics,
    ) -> Self {
        Self {
            model: model.into(),
            train_accuracy_pct: pct(train_accuracy),
            train_loss_pct: pct(train_loss),
            test_accuracy_pct: pct(test.accuracy),
            test_loss_pct: pct(test.loss),
        }
    }

    /// A row from values already expressed in percent.
    pub fn from_percentages(model: impl Into<String>, values: [f64; 4]) -> Self {
        Self {
            model: model.into(),
            train_accuracy_pct: round2(values[0]),
            train_loss_pct: round2(values[1]),
            test_accuracy_pct: round2(values[2]),
            test_loss_pct: round2(values[3]),
        }
    }

    fn values(&self) -> [f64; 4] {
        [
            self.train_accuracy_pct,
            self.train_loss_pct,
            self.test_accuracy_pct,
            self.test_loss_pct,
        ]
    }
}

/// Highest test accuracy wins; equal accuracy goes to the lower test loss,
/// then to the lexicographically smaller name.
fn better(a: &ComparisonRow, b: &ComparisonRow) -> Ordering {
    b.test_accuracy_pct
        .total_cmp(&a.test_accuracy_pct)
        .then(a.test_loss_pct.total_cmp(&b.test_loss_pct))
        .then(a.model.cmp(&b.model))
}

impl ComparisonReport {
    pub fn from_rows(rows: Vec<ComparisonRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("comparison needs at least one model".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.values().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("model {} has non-finite metrics", r.model)));
        }
        let best = (0..rows.len())
            .min_by(|&a, &b| better(&rows[a], &rows[b]))
            .expect("non-empty");
        Ok(Self { rows, best })
    }

    pub fn best_row(&self) -> &ComparisonRow {
        &self.rows[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_CSV_HEADER);
        out.push('\n');
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for (i, r) in self.rows.iter().enumerate() {
            let mut fields = vec![r.model.clone()];
            fields.extend(r.values().iter().map(|v| format!("{v:.2}")));
            fields.push(if i == self.best { "true" } else { "false" }.into());
            writer.write_record(&fields).expect("in-memory csv write");
        }
        out.push_str(&String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("utf-8 csv"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != COMPARISON_CSV_HEADER {
            return Err(Error::Schema(format!("comparison header must be `{COMPARISON_CSV_HEADER}`")));
        }
        let mut rows = Vec::new();
        let mut marked = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("row {} column {j} is not a number", i + 1)))
            };
            let values = [num(1)?, num(2)?, num(3)?, num(4)?];
            rows.push(ComparisonRow::from_percentages(rec.get(0).unwrap_or_default(), values));
            match rec.get(5) {
                Some("true") => marked.push(i),
                Some("false") => {}
                other => return Err(Error::Schema(format!("row {} best flag {other:?}", i + 1))),
            }
        }
        let report = Self::from_rows(rows)?;
        if marked != [report.best] {
            return Err(Error::Schema(format!(
                "best marker on rows {marked:?} disagrees with the selection rule (row {})",
                report.best
            )));
        }
        Ok(report)
    }

    /// An HTML `<table>` fragment in the column layout of the CSV.
    pub fn to_html(&self) -> String {
        let mut out = String::from("<table class=\"model-comparison\">\n  <thead>\n    <tr><th>Model Name</th><th>Training Accuracy</th><th>Training Loss</th><th>Test Accuracy</th><th>Test Loss</th></tr>\n  </thead>\n  <tbody>\n");
        for (i, r) in self.rows.iter().enumerate() {
            let class = if i == self.best { " class=\"best\"" } else { "" };
            let _ = writeln!(
                out,
                "    <tr{class}><td>{}</td><td>{:.2}</td><td>{:.2}</td><td>{:.2}</td><td>{:.2}</td></tr>",
                html_escape(&r.model),
                r.train_accuracy_pct,
                r.train_loss_pct,
                r.test_accuracy_pct,
                r.test_loss_pct
            );
        }
        out.push_str("  </tbody>\n  <tfoot>\n    <tr><td colspan=\"5\">Values in percent. Loss is categorical cross-entropy multiplied by 100.</td></tr>\n  </tfoot>\n</table>\n");
        out
    }
}

pub(crate) fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One entry per model: final-epoch training metrics plus test metrics.
pub fn compare_models(reports: &[(String, TrainingHistory, TestMetrics)]) -> Result<ComparisonReport> {
    let rows = reports
        .iter()
        .map(|(name, history, test)| {
            let last = history
                .last()
                .ok_or_else(|| Error::InvalidArgument(format!("model {name} has an empty history")))?;
            Ok(ComparisonRow::new(name.clone(), last.train_accuracy, last.train_loss, *test))
        })
        .collect::<Result<Vec<_>>>()?;
    ComparisonReport::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, v: [f64; 4]) -> ComparisonRow {
        ComparisonRow::from_percentages(name, v)
    }

    #[test]
    fn reference_rows_pick_vgg16() {
        let r = ComparisonReport::from_rows(vec![
            row("VGG16", [98.94, 0.98, 99.0, 0.55]),
            row("Xception", [99.68, 1.63, 96.64, 17.28]),
        ])
        .unwrap();
        assert_eq!(r.best_row().model, "VGG16");
    }

    #[test]
    fn single_model_is_best() {
        let r = ComparisonReport::from_rows(vec![row("only", [1.0, 2.0, 3.0, 4.0])]).unwrap();
        assert_eq!(r.best, 0);
    }

    #[test]
    fn ties_go_to_lower_loss() {
        let r = ComparisonReport::from_rows(vec![
            row("a", [90.0, 1.0, 95.0, 5.0]),
            row("b", [90.0, 1.0, 95.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(r.best_row().model, "b");
    }

    #[test]
    fn empty_and_non_finite_are_rejected() {
        assert!(ComparisonReport::from_rows(vec![]).is_err());
        assert!(ComparisonReport::from_rows(vec![row("x", [f64::NAN, 0.0, 0.0, 0.0])]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let r = ComparisonReport::from_rows(vec![
            ComparisonRow::new("ResNet50", 0.91234, 0.3, TestMetrics { accuracy: 0.87655, loss: 0.412 }),
            row("VGG16, tuned", [98.94, 0.98, 99.0, 0.55]),
        ])
        .unwrap();
        let csv = r.to_csv();
        assert!(csv.contains("ResNet50,91.23,30.00,87.66,41.20,false"));
        assert!(csv.contains("\"VGG16, tuned\",98.94,0.98,99.00,0.55,true"));
        assert_eq!(ComparisonReport::from_csv(&csv).unwrap(), r);
    }

    #[test]
    fn html_marks_best_row() {
        let r = ComparisonReport::from_rows(vec![row("<a>", [1.0, 1.0, 1.0, 1.0])]).unwrap();
        let html = r.to_html();
        assert!(html.contains("<tr class=\"best\"><td>&lt;a&gt;</td><td>1.00</td>"));
    }
}
