//! Confusion matrices, one-vs-rest ROC curves, the cross-model comparison
//! table and their rendered figures.

mod compare;
mod confusion;
mod metrics;
mod report;
mod roc;

pub use compare::{compare_models, ComparisonReport, ComparisonRow, TestMetrics, COMPARISON_CSV_HEADER};
pub use confusion::{confusion_from_scores, confusion_matrix, ConfusionMatrix};
pub use metrics::{
    accuracy_and_loss, argmax, check_probability_rows, sample_cross_entropy, PROBABILITY_FLOOR,
    ROW_SUM_TOLERANCE,
};
pub use report::{evaluate_scores, file_stem, render_report, EvaluationReport};
pub use roc::{micro_average, one_vs_rest, roc_curve, RocCurve, RocPoint};
