use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plot::{xy_chart, Series};
use crate::util;

pub const HISTORY_CSV_HEADER: &str = "epoch,train_acc,train_loss,val_acc,val_loss,seconds";

/// Per-epoch metrics. All lists have one entry per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.train_accuracy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_accuracy.is_empty()
    }

    pub fn push(&mut self, m: EpochMetrics) {
        self.train_accuracy.push(m.train_accuracy);
        self.train_loss.push(m.train_loss);
        self.val_accuracy.push(m.val_accuracy);
        self.val_loss.push(m.val_loss);
        self.epoch_seconds.push(m.seconds);
    }

    pub fn epoch(&self, index: usize) -> Option<EpochMetrics> {
        (index < self.len()).then(|| EpochMetrics {
            epoch: index + 1,
            train_accuracy: self.train_accuracy[index],
            train_loss: self.train_loss[index],
            val_accuracy: self.val_accuracy[index],
            val_loss: self.val_loss[index],
            seconds: self.epoch_seconds[index],
        })
    }

    pub fn last(&self) -> Option<EpochMetrics> {
        self.len().checked_sub(1).and_then(|i| self.epoch(i))
    }

    pub fn epochs(&self) -> impl Iterator<Item = EpochMetrics> + '_ {
        (0..self.len()).filter_map(|i| self.epoch(i))
    }

    pub fn total_seconds(&self) -> f64 {
        self.epoch_seconds.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for m in self.epochs() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.epoch, m.train_accuracy, m.train_loss, m.val_accuracy, m.val_loss, m.seconds
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>().join(",") != HISTORY_CSV_HEADER {
            return Err(Error::Schema(format!(
                "history header must be `{HISTORY_CSV_HEADER}`"
            )));
        }
        let mut history = Self::default();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Schema(e.to_string()))?;
            let field = |j: usize| -> Result<f64> {
                row.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("history row {} column {j} is not a number", i + 1)))
            };
            history.push(EpochMetrics {
                epoch: field(0)? as usize,
                train_accuracy: field(1)?,
                train_loss: field(2)?,
                val_accuracy: field(3)?,
                val_loss: field(4)?,
                seconds: field(5)?,
            });
        }
        Ok(history)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        util::write_file(path, self.to_csv().as_bytes())
    }

    /// Writes `accuracy.png` and `loss.png` with train and validation curves.
    pub fn write_plots(&self, dir: &Path, title: &str) -> Result<()> {
        let xs = |v: &[f64]| -> Vec<(f64, f64)> {
            v.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect()
        };
        let x_range = (1.0, self.len().max(2) as f64);
        let acc = xy_chart(
            &format!("{title} accuracy"),
            "epoch",
            "accuracy",
            &[
                Series { name: "train", points: xs(&self.train_accuracy) },
                Series { name: "validation", points: xs(&self.val_accuracy) },
            ],
            x_range,
            (0.0, 1.0),
            false,
        );
        acc.save(&dir.join("accuracy.png"))?;
        let max_loss = self
            .train_loss
            .iter()
            .chain(&self.val_loss)
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0_f64, f64::max);
        let loss = xy_chart(
            &format!("{title} loss"),
            "epoch",
            "loss",
            &[
                Series { name: "train", points: xs(&self.train_loss) },
                Series { name: "validation", points: xs(&self.val_loss) },
            ],
            x_range,
            (0.0, if max_loss > 0.0 { max_loss * 1.05 } else { 1.0 }),
            false,
        );
        loss.save(&dir.join("loss.png"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainingHistory {
        let mut h = TrainingHistory::default();
        for e in 0..3 {
            h.push(EpochMetrics {
                epoch: e + 1,
                train_accuracy: 0.5 + 0.1 * e as f64,
                train_loss: 1.0 / (e + 1) as f64,
                val_accuracy: 0.4 + 0.1 * e as f64,
                val_loss: 1.2 / (e + 1) as f64,
                seconds: 0.25,
            });
        }
        h
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let h = sample();
        let csv = h.to_csv();
        assert!(csv.starts_with(HISTORY_CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(TrainingHistory::from_csv(&csv).unwrap(), h);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(TrainingHistory::from_csv("epoch,acc\n1,0.5\n").is_err());
    }

    #[test]
    fn plots_are_written() {
        let dir = tempfile::tempdir().unwrap();
        sample().write_plots(dir.path(), "demo").unwrap();
        for f in ["accuracy.png", "loss.png"] {
            let img = image::open(dir.path().join(f)).unwrap();
            assert!(img.width() > 100 && img.height() > 100);
        }
    }
}
