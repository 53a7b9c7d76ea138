use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on score rows summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Index of the largest score; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `-ln(max(p_label, floor))`.
pub fn sample_cross_entropy(row: &[f64], label: usize) -> f64 {
    0.0 - row[label].max(PROBABILITY_FLOOR).ln()
}

/// Checks that every row has `k` finite entries in `[0, 1]` summing to one.
pub fn check_probability_rows(scores: &[Vec<f64>], k: usize) -> Result<()> {
    for (i, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Shape {
                expected: format!("{k} scores per row"),
                got: format!("{} in row {i}", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite() || *v < -ROW_SUM_TOLERANCE || *v > 1.0 + ROW_SUM_TOLERANCE) {
            return Err(Error::InvalidArgument(format!("row {i} holds a value outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Top-1 accuracy and mean categorical cross-entropy of probability rows.
pub fn accuracy_and_loss(labels: &[usize], scores: &[Vec<f64>]) -> Result<(f64, f64)> {
    if labels.len() != scores.len() {
        return Err(Error::Shape {
            expected: format!("{} score rows", labels.len()),
            got: scores.len().to_string(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let k = scores[0].len();
    check_probability_rows(scores, k)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let n = labels.len() as f64;
    let correct = labels
        .iter()
        .zip(scores)
        .filter(|(&l, row)| argmax(row) == l)
        .count();
    let loss: f64 = labels
        .iter()
        .zip(scores)
        .map(|(&l, row)| sample_cross_entropy(row, l))
        .sum();
    Ok((correct as f64 / n, loss / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_predictor_loss_is_ln_k() {
        let scores = vec![vec![0.2; 5]; 10];
        let labels: Vec<usize> = (0..10).map(|i| i % 5).collect();
        let (_, loss) = accuracy_and_loss(&labels, &scores).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn floor_bounds_the_loss() {
        let (acc, loss) = accuracy_and_loss(&[0], &[vec![0.0, 1.0]]).unwrap();
        assert_eq!(acc, 0.0);
        assert!((loss - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(accuracy_and_loss(&[0], &[vec![0.5, 0.6]]).is_err());
        assert!(accuracy_and_loss(&[2], &[vec![0.5, 0.5]]).is_err());
        assert!(accuracy_and_loss(&[0, 1], &[vec![0.5, 0.5]]).is_err());
        assert!(accuracy_and_loss(&[0], &[vec![f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
