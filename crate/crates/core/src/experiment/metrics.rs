//! Attribute-prediction metrics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Accuracy,
    KendallTau,
}

/// Fraction of positions where `pred == truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "accuracy needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Kendall's tau-b by enumerating every pair.
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<f64> {
    let n = pred.len();
    if n != truth.len() || n < 2 {
        return Err(Error::Data(format!(
            "kendall tau needs equal lengths >= 2, got {} and {}",
            n,
            truth.len()
        )));
    }
    let (mut concordant, mut discordant, mut tied_pred, mut tied_truth) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (pred[i] - pred[j]).partial_cmp(&0.0);
            let b = (truth[i] - truth[j]).partial_cmp(&0.0);
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::Numeric("kendall tau on non-finite values".into()));
            };
            let (a, b) = (a as i8, b as i8);
            if a == 0 {
                tied_pred += 1;
            }
            if b == 0 {
                tied_truth += 1;
            }
            if a != 0 && b != 0 {
                if a == b {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tied_pred) as f64 * (n0 - tied_truth) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Numeric(
            "kendall tau undefined: one side is entirely tied".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// `train - test`; negative values are returned as they are.
pub fn generalization_gap(train: (MetricKind, f64), test: (MetricKind, f64)) -> Result<f64> {
    if train.0 != test.0 {
        return Err(Error::Data(format!(
            "gap between {:?} and {:?}",
            train.0, test.0
        )));
    }
    Ok(train.1 - test.1)
}
