use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over classes present in predictions or truth.
    Macro,
    /// Pooled counts; equals accuracy for single-label data.
    Micro,
    /// Class 1 is the positive class.
    Binary,
}

impl std::fmt::Display for Averaging {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
            Averaging::Binary => "binary",
        })
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        // Nothing predicted and nothing to find.
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn f1_score(preds: &[usize], truth: &[usize], averaging: Averaging) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("F1 of an empty set"));
    }
    let counts = |c: usize| {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&p, &t) in preds.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        (tp, fp, fn_)
    };
    Ok(match averaging {
        Averaging::Binary => {
            let (tp, fp, fn_) = counts(1);
            f1_from_counts(tp, fp, fn_)
        }
        Averaging::Micro => {
            let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
            hits as f64 / preds.len() as f64
        }
        Averaging::Macro => {
            let classes = preds.iter().chain(truth).copied().max().unwrap_or(0) + 1;
            let mut total = 0.0;
            let mut present = 0;
            for c in 0..classes {
                let (tp, fp, fn_) = counts(c);
                if tp + fp + fn_ == 0 {
                    continue;
                }
                total += f1_from_counts(tp, fp, fn_);
                present += 1;
            }
            total / present as f64
        }
    })
}

/// Row-wise argmax; exact ties go to the lowest column.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
