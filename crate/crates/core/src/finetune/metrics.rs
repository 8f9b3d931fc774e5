//! Macro-averaged F1.

use crate::error::{Error, Result};

/// Per-class F1 with classes whose precision or recall denominator is empty
/// scored 0.
pub fn per_class_f1(predictions: &[usize], gold: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "f1 needs equal non-empty inputs, got {} predictions and {} labels",
            predictions.len(),
            gold.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut actual = vec![0usize; n_classes];
    for (&p, &y) in predictions.iter().zip(gold) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::Index {
                what: "class label",
                index: p.max(y),
                bound: n_classes,
            });
        }
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|c| {
            if predicted[c] == 0 || actual[c] == 0 || tp[c] == 0 {
                return 0.0;
            }
            let precision = tp[c] as f64 / predicted[c] as f64;
            let recall = tp[c] as f64 / actual[c] as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .collect())
}

pub fn macro_f1(predictions: &[usize], gold: &[usize], n_classes: usize) -> Result<f64> {
    let per_class = per_class_f1(predictions, gold, n_classes)?;
    Ok(per_class.iter().sum::<f64>() / n_classes as f64)
}
