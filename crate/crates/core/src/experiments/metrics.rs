use crate::error::{Error, Result};

/// Relation-extraction micro-F1: NA decisions count neither as predicted
/// positives nor as gold positives.
pub fn micro_f1<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    golds: &[T],
    na_label: Option<&str>,
) -> Result<f64> {
    micro_f1_with(predictions, golds, na_label, false)
}

/// As [`micro_f1`]; with `include_na` the NA label is scored like any other.
pub fn micro_f1_with<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    golds: &[T],
    na_label: Option<&str>,
    include_na: bool,
) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let is_na = |s: &str| !include_na && na_label == Some(s);
    let (mut tp, mut predicted, mut gold) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if !is_na(p) {
            predicted += 1;
        }
        if !is_na(g) {
            gold += 1;
            if p == g {
                tp += 1;
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / gold as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean and population standard deviation (divides by `n`).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
