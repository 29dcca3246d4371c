use crate::error::{Error, Result};

/// Probability floor applied before taking logs in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("softmax: entry {i} is not finite")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log Σ exp(x)` without overflow. Caller guarantees a non-empty slice.
pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−log p[label]` with `p` clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probabilities: &[f64], label: usize) -> Result<f64> {
    let p = probabilities.get(label).ok_or_else(|| {
        Error::invalid(format!(
            "label {label} out of range for {} classes",
            probabilities.len()
        ))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|b| b.0)
}
