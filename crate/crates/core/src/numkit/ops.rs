use crate::error::{Error, Result};

/// Floor added inside the log so a zero probability yields a large, finite loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (row max subtracted before exponentiation).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("softmax input is not finite".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-ln(p[label] + LOG_FLOOR)`.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    if label >= p.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            p.len()
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(-(p[label] + LOG_FLOOR).ln())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x >= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
