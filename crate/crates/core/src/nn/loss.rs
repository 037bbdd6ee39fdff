use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Per-class weights `n / (K n_c)` over the `K` classes present; absent
/// classes get weight 0.
pub fn inverse_frequency_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                labels.len() as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Softmax cross-entropy over the rows in `mask`, weighted per true class and
/// averaged over the mask. `labels[i]` is the class of row `mask[i]`.
///
/// Returns the loss and its gradient with respect to every logit (zero on
/// unmasked rows).
pub fn cross_entropy_masked(
    logits: ArrayView2<f64>,
    labels: &[usize],
    mask: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy mask is empty".into()));
    }
    if labels.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} masked rows",
            labels.len(),
            mask.len()
        )));
    }
    let classes = logits.ncols();
    if class_weights.len() != classes {
        return Err(Error::Dimension(format!(
            "{} class weights for {classes} classes",
            class_weights.len()
        )));
    }
    let scale = 1.0 / mask.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (&row, &label) in mask.iter().zip(labels) {
        if row >= logits.nrows() || label >= classes {
            return Err(Error::InvalidArgument(format!(
                "masked row {row} or label {label} out of range"
            )));
        }
        let z = logits.row(row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let w = class_weights[label];
        loss += w * (log_norm - z[label]);
        for c in 0..classes {
            let p = (z[c] - log_norm).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad[[row, c]] = w * scale * (p - target);
        }
    }
    Ok((loss * scale, grad))
}

/// Binary cross-entropy on pre-sigmoid scores (`n x 1`), averaged over rows,
/// with weights `(negative, positive)` per target class. Targets are 0 or 1.
pub fn bce_with_logits(scores: ArrayView2<f64>, targets: &[f64], weights: (f64, f64)) -> Result<(f64, Array2<f64>)> {
    if scores.ncols() != 1 || scores.nrows() != targets.len() {
        return Err(Error::Dimension(format!(
            "scores {:?} vs {} targets",
            scores.dim(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets".into()));
    }
    let scale = 1.0 / targets.len() as f64;
    let mut grad = Array2::zeros(scores.dim());
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let t = scores[[i, 0]];
        let w = if y > 0.5 { weights.1 } else { weights.0 };
        // -[y ln s(t) + (1-y) ln(1-s(t))] = softplus(t) - y t
        loss += w * (softplus(t) - y * t);
        grad[[i, 0]] = w * scale * (sigmoid(t) - y);
    }
    Ok((loss * scale, grad))
}
