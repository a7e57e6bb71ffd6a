use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape(format!(
            "logits must be (batch, classes), got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for batch {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok((n, k))
}

fn softmax_row(row: &[f64]) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let log_z = max + z.ln();
    (exps.into_iter().map(|e| e / z).collect(), log_z)
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed in 64-bit
/// with max subtraction.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, k) = check(logits, labels)?;
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.data()[r * k..][..k]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let (_, log_z) = softmax_row(&row);
        total += log_z - row[label];
    }
    Ok(total / n as f64)
}

/// Gradient of `upstream * loss` with respect to the logits:
/// `upstream * (softmax - onehot) / batch`.
pub fn softmax_cross_entropy_vjp<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
    upstream: f64,
) -> Result<Tensor<T>> {
    let (n, k) = check(logits, labels)?;
    let scale = upstream / n as f64;
    let mut grad = Vec::with_capacity(n * k);
    for (r, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.data()[r * k..][..k]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let (p, _) = softmax_row(&row);
        grad.extend(p.iter().enumerate().map(|(j, &pj)| {
            let target = if j == label { 1.0 } else { 0.0 };
            T::of((pj - target) * scale)
        }));
    }
    Tensor::from_vec(logits.shape(), grad)
}
