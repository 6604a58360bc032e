use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Mean cross-entropy of row-major `(N, classes)` logits against integer
/// labels. Returns the loss (accumulated in f64) and its gradient with
/// respect to the logits, `(softmax - onehot) / N`.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
) -> Result<(f64, Vec<T>)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("cross_entropy"));
    }
    if logits.len() != n * classes {
        return Err(Error::shape(
            "cross_entropy",
            &[logits.len()],
            &[n, classes],
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks(classes).zip(labels) {
        let (top, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                if v.as_f64() > bv {
                    (i, v.as_f64())
                } else {
                    (bi, bv)
                }
            });
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        // ln z = ln(1 + sum of the non-maximal terms), kept accurate for confident rows
        let rest: f64 = exps
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, e)| e)
            .sum();
        loss += rest.ln_1p() - (row[label].as_f64() - max);
        for (k, e) in exps.iter().enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((e / z - target) / n as f64));
        }
    }
    Ok((loss / n as f64, grad))
}
