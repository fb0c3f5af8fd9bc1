use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N, K]` logits, stabilized by subtracting the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax", "logits [N, K]")?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / total)));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// Returns the scalar loss and the probabilities needed for the gradient
/// `(softmax − onehot) / N`.
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, k] = logits.dims2("softmax_cross_entropy", "logits [N, K]")?;
    if labels.len() != n {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("batch axis (0) has {n} rows but {} labels were given", labels.len()),
        ));
    }
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Validation(format!(
            "label {bad} at position {i} is outside [0, {k})"
        )));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let shifted: Vec<f64> = row.iter().map(|v| v.to_f64() - max).collect();
        let log_norm = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        total += log_norm - shifted[label];
        probs.extend(shifted.iter().map(|s| T::from_f64((s - log_norm).exp())));
    }
    let loss = Tensor::scalar(T::from_f64(total / n as f64));
    Ok((loss, Tensor::from_parts(vec![n, k], probs)))
}

pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    grad_loss: T,
) -> Tensor<T> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let scale = grad_loss / T::from_f64(n as f64);
    let mut dx: Vec<T> = probs.data().iter().map(|&p| p * scale).collect();
    for (row, &label) in labels.iter().enumerate() {
        dx[row * k + label] -= scale;
    }
    Tensor::from_parts(vec![n, k], dx)
}
