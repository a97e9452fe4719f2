use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clipped before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax over the last axis, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.all_finite() {
        return Err(Error::Numeric("softmax input contains non-finite values".into()));
    }
    let width = *logits.shape().last().unwrap_or(&0);
    let mut out = logits.clone();
    out.clear_grad();
    for row in out.data_mut().chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Batch-mean squared reconstruction error `(1/B) sum_i ||pred_i - target_i||^2`
/// and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::dimension("mse_loss", target.shape(), pred.shape()));
    }
    let b = pred.shape()[0] as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / b;
    }
    Ok((loss / b, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Number of target probabilities clipped at [`PROB_FLOOR`].
    pub clipped: usize,
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dimension(
            "cross_entropy",
            format!("({}, K)", labels.len()),
            shape,
        ));
    }
    let k = shape[1];
    let mut loss = 0.0;
    let mut clipped = 0;
    for (row, &y) in probs.rows().zip(labels) {
        if y >= k {
            return Err(Error::Input(format!("label {y} out of range for {k} classes")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("probability row sums to {sum}")));
        }
        let p = row[y];
        if p < PROB_FLOOR {
            clipped += 1;
        }
        loss -= p.max(PROB_FLOOR).ln();
    }
    Ok(CrossEntropy {
        loss: loss / labels.len() as f64,
        clipped,
    })
}

/// Cross-entropy of softmax(logits), with the gradient `(p - onehot) / B`
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(CrossEntropy, Tensor)> {
    let probs = softmax(logits)?;
    let ce = cross_entropy(&probs, labels)?;
    let b = labels.len() as f64;
    let k = logits.shape()[1];
    let mut grad = probs;
    for (i, &y) in labels.iter().enumerate() {
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g /= b);
    }
    Ok((ce, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
