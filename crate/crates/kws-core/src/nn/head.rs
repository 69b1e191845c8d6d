//! Classifier head: bias-free linear layer into a softmax with
//! cross-entropy, numerically stabilized by max-subtraction.

use super::{expect_rank, Tensor};
use crate::error::{Error, Result};

fn logits_f64(input: &Tensor, weights: &Tensor) -> Result<Vec<f64>> {
    expect_rank("linear_softmax", input, 2)?;
    expect_rank("linear_softmax", weights, 2)?;
    let (n, c) = (input.dim(0), input.dim(1));
    let (wc, k) = (weights.dim(0), weights.dim(1));
    if c != wc {
        return Err(Error::ShapeMismatch {
            op: "linear_softmax".into(),
            detail: format!("input features (dim 1) = {c} but weights expect {wc}"),
        });
    }
    let mut logits = vec![0.0f64; n * k];
    for row in 0..n {
        let x = &input.data[row * c..(row + 1) * c];
        for col in 0..k {
            let mut acc = 0.0f64;
            for (i, &xv) in x.iter().enumerate() {
                acc += xv as f64 * weights.data[i * k + col] as f64;
            }
            logits[row * k + col] = acc;
        }
    }
    Ok(logits)
}

fn softmax_rows(logits: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut probs = vec![0.0f64; n * k];
    for row in 0..n {
        let l = &logits[row * k..(row + 1) * k];
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        let p = &mut probs[row * k..(row + 1) * k];
        for (pi, &li) in p.iter_mut().zip(l) {
            *pi = (li - max).exp();
            sum += *pi;
        }
        for pi in p.iter_mut() {
            *pi /= sum;
        }
    }
    probs
}

/// Class probabilities for a batch: softmax(input @ weights), shape (N, K).
pub fn linear_softmax(input: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (n, k) = (input.dim(0), weights.dim(1));
    let logits = logits_f64(input, weights)?;
    let probs = softmax_rows(&logits, n, k);
    Ok(Tensor::new(
        vec![n, k],
        probs.into_iter().map(|p| p as f32).collect(),
    ))
}

/// Mean cross-entropy loss and the probabilities it was computed from.
pub fn linear_softmax_xent(
    input: &Tensor,
    weights: &Tensor,
    labels: &[usize],
) -> Result<(f64, Tensor)> {
    let (n, k) = (input.dim(0), weights.dim(1));
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "linear_softmax_xent".into(),
            detail: format!("{} labels for a batch of {n}", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::ShapeMismatch {
            op: "linear_softmax_xent".into(),
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }
    let logits = logits_f64(input, weights)?;
    let probs = softmax_rows(&logits, n, k);
    let mut loss = 0.0f64;
    for (row, &label) in labels.iter().enumerate() {
        loss -= probs[row * k + label].max(f64::MIN_POSITIVE).ln();
    }
    loss /= n as f64;
    Ok((
        loss,
        Tensor::new(vec![n, k], probs.into_iter().map(|p| p as f32).collect()),
    ))
}

/// Gradients of the mean cross-entropy w.r.t. the head input and weights.
pub fn linear_softmax_xent_backward(
    probs: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    labels: &[usize],
) -> (Tensor, Tensor) {
    let (n, c, k) = (input.dim(0), input.dim(1), weights.dim(1));
    debug_assert_eq!(probs.shape, vec![n, k]);
    debug_assert_eq!(labels.len(), n);

    // d loss / d logits = (p - onehot) / N
    let mut gl = vec![0.0f32; n * k];
    for row in 0..n {
        for col in 0..k {
            let y = if labels[row] == col { 1.0 } else { 0.0 };
            gl[row * k + col] = (probs.data[row * k + col] - y) / n as f32;
        }
    }

    let mut grad_input = Tensor::zeros(input.shape.clone());
    for row in 0..n {
        for i in 0..c {
            let mut acc = 0.0f64;
            for col in 0..k {
                acc += gl[row * k + col] as f64 * weights.data[i * k + col] as f64;
            }
            grad_input.data[row * c + i] = acc as f32;
        }
    }

    let mut grad_weights = Tensor::zeros(weights.shape.clone());
    for i in 0..c {
        for col in 0..k {
            let mut acc = 0.0f64;
            for row in 0..n {
                acc += input.data[row * c + i] as f64 * gl[row * k + col] as f64;
            }
            grad_weights.data[i * k + col] = acc as f32;
        }
    }
    (grad_input, grad_weights)
}
