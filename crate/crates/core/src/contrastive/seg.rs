//! Pixel-wise segmentation losses on class logits.
//!
//! Logits are row-major `pixels x K`. The weighted variants take one weight
//! per pixel; with unit weights they reduce to the plain pixel averages.

use crate::error::{Error, Result};
use crate::numeric::{log_softmax, softmax};

/// Added to numerator and denominator of the soft Dice ratio.
pub const DICE_SMOOTHING: f64 = 1e-5;

fn check_shapes(logits: &[f64], k: usize, labels: &[usize], weights: &[f64]) -> Result<usize> {
    if k == 0 || logits.len() % k != 0 {
        return Err(Error::invalid("logit buffer is not a multiple of K"));
    }
    let n = logits.len() / k;
    if labels.len() != n || weights.len() != n {
        return Err(Error::invalid(
            "labels, weights and logits disagree on pixel count",
        ));
    }
    if let Some(bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for K = {k}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("no pixels"));
    }
    Ok(n)
}

/// Weighted mean cross-entropy `sum_i w_i (-log p_i[y_i]) / sum_i w_i` and
/// its gradient with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: &[f64],
    k: usize,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = check_shapes(logits, k, labels, weights)?;
    let total_w: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let lsm = log_softmax(row);
        let w = weights[i] / total_w;
        loss -= w * lsm[labels[i]];
        for c in 0..k {
            grad[i * k + c] = w * (lsm[c].exp() - f64::from(c == labels[i]));
        }
    }
    Ok((loss, grad))
}

/// Soft Dice loss `1 - mean_c (2 I_c + eps) / (S_c + eps)` over all K
/// classes, with weighted intersections and sums.
pub fn dice_loss_with_grad(
    logits: &[f64],
    k: usize,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = check_shapes(logits, k, labels, weights)?;
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|i| softmax(&logits[i * k..(i + 1) * k]))
        .collect();
    let mut inter = vec![0.0; k];
    let mut sums = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            let y = f64::from(labels[i] == c);
            inter[c] += weights[i] * probs[i][c] * y;
            sums[c] += weights[i] * (probs[i][c] + y);
        }
    }
    let eps = DICE_SMOOTHING;
    let mut loss = 1.0;
    // d loss / d p_ic
    let mut dp = vec![vec![0.0; k]; n];
    for c in 0..k {
        let num = 2.0 * inter[c] + eps;
        let den = sums[c] + eps;
        loss -= num / den / k as f64;
        for i in 0..n {
            let y = f64::from(labels[i] == c);
            let d_num = 2.0 * weights[i] * y;
            let d_den = weights[i];
            dp[i][c] = -(d_num * den - num * d_den) / (den * den) / k as f64;
        }
    }
    let mut grad = vec![0.0; logits.len()];
    for i in 0..n {
        let pd: f64 = (0..k).map(|c| probs[i][c] * dp[i][c]).sum();
        for c in 0..k {
            grad[i * k + c] = probs[i][c] * (dp[i][c] - pd);
        }
    }
    Ok((loss, grad))
}

/// `0.5 * Dice + 0.5 * CE`, unit weights.
pub fn sup_loss(logits: &[f64], k: usize, labels: &[usize]) -> Result<f64> {
    let w = vec![1.0; labels.len()];
    sup_loss_with_grad(logits, k, labels, &w).map(|(l, _)| l)
}

pub fn sup_loss_with_grad(
    logits: &[f64],
    k: usize,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (dice, gd) = dice_loss_with_grad(logits, k, labels, weights)?;
    let (ce, gc) = cross_entropy_with_grad(logits, k, labels, weights)?;
    let grad = gd.iter().zip(&gc).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * dice + 0.5 * ce, grad))
}

pub fn pseudo_labels(teacher_logits: &[f64], k: usize) -> Vec<usize> {
    teacher_logits
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                    if v > best.1 {
                        (c, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Cross-entropy of the student against the teacher's argmax labels.
pub fn unsup_loss(student_logits: &[f64], teacher_logits: &[f64], k: usize) -> Result<f64> {
    let w = vec![1.0; student_logits.len() / k.max(1)];
    unsup_loss_with_grad(student_logits, teacher_logits, k, &w).map(|(l, _)| l)
}

pub fn unsup_loss_with_grad(
    student_logits: &[f64],
    teacher_logits: &[f64],
    k: usize,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher_logits.len() {
        return Err(Error::invalid("student and teacher logits differ in shape"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    let labels = pseudo_labels(teacher_logits, k);
    cross_entropy_with_grad(student_logits, k, &labels, weights)
}
