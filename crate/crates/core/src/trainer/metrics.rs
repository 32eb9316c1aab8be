use crate::error::{Error, Result};

/// Dice overlap `2|A n B| / (|A| + |B|)` of the masks `pred == class` and
/// `truth == class`; two empty masks score 1.
pub fn dice(pred: &[usize], truth: &[usize], class: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and truth differ in pixel count"));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (ip, it) = (p == class, t == class);
        a += usize::from(ip);
        b += usize::from(it);
        both += usize::from(ip && it);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Dice for every class in `0..k`.
pub fn dice_per_class(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<f64>> {
    (0..k).map(|c| dice(pred, truth, c)).collect()
}
