//! Query/key construction and the pixel contrastive loss.
//!
//! For each class `c` present among the anchors, queries are the anchor
//! embeddings labelled `c`, negatives are the anchor embeddings labelled
//! otherwise, and the positive key is the mean query renormalized to the
//! unit sphere. The loss is
//!
//! ```text
//! sum_c sum_{q in Q_c} -log( e^{q.k_c/t} / (e^{q.k_c/t} + sum_{n in N_c} e^{q.n/t}) )
//! ```

use super::{normalize_backward, normalized, RepresentationMap};
use crate::error::{Error, Result};
use crate::numeric::{self, CompensatedSum};
use crate::sampling::SampleSet;

#[derive(Debug, Clone, PartialEq)]
pub struct KeySets {
    /// Classes in ascending order, one entry per class present.
    pub classes: Vec<usize>,
    pub queries: Vec<Vec<Vec<f64>>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
    pub positive: Vec<Vec<f64>>,
}

/// Builds query, negative and positive-key sets from the anchor pixels.
pub fn build_key_sets(
    map: &RepresentationMap,
    labels: &[usize],
    anchors: &SampleSet,
) -> Result<KeySets> {
    if anchors.is_empty() {
        return Err(Error::invalid("no anchors"));
    }
    if labels.len() != map.len() {
        return Err(Error::invalid(
            "label count differs from the representation map",
        ));
    }
    let pixels: Vec<usize> = anchors.pixels().collect();
    let emb: Vec<Vec<f64>> = pixels.iter().map(|&p| map.embedding(p).to_vec()).collect();
    let lab: Vec<usize> = pixels.iter().map(|&p| labels[p]).collect();
    let keys = ClassKeys::build(&emb, &lab);

    let mut out = KeySets {
        classes: keys.classes.clone(),
        queries: Vec::new(),
        negatives: Vec::new(),
        positive: keys.keys.clone(),
    };
    for &c in &keys.classes {
        let (q, n): (Vec<_>, Vec<_>) = emb.iter().zip(&lab).partition(|(_, &l)| l == c);
        out.queries
            .push(q.into_iter().map(|(e, _)| e.clone()).collect());
        out.negatives
            .push(n.into_iter().map(|(e, _)| e.clone()).collect());
    }
    Ok(out)
}

/// Evaluates the loss from explicit sets.
pub fn contrastive_loss(keys: &KeySets, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    if keys.queries.iter().all(Vec::is_empty) {
        return Err(Error::invalid("no queries for any class"));
    }
    let mut total = CompensatedSum::new();
    let mut logits = Vec::new();
    for ((queries, negatives), key) in keys.queries.iter().zip(&keys.negatives).zip(&keys.positive)
    {
        for q in queries {
            logits.clear();
            let pos = numeric::dot(q, key) / tau;
            logits.push(pos);
            logits.extend(negatives.iter().map(|n| numeric::dot(q, n) / tau));
            total.add(numeric::log_sum_exp(&logits) - pos);
        }
    }
    Ok(total.value().max(0.0))
}

/// Per-class positive keys computed from a list of unit embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassKeys {
    pub classes: Vec<usize>,
    /// Anchor positions belonging to each class.
    pub members: Vec<Vec<usize>>,
    /// Norm of the (pre-normalization) class mean.
    pub mean_norms: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
}

impl ClassKeys {
    pub fn build(embeddings: &[Vec<f64>], labels: &[usize]) -> Self {
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut members = Vec::with_capacity(classes.len());
        let mut mean_norms = Vec::with_capacity(classes.len());
        let mut keys = Vec::with_capacity(classes.len());
        for &c in &classes {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mut mean = vec![0.0; dim];
            for &i in &idx {
                for (m, x) in mean.iter_mut().zip(&embeddings[i]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
            mean_norms.push(numeric::norm(&mean));
            keys.push(normalized(&mean));
            members.push(idx);
        }
        ClassKeys {
            classes,
            members,
            mean_norms,
            keys,
        }
    }

    pub fn position(&self, class: usize) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    /// Adds the contribution of key gradients to the anchor gradients.
    pub fn backprop(&self, key_grads: &[Vec<f64>], anchor_grads: &mut [Vec<f64>]) {
        for (c, g_key) in key_grads.iter().enumerate() {
            if self.mean_norms[c] <= super::NORM_FLOOR {
                continue;
            }
            let g_mean = normalize_backward(&self.keys[c], self.mean_norms[c], g_key);
            let share = 1.0 / self.members[c].len() as f64;
            for &i in &self.members[c] {
                for (a, g) in anchor_grads[i].iter_mut().zip(&g_mean) {
                    *a += g * share;
                }
            }
        }
    }
}

/// Loss and its gradient with respect to each (unit) anchor embedding,
/// including the path through the positive keys.
pub fn contrastive_loss_with_grad(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let keys = ClassKeys::build(embeddings, labels);
    contrastive_loss_with_keys(embeddings, labels, &keys, tau)
}

pub(crate) fn contrastive_loss_with_keys(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    keys: &ClassKeys,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if tau <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    if embeddings.is_empty() {
        return Err(Error::invalid("no queries for any class"));
    }
    let dim = embeddings[0].len();
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    let mut key_grads = vec![vec![0.0; dim]; keys.classes.len()];
    let mut total = CompensatedSum::new();
    let mut logits = Vec::with_capacity(embeddings.len());
    let mut negs = Vec::with_capacity(embeddings.len());

    for (c, &class) in keys.classes.iter().enumerate() {
        negs.clear();
        negs.extend((0..embeddings.len()).filter(|&j| labels[j] != class));
        let key = &keys.keys[c];
        for &i in &keys.members[c] {
            let q = &embeddings[i];
            logits.clear();
            logits.push(numeric::dot(q, key) / tau);
            logits.extend(negs.iter().map(|&j| numeric::dot(q, &embeddings[j]) / tau));
            let lse = numeric::log_sum_exp(&logits);
            total.add(lse - logits[0]);

            let coef_pos = (logits[0] - lse).exp() - 1.0;
            for d in 0..dim {
                grads[i][d] += coef_pos * key[d] / tau;
                key_grads[c][d] += coef_pos * q[d] / tau;
            }
            for (&j, &s) in negs.iter().zip(&logits[1..]) {
                let p = (s - lse).exp();
                for d in 0..dim {
                    grads[i][d] += p * embeddings[j][d] / tau;
                    grads[j][d] += p * q[d] / tau;
                }
            }
        }
    }
    keys.backprop(&key_grads, &mut grads);
    Ok((total.value().max(0.0), grads))
}
