//! The semi-supervised loss stack over dense representation maps.
//!
//! Every loss comes in two forms: a plain evaluation, and a `*_with_grad`
//! variant returning the gradient with respect to its direct inputs
//! (embeddings or logits). The trainer chains those through the model.

mod bank;
mod config;
mod ema;
mod inst;
mod keys;
mod seg;

pub use bank::{bank_push, nn_loss, nn_loss_with_grad, BankEntry, MemoryBank};
pub use config::{total_finetune_loss, FineTuneConfig, LossParts};
pub use ema::ema_update;
pub use inst::{instance_discrimination_loss, instance_discrimination_loss_with_grad};
pub use keys::{build_key_sets, contrastive_loss, contrastive_loss_with_grad, ClassKeys, KeySets};
pub use seg::{
    cross_entropy_with_grad, dice_loss_with_grad, pseudo_labels, sup_loss, sup_loss_with_grad,
    unsup_loss, unsup_loss_with_grad, DICE_SMOOTHING,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Student,
    Teacher,
}

/// Per-pixel unit embeddings and class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMap {
    pub n_rep: usize,
    pub num_classes: usize,
    /// Row-major `pixels x n_rep`, rows unit-normalized.
    pub embeddings: Vec<f64>,
    /// Row-major `pixels x num_classes`.
    pub logits: Vec<f64>,
    pub source: Source,
}

impl RepresentationMap {
    /// Normalizes each raw embedding row.
    pub fn from_raw(
        n_rep: usize,
        mut raw: Vec<f64>,
        num_classes: usize,
        logits: Vec<f64>,
        source: Source,
    ) -> Result<Self> {
        if n_rep == 0 || num_classes == 0 {
            return Err(Error::invalid(
                "embedding and class dimensions must be positive",
            ));
        }
        if raw.len() % n_rep != 0 || logits.len() / num_classes != raw.len() / n_rep {
            return Err(Error::invalid("embedding and logit row counts differ"));
        }
        for row in raw.chunks_exact_mut(n_rep) {
            normalize_in_place(row);
        }
        Ok(RepresentationMap {
            n_rep,
            num_classes,
            embeddings: raw,
            logits,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len() / self.n_rep
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embedding(&self, pixel: usize) -> &[f64] {
        &self.embeddings[pixel * self.n_rep..(pixel + 1) * self.n_rep]
    }

    pub fn logits_of(&self, pixel: usize) -> &[f64] {
        &self.logits[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }
}

/// Smallest norm treated as nonzero when normalizing.
pub const NORM_FLOOR: f64 = 1e-12;

/// Scales `v` to unit length; vectors below [`NORM_FLOOR`] are left as is.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = numeric::norm(v);
    if n > NORM_FLOOR {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out);
    out
}

/// Pulls a gradient on `r = z / |z|` back to `z`: `(g - r (r.g)) / |z|`.
pub fn normalize_backward(unit: &[f64], raw_norm: f64, grad_unit: &[f64]) -> Vec<f64> {
    let rg = numeric::dot(unit, grad_unit);
    unit.iter()
        .zip(grad_unit)
        .map(|(r, g)| (g - r * rg) / raw_norm)
        .collect()
}

/// Cosine similarity; errors on zero-norm inputs.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (numeric::norm(a), numeric::norm(b));
    if na <= NORM_FLOOR || nb <= NORM_FLOOR {
        return Err(Error::invalid("zero-norm embedding"));
    }
    Ok(numeric::dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_rows_are_unit_norm() {
        let m = RepresentationMap::from_raw(
            2,
            vec![3.0, 4.0, -1.0, 0.0],
            2,
            vec![0.0; 4],
            Source::Student,
        )
        .unwrap();
        for p in 0..m.len() {
            assert!((numeric::norm(m.embedding(p)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(m.embedding(0), &[0.6, 0.8]);
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!((cosine(&[2.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
