//! FIFO memory bank and the nearest-neighbour loss.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{cosine, normalize_backward, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::numeric;

pub const DEFAULT_BANK_CAPACITY: usize = 36;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub embedding: Vec<f64>,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<BankEntry>,
}

impl Default for MemoryBank {
    fn default() -> Self {
        MemoryBank::new(DEFAULT_BANK_CAPACITY)
    }
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "memory bank capacity must be positive");
        MemoryBank {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: BankEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }
}

/// Appends `items` in order, evicting the oldest entries beyond capacity.
pub fn bank_push(bank: &mut MemoryBank, items: impl IntoIterator<Item = BankEntry>) {
    for item in items {
        bank.push(item);
    }
}

pub fn nn_loss(queries: &[(Vec<f64>, usize)], bank: &MemoryBank, k_nn: usize) -> Result<f64> {
    nn_loss_with_grad(queries, bank, k_nn).map(|(l, _)| l)
}

/// Negative mean cosine similarity between each query and its `k_nn`
/// most similar bank entries (ties go to the older entry).
///
/// Returns the gradient with respect to each raw query; the bank is
/// treated as constant.
pub fn nn_loss_with_grad(
    queries: &[(Vec<f64>, usize)],
    bank: &MemoryBank,
    k_nn: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if bank.is_empty() {
        return Err(Error::invalid("memory bank is empty"));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no queries"));
    }
    if k_nn == 0 {
        return Err(Error::invalid("k_nn must be positive"));
    }
    let k_eff = k_nn.min(bank.len());
    let scale = -1.0 / (queries.len() * k_eff) as f64;
    let bank_units: Vec<Vec<f64>> = bank
        .entries()
        .map(|e| {
            let n = numeric::norm(&e.embedding);
            if n <= NORM_FLOOR {
                return Err(Error::invalid("zero-norm bank entry"));
            }
            Ok(e.embedding.iter().map(|x| x / n).collect())
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (q, _) in queries {
        let mut sims: Vec<(f64, usize)> = bank
            .entries()
            .enumerate()
            .map(|(i, e)| cosine(q, &e.embedding).map(|s| (s, i)))
            .collect::<Result<_>>()?;
        // stable sort keeps insertion order among equal similarities
        sims.sort_by(|a, b| b.0.total_cmp(&a.0));
        let norm_q = numeric::norm(q);
        let unit_q: Vec<f64> = q.iter().map(|x| x / norm_q).collect();
        let mut grad_unit = vec![0.0; q.len()];
        for &(s, i) in &sims[..k_eff] {
            total += scale * s;
            for (g, b) in grad_unit.iter_mut().zip(&bank_units[i]) {
                *g += scale * b;
            }
        }
        grads.push(normalize_backward(&unit_q, norm_q, &grad_unit));
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: Vec<f64>) -> BankEntry {
        BankEntry {
            embedding: v,
            class_id: 0,
        }
    }

    #[test]
    fn default_capacity_is_36() {
        assert_eq!(MemoryBank::default().capacity(), 36);
    }

    #[test]
    fn fifo_eviction() {
        let mut bank = MemoryBank::new(36);
        bank_push(&mut bank, (1..=37).map(|i| entry(vec![i as f64])));
        assert_eq!(bank.len(), 36);
        let firsts: Vec<f64> = bank.entries().map(|e| e.embedding[0]).collect();
        assert_eq!(firsts, (2..=37).map(f64::from).collect::<Vec<_>>());

        let before = bank.clone();
        bank_push(&mut bank, std::iter::empty());
        assert_eq!(bank, before);

        bank_push(&mut bank, (100..172).map(|i| entry(vec![i as f64])));
        let firsts: Vec<f64> = bank.entries().map(|e| e.embedding[0]).collect();
        assert_eq!(firsts, (136..172).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn copies_of_query_give_minus_one() {
        let mut bank = MemoryBank::new(4);
        bank_push(&mut bank, (0..3).map(|_| entry(vec![0.6, 0.8])));
        let l = nn_loss(&[(vec![3.0, 4.0], 1)], &bank, 2).unwrap();
        assert!((l + 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_bank_gives_zero() {
        let mut bank = MemoryBank::new(4);
        bank_push(
            &mut bank,
            [entry(vec![0.0, 1.0, 0.0]), entry(vec![0.0, 0.0, 2.0])],
        );
        assert_eq!(nn_loss(&[(vec![1.0, 0.0, 0.0], 0)], &bank, 2).unwrap(), 0.0);
    }

    #[test]
    fn top_two_of_three() {
        // unit bank vectors with cosines 0.9, 0.5, -0.1 to e1
        let v = |c: f64| entry(vec![c, (1.0 - c * c).sqrt()]);
        let mut bank = MemoryBank::new(8);
        bank_push(&mut bank, [v(0.5), v(-0.1), v(0.9)]);
        let l = nn_loss(&[(vec![1.0, 0.0], 0)], &bank, 2).unwrap();
        assert!((l + 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_bank_is_rejected() {
        assert!(nn_loss(&[(vec![1.0], 0)], &MemoryBank::new(2), 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut bank = MemoryBank::new(8);
        bank_push(
            &mut bank,
            [
                entry(vec![1.0, 0.1, 0.3]),
                entry(vec![-0.2, 0.9, 0.1]),
                entry(vec![0.3, 0.3, -0.8]),
                entry(vec![0.5, -0.5, 0.5]),
            ],
        );
        let q = vec![(vec![0.7, 0.2, -0.1], 0), (vec![-0.1, 0.8, 0.4], 1)];
        let (_, g) = nn_loss_with_grad(&q, &bank, 2).unwrap();
        let h = 1e-6;
        for i in 0..q.len() {
            for d in 0..3 {
                let mut up = q.clone();
                up[i].0[d] += h;
                let mut dn = q.clone();
                dn[i].0[d] -= h;
                let fd =
                    (nn_loss(&up, &bank, 2).unwrap() - nn_loss(&dn, &bank, 2).unwrap()) / (2.0 * h);
                assert!((fd - g[i][d]).abs() < 1e-7);
            }
        }
    }
}
