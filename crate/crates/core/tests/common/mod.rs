//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use pixstrat::lattice::{PixelLattice, Stratification};
use pixstrat::sampling::{Allocation, SamplerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A 2-D lattice whose class map is constant on `block x block` tiles, so
/// that every grid x class stratum with cells that are multiples of `block`
/// has a size divisible by `block^2`.
pub fn block_lattice(seed: u64, side: usize, block: usize, k: usize) -> PixelLattice {
    let mut r = rng(seed);
    let tiles = side / block;
    let tile_class: Vec<usize> = (0..tiles * tiles).map(|_| r.gen_range(0..k)).collect();
    let classes = (0..side * side)
        .map(|p| {
            let (y, x) = (p / side, p % side);
            tile_class[(y / block) * tiles + x / block]
        })
        .collect();
    PixelLattice::new(vec![side, side], k, classes).unwrap()
}

pub fn random_values(seed: u64, len: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen::<f64>()).collect()
}

/// Population mean and variance by plain two-pass summation.
pub fn pop_mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Every ordered `len`-tuple over `0..base`.
fn tuples(base: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..base).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

/// Every equally likely estimate of `H` the sampler can produce, by
/// exhaustive enumeration of its draws.
pub fn enumerate_estimates(
    kind: SamplerKind,
    strat: &Stratification,
    alloc: &Allocation,
    values: &[f64],
) -> Vec<f64> {
    let pop = strat.population() as f64;
    if kind == SamplerKind::Ns {
        return tuples(values.len(), alloc.total)
            .iter()
            .map(|t| t.iter().map(|&p| values[p]).sum::<f64>() / t.len() as f64)
            .collect();
    }
    // per stratum: the weighted stratum mean for every draw pattern
    let per_stratum: Vec<Vec<f64>> = strat
        .strata()
        .iter()
        .zip(&alloc.per_stratum)
        .map(|(s, &n_m)| {
            let w = s.len() as f64 / pop;
            if n_m == 0 {
                let exact = s.pixels.iter().map(|&p| values[p]).sum::<f64>() / s.len() as f64;
                return vec![w * exact];
            }
            let draws = match kind {
                SamplerKind::Sg => n_m,
                _ => n_m.div_ceil(2),
            };
            tuples(s.len(), draws)
                .iter()
                .map(|t| {
                    let mut pixels = Vec::new();
                    for (j, &i) in t.iter().enumerate() {
                        pixels.push(s.pixels[i]);
                        if kind == SamplerKind::Sag && j < n_m / 2 {
                            pixels.push(s.reflect_at(i));
                        }
                    }
                    w * pixels.iter().map(|&p| values[p]).sum::<f64>() / pixels.len() as f64
                })
                .collect()
        })
        .collect();
    let mut out = vec![0.0];
    for options in per_stratum {
        out = out
            .iter()
            .flat_map(|acc| options.iter().map(move |o| acc + o))
            .collect();
    }
    out
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Norm-wise relative error of two gradients.
pub fn grad_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_vec(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()
}
