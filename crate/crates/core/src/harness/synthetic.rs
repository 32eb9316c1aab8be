//! Synthetic "anatomy": nested super-ellipse rings with a long-tailed class
//! profile.
//!
//! Pixels are ranked by a warped super-ellipse radius around a jittered
//! center. The innermost `smallest_fraction` of pixels is the last class,
//! and successive rings outward take the remaining classes down to the
//! background class 0, sized by the profile `1, 1/2, 1/3, ...` (background
//! largest). Because assignment is by rank, class fractions are realized
//! up to rounding.
//!
//! Payload per pixel: `[intensity, 3^d local mean of intensity, coords...]`
//! with coordinates scaled to `[-1, 1]`. Intensity is a per-class level plus
//! Gaussian noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::PixelLattice;
use crate::rng::{Domain, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub num_classes: usize,
    pub smallest_fraction: f64,
    /// Std of the additive intensity noise.
    pub noise: f64,
    /// Super-ellipse exponent; 2 is an ellipse, larger is boxier.
    pub exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dims: vec![128, 128],
            num_classes: 4,
            smallest_fraction: 0.02,
            noise: 0.1,
            exponent: 2.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Number of payload columns.
    pub fn feat_dim(&self) -> usize {
        2 + self.dims.len()
    }

    /// Target fraction of each class.
    pub fn class_fractions(&self) -> Result<Vec<f64>> {
        let k = self.num_classes;
        if k == 1 {
            return Ok(vec![1.0]);
        }
        let f = self.smallest_fraction;
        let profile: Vec<f64> = (0..k - 1).map(|c| 1.0 / (c + 1) as f64).collect();
        let total: f64 = profile.iter().sum();
        let mut out: Vec<f64> = profile.iter().map(|p| p / total * (1.0 - f)).collect();
        if out.iter().any(|&o| o < f) {
            return Err(Error::invalid(format!(
                "smallest_fraction {f} is not the smallest class under the long-tailed profile"
            )));
        }
        out.push(f);
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims.len()) || self.dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("synthetic lattices are 2D or 3D with every side >= 2"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if self.num_classes > 1 && !(self.smallest_fraction > 0.0 && self.smallest_fraction < 1.0)
        {
            return Err(Error::invalid("smallest_fraction must lie in (0, 1)"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.exponent > 0.0) {
            return Err(Error::invalid("noise must be >= 0 and exponent > 0"));
        }
        Ok(())
    }
}

/// Splits `total` into integer counts proportional to `fractions`
/// (largest remainder, ties to the lower index).
fn round_counts(fractions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn box_mean(values: &[f64], dims: &[usize], lattice: &PixelLattice) -> Vec<f64> {
    (0..values.len())
        .map(|p| {
            let c = lattice.coords(p);
            let mut acc = 0.0;
            let mut count = 0usize;
            let offsets: Vec<Vec<i64>> = match dims.len() {
                2 => (-1..=1)
                    .flat_map(|a| (-1..=1).map(move |b| vec![a, b]))
                    .collect(),
                _ => (-1..=1)
                    .flat_map(|a| (-1..=1).flat_map(move |b| (-1..=1).map(move |d| vec![a, b, d])))
                    .collect(),
            };
            for off in offsets {
                let q: Option<Vec<usize>> = c
                    .iter()
                    .zip(&off)
                    .zip(dims)
                    .map(|((&x, &o), &d)| {
                        let y = x as i64 + o;
                        (0..d as i64).contains(&y).then_some(y as usize)
                    })
                    .collect();
                if let Some(q) = q.and_then(|q| lattice.index_of(&q)) {
                    acc += values[q];
                    count += 1;
                }
            }
            acc / count as f64
        })
        .collect()
}

/// Builds the lattice for `spec`; deterministic per seed.
pub fn generate(spec: &SyntheticSpec) -> Result<PixelLattice> {
    spec.validate()?;
    let fractions = spec.class_fractions()?;
    let dims = &spec.dims;
    let k = spec.num_classes;
    let mut shape_rng = StreamKey::new(spec.seed, Domain::Synthetic).stratum(0).rng();
    let center: Vec<f64> = dims
        .iter()
        .map(|&d| (d as f64 - 1.0) / 2.0 + shape_rng.gen_range(-0.08..0.08) * d as f64)
        .collect();
    let axes: Vec<f64> = dims
        .iter()
        .map(|&d| d as f64 / 2.0 * shape_rng.gen_range(0.7..1.0))
        .collect();
    let angle = shape_rng.gen_range(0.0..PI);
    let lobes = shape_rng.gen_range(2..6) as f64;
    let phase = shape_rng.gen_range(0.0..2.0 * PI);

    let base = PixelLattice::uniform(dims.clone())?;
    let n = base.len();
    let radius: Vec<f64> = (0..n)
        .map(|p| {
            let c = base.coords(p);
            let mut u: Vec<f64> = c.iter().zip(&center).map(|(&x, m)| x as f64 - m).collect();
            let (x, y) = (u[0], u[1]);
            u[0] = angle.cos() * x - angle.sin() * y;
            u[1] = angle.sin() * x + angle.cos() * y;
            let r: f64 = u
                .iter()
                .zip(&axes)
                .map(|(v, a)| (v / a).abs().powf(spec.exponent))
                .sum::<f64>()
                .powf(1.0 / spec.exponent);
            let phi = u[1].atan2(u[0]);
            r * (1.0 + 0.08 * (lobes * phi + phase).sin())
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| radius[a].total_cmp(&radius[b]).then(a.cmp(&b)));

    // innermost first: class k-1, then k-2, ..., background 0 outermost
    let counts = round_counts(&fractions, n);
    let mut classes = vec![0usize; n];
    let mut next = 0;
    for class in (0..k).rev() {
        for &p in &order[next..next + counts[class]] {
            classes[p] = class;
        }
        next += counts[class];
    }

    let mut noise_rng = StreamKey::new(spec.seed, Domain::Synthetic).stratum(1).rng();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let level = |c: usize| if k == 1 { 0.5 } else { c as f64 / (k - 1) as f64 };
    let intensity: Vec<f64> = classes
        .iter()
        .map(|&c| level(c) + noise.sample(&mut noise_rng))
        .collect();
    let lattice = PixelLattice::new(dims.clone(), k, classes)?;
    let local = box_mean(&intensity, dims, &lattice);

    let feat = spec.feat_dim();
    let mut payload = Vec::with_capacity(n * feat);
    for p in 0..n {
        payload.push(intensity[p]);
        payload.push(local[p]);
        for (x, &d) in lattice.coords(p).iter().zip(dims) {
            payload.push(2.0 * *x as f64 / (d - 1) as f64 - 1.0);
        }
    }
    lattice.with_payload(feat, payload)
}
