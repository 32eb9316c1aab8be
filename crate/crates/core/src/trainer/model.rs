//! A one-hidden-layer per-pixel network with explicit backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{RepresentationMap, Source};
use crate::error::{Error, Result};
use crate::lattice::PixelLattice;
use crate::rng::{Domain, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feat_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub n_rep: usize,
}

impl ModelShape {
    pub fn num_params(&self) -> usize {
        let ModelShape {
            feat_dim: f,
            hidden: h,
            num_classes: k,
            n_rep: r,
        } = *self;
        h * f + h + k * h + k + r * h + r
    }

    fn offsets(&self) -> Offsets {
        let ModelShape {
            feat_dim: f,
            hidden: h,
            num_classes: k,
            ..
        } = *self;
        let w1 = 0;
        let b1 = w1 + h * f;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        let w3 = b2 + k;
        let b3 = w3 + self.n_rep * h;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

/// Activations of one pixel, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelOutput {
    /// `tanh` of the hidden pre-activation.
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Embedding before normalization.
    pub raw: Vec<f64>,
}

/// `x -> tanh(W1 x + b1) -> (W2 h + b2, W3 h + b3)`.
///
/// Parameters are one flat vector laid out as `[W1, b1, W2, b2, W3, b3]`,
/// matrices row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub shape: ModelShape,
    pub params: Vec<f64>,
}

impl ToyModel {
    pub fn new(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        if shape.feat_dim == 0 || shape.hidden == 0 || shape.num_classes == 0 || shape.n_rep == 0 {
            return Err(Error::invalid("all model dimensions must be positive"));
        }
        if params.len() != shape.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                shape.num_params(),
                params.len()
            )));
        }
        Ok(ToyModel { shape, params })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        ToyModel::new(shape, vec![0.0; shape.num_params()])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut model = ToyModel::zeros(shape)?;
        let o = shape.offsets();
        let mut rng = StreamKey::new(seed, Domain::ModelInit).rng();
        let ModelShape {
            feat_dim: f,
            hidden: h,
            num_classes: k,
            n_rep: r,
        } = shape;
        for (start, fan_out, fan_in) in [(o.w1, h, f), (o.w2, k, h), (o.w3, r, h)] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut model.params[start..start + fan_out * fan_in] {
                *w = rng.gen_range(-a..a);
            }
        }
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward_pixel(&self, x: &[f64]) -> PixelOutput {
        let ModelShape {
            feat_dim: f,
            hidden: h,
            num_classes: k,
            n_rep: r,
        } = self.shape;
        debug_assert_eq!(x.len(), f);
        let o = self.shape.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &p[o.w1 + j * f..o.w1 + (j + 1) * f];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[o.b1 + j];
                z.tanh()
            })
            .collect();
        let affine = |w: usize, b: usize, rows: usize| -> Vec<f64> {
            (0..rows)
                .map(|i| {
                    let row = &p[w + i * h..w + (i + 1) * h];
                    row.iter().zip(&hidden).map(|(a, v)| a * v).sum::<f64>() + p[b + i]
                })
                .collect()
        };
        let logits = affine(o.w2, o.b2, k);
        let raw = affine(o.w3, o.b3, r);
        PixelOutput {
            hidden,
            logits,
            raw,
        }
    }

    /// Accumulates into `grad` the parameter gradient of a scalar whose
    /// gradients with respect to this pixel's logits and raw embedding are
    /// `d_logits` and `d_raw`.
    pub fn backward_pixel(
        &self,
        x: &[f64],
        out: &PixelOutput,
        d_logits: &[f64],
        d_raw: &[f64],
        grad: &mut [f64],
    ) {
        let ModelShape {
            feat_dim: f,
            hidden: h,
            num_classes: k,
            n_rep: r,
        } = self.shape;
        let o = self.shape.offsets();
        let p = &self.params;
        let mut d_hidden = vec![0.0; h];
        for (w, b, rows, d) in [(o.w2, o.b2, k, d_logits), (o.w3, o.b3, r, d_raw)] {
            for i in 0..rows {
                let di = d[i];
                if di == 0.0 {
                    continue;
                }
                grad[b + i] += di;
                for j in 0..h {
                    grad[w + i * h + j] += di * out.hidden[j];
                    d_hidden[j] += di * p[w + i * h + j];
                }
            }
        }
        for j in 0..h {
            let d_pre = d_hidden[j] * (1.0 - out.hidden[j] * out.hidden[j]);
            if d_pre == 0.0 {
                continue;
            }
            grad[o.b1 + j] += d_pre;
            for (g, v) in grad[o.w1 + j * f..o.w1 + (j + 1) * f].iter_mut().zip(x) {
                *g += d_pre * v;
            }
        }
    }

    /// Evaluates every pixel of the lattice's payload.
    pub fn forward(&self, lattice: &PixelLattice) -> Result<RepresentationMap> {
        let payload = lattice
            .payload()
            .ok_or_else(|| Error::invalid("lattice has no feature payload"))?;
        if payload.dim() != self.shape.feat_dim {
            return Err(Error::invalid(format!(
                "payload dimension {} does not match model input {}",
                payload.dim(),
                self.shape.feat_dim
            )));
        }
        self.forward_features(payload.values(), Source::Student)
    }

    /// Evaluates row-major feature rows.
    pub fn forward_features(&self, features: &[f64], source: Source) -> Result<RepresentationMap> {
        let f = self.shape.feat_dim;
        if features.len() % f != 0 {
            return Err(Error::invalid(
                "feature buffer is not a multiple of the input dimension",
            ));
        }
        let mut logits = Vec::with_capacity(features.len() / f * self.shape.num_classes);
        let mut raw = Vec::with_capacity(features.len() / f * self.shape.n_rep);
        for x in features.chunks_exact(f) {
            let out = self.forward_pixel(x);
            logits.extend(out.logits);
            raw.extend(out.raw);
        }
        RepresentationMap::from_raw(
            self.shape.n_rep,
            raw,
            self.shape.num_classes,
            logits,
            source,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape {
            feat_dim: 3,
            hidden: 5,
            num_classes: 4,
            n_rep: 2,
        }
    }

    #[test]
    fn zero_network_gives_uniform_logits() {
        let m = ToyModel::zeros(shape()).unwrap();
        let out = m.forward_pixel(&[0.3, -2.0, 1.0]);
        assert!(out.logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn pointwise_and_deterministic() {
        let a = ToyModel::init(shape(), 11).unwrap();
        let b = ToyModel::init(shape(), 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ToyModel::init(shape(), 12).unwrap());
        let x = [0.1, 0.2, 0.3];
        let map = a
            .forward_features(&[x, x].concat(), Source::Student)
            .unwrap();
        assert_eq!(map.embedding(0), map.embedding(1));
        assert_eq!(map.logits_of(0), map.logits_of(1));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = ToyModel::init(shape(), 1).unwrap();
        let lattice = PixelLattice::uniform(vec![2, 2]).unwrap();
        assert!(m.forward(&lattice).is_err());
        assert!(m.forward_features(&[0.0; 4], Source::Student).is_err());
        assert!(ToyModel::new(shape(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = ToyModel::init(shape(), 5).unwrap();
        let x = [0.4, -0.3, 0.9];
        let dl = [0.2, -0.5, 0.1, 0.7];
        let dr = [-0.3, 0.6];
        // scalar = dl . logits + dr . raw
        let scalar = |m: &ToyModel| {
            let o = m.forward_pixel(&x);
            crate::numeric::dot(&dl, &o.logits) + crate::numeric::dot(&dr, &o.raw)
        };
        let mut grad = vec![0.0; m.num_params()];
        m.backward_pixel(&x, &m.forward_pixel(&x), &dl, &dr, &mut grad);
        let h = 1e-6;
        for i in 0..m.num_params() {
            let mut up = m.clone();
            up.params[i] += h;
            let mut dn = m.clone();
            dn.params[i] -= h;
            let fd = (scalar(&up) - scalar(&dn)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-8,
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }
}
