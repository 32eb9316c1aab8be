//! Warm-up of the embedding head with the instance-discrimination loss and
//! an EMA teacher.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::inst_loss_with_grad;
use super::model::ToyModel;
use crate::contrastive::{ema_update, FineTuneConfig};
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Pixels drawn (with replacement) into each augmented view.
    pub pixels_per_view: usize,
    /// Std of the Gaussian noise added to every feature of a view.
    pub aug_noise: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 20,
            lr: 0.05,
            pixels_per_view: 64,
            aug_noise: 0.05,
        }
    }
}

fn view(image: &[f64], feat_dim: usize, cfg: &PretrainConfig, rng: &mut StreamRng) -> Vec<f64> {
    let rows = image.len() / feat_dim;
    let noise = Normal::new(0.0, cfg.aug_noise).expect("finite noise level");
    let mut out = Vec::with_capacity(cfg.pixels_per_view * feat_dim);
    for _ in 0..cfg.pixels_per_view {
        let r = rng.gen_range(0..rows);
        out.extend(
            image[r * feat_dim..(r + 1) * feat_dim]
                .iter()
                .map(|x| x + noise.sample(rng)),
        );
    }
    out
}

/// Runs `cfg.steps` steps; each picks an image, compares a student view
/// with a teacher view against `d_mined` teacher views of uniformly drawn
/// images, takes a gradient step and updates the teacher. Returns the loss
/// per step.
pub fn pretrain(
    student: &mut ToyModel,
    teacher: &mut ToyModel,
    images: &[&[f64]],
    cfg: &PretrainConfig,
    finetune: &FineTuneConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let f = student.shape.feat_dim;
    if images.is_empty() || images.iter().any(|im| im.is_empty() || im.len() % f != 0) {
        return Err(Error::invalid("pretraining needs nonempty feature images"));
    }
    if cfg.pixels_per_view == 0 || !(cfg.aug_noise >= 0.0) || !(cfg.lr > 0.0) {
        return Err(Error::invalid("invalid pretraining settings"));
    }
    finetune.validate()?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps as u64 {
        let mut pick = StreamKey::new(seed, Domain::Mined).trial(step).rng();
        let image = images[pick.gen_range(0..images.len())];
        let mut aug = StreamKey::new(seed, Domain::Augment).trial(step).rng();
        let sv = view(image, f, cfg, &mut aug);
        let tv = view(image, f, cfg, &mut aug);
        let mined: Vec<Vec<f64>> = (0..finetune.d_mined)
            .map(|_| view(images[pick.gen_range(0..images.len())], f, cfg, &mut aug))
            .collect();
        let (loss, grad) = inst_loss_with_grad(student, teacher, &sv, &tv, &mined, finetune)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: step as usize,
                partial: None,
            });
        }
        for (p, g) in student.params.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
        ema_update(&mut teacher.params, &student.params, finetune.ema_momentum)?;
        losses.push(loss);
    }
    Ok(losses)
}
