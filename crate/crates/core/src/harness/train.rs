//! The two-phase toy pipeline: contrastive warm-up with an EMA teacher,
//! then fine-tuning on the full objective.

use std::path::Path;

use serde::Serialize;

use super::checks::{Check, CheckFile, Outcome};
use super::config::{ExperimentConfig, LatticeSource};
use super::synthetic::{generate, SyntheticSpec};
use super::{run_seed, write_atomic, write_json};
use crate::error::{Error, Result};
use crate::lattice::PixelLattice;
use crate::trainer::{
    dice_per_class, plan_step_size, pretrain, sgd_fit, ModelShape, ToyModel, TrainData,
    TRAJECTORY_HEADER,
};

#[derive(Debug, Clone, Serialize)]
struct TrainSummary {
    sampler: crate::sampling::SamplerKind,
    steps: usize,
    lr: f64,
    pretrain_losses: Vec<f64>,
    dice_before: Vec<f64>,
    dice_after: Vec<f64>,
    mean_dice_after: f64,
    final_loss_total: f64,
}

fn predict(model: &ToyModel, lattice: &PixelLattice) -> Result<Vec<usize>> {
    let map = model.forward(lattice)?;
    Ok((0..lattice.len())
        .map(|p| {
            let l = map.logits_of(p);
            (0..l.len())
                .max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a)))
                .unwrap_or(0)
        })
        .collect())
}

/// Warm-up images: fresh synthetic draws sharing the configured spec, or
/// the lattice itself when it was loaded from a file.
fn warmup_images(cfg: &ExperimentConfig, lattice: &PixelLattice) -> Result<Vec<PixelLattice>> {
    let count = cfg.train.pretrain_images;
    if count == 0 {
        return Ok(Vec::new());
    }
    match &cfg.lattice {
        LatticeSource::Synthetic(spec) => (0..count)
            .map(|i| {
                generate(&SyntheticSpec {
                    seed: run_seed(spec.seed ^ 0x70e7, i),
                    ..spec.clone()
                })
            })
            .collect(),
        LatticeSource::File { .. } => Ok(vec![lattice.clone()]),
    }
}

/// Writes `trajectory_train.csv`, `train_summary.json` and
/// `train_checks.json`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let t = &cfg.train;
    let lattice = cfg.lattice()?;
    let feat_dim = lattice
        .payload()
        .ok_or_else(|| Error::invalid("training needs a lattice with a feature payload"))?
        .dim();
    let shape = ModelShape {
        feat_dim,
        hidden: t.hidden,
        num_classes: lattice.num_classes(),
        n_rep: t.n_rep,
    };
    let mut student = ToyModel::init(shape, cfg.seed)?;
    let mut teacher = student.clone();

    let images = warmup_images(cfg, &lattice)?;
    let pretrain_losses = if images.is_empty() {
        Vec::new()
    } else {
        let rows: Vec<&[f64]> = images
            .iter()
            .map(|im| im.payload().map_or(&[][..], |p| p.values()))
            .collect();
        pretrain(&mut student, &mut teacher, &rows, &t.pretrain, &t.finetune, cfg.seed)?
    };

    let strat = cfg.stratify(&lattice)?;
    let data = TrainData::new(lattice, strat, t.n_anchors)?;
    let sgd = cfg.train_sgd();
    let plan = plan_step_size(&student, &data, t.sampler, &sgd)?;
    let dice_before = dice_per_class(
        &predict(&student, &data.lattice)?,
        data.lattice.classes(),
        shape.num_classes,
    )?;
    let (model, log) = sgd_fit(&student, &data, t.sampler, &sgd, &plan, cfg.seed)?;
    let dice_after = dice_per_class(
        &predict(&model, &data.lattice)?,
        data.lattice.classes(),
        shape.num_classes,
    )?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    log.write_csv(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    let traj = out.join("trajectory_train.csv");
    write_atomic(&traj, &bytes)?;

    let first = log.records.first().map_or(f64::NAN, |r| r.loss_total);
    let last = log.records.last().map_or(f64::NAN, |r| r.loss_total);
    let summary = TrainSummary {
        sampler: t.sampler,
        steps: t.steps,
        lr: plan.lr,
        pretrain_losses,
        mean_dice_after: dice_after.iter().sum::<f64>() / dice_after.len() as f64,
        dice_before,
        dice_after,
        final_loss_total: last,
    };
    let summary_path = out.join("train_summary.json");
    write_json(&summary_path, &summary)?;

    let checks = vec![Check::from_bool(
        "train_loss_decreased",
        last < first,
        format!("total loss {first:.6} -> {last:.6}"),
    )];
    let checks_path = out.join("train_checks.json");
    write_json(&checks_path, &CheckFile {
        checks: checks.clone(),
    })?;
    Ok(Outcome {
        checks,
        files: vec![traj, summary_path, checks_path],
    })
}
