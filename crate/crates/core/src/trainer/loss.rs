//! The sampled total loss and its parameter gradient.

use serde::{Deserialize, Serialize};

use super::model::{PixelOutput, ToyModel};
use crate::contrastive::{
    contrastive_loss_with_grad, instance_discrimination_loss_with_grad, nn_loss_with_grad,
    normalize_backward, normalize_in_place, sup_loss_with_grad, unsup_loss_with_grad, BankEntry,
    ClassKeys, FineTuneConfig, LossParts, MemoryBank,
};
use crate::error::{Error, Result};
use crate::lattice::Stratification;
use crate::sampling::SampleSet;

/// Weights of the four loss terms in the optimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sup: f64,
    pub contrast: f64,
    pub unsup: f64,
    pub nn: f64,
}

impl Objective {
    /// `L_sup + l1 L_contrast + l2 L_unsup + l3 L_nn`.
    pub fn finetune(cfg: &FineTuneConfig) -> Self {
        Objective {
            sup: 1.0,
            contrast: cfg.lambda1,
            unsup: cfg.lambda2,
            nn: cfg.lambda3,
        }
    }

    pub fn contrast_only() -> Self {
        Objective {
            sup: 0.0,
            contrast: 1.0,
            unsup: 0.0,
            nn: 0.0,
        }
    }

    pub fn combine(&self, parts: &LossParts) -> f64 {
        self.sup * parts.sup
            + self.contrast * parts.contrast
            + self.unsup * parts.unsup
            + self.nn * parts.nn
    }

    pub fn needs_teacher(&self) -> bool {
        self.unsup != 0.0 || self.nn != 0.0
    }
}

/// One image's inputs: row-major features, labels and the stratification
/// the anchors were drawn from.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
    pub strat: &'a Stratification,
}

/// Teacher network and memory bank; both optional.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossState<'a> {
    pub teacher: Option<&'a ToyModel>,
    pub bank: Option<&'a MemoryBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub parts: LossParts,
    pub total: f64,
    pub grad: Vec<f64>,
    /// Teacher class keys on these anchors, ready for the memory bank.
    pub teacher_keys: Vec<BankEntry>,
}

struct Forward {
    outs: Vec<PixelOutput>,
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_rows(model: &ToyModel, features: &[f64], pixels: &[usize]) -> Forward {
    let f = model.shape.feat_dim;
    let mut fw = Forward {
        outs: Vec::with_capacity(pixels.len()),
        units: Vec::with_capacity(pixels.len()),
        norms: Vec::with_capacity(pixels.len()),
        logits: Vec::with_capacity(pixels.len() * model.shape.num_classes),
    };
    for &p in pixels {
        let out = model.forward_pixel(&features[p * f..(p + 1) * f]);
        let mut unit = out.raw.clone();
        fw.norms.push(normalize_in_place(&mut unit));
        fw.units.push(unit);
        fw.logits.extend_from_slice(&out.logits);
        fw.outs.push(out);
    }
    fw
}

fn class_entries(keys: &ClassKeys) -> Vec<BankEntry> {
    keys.classes
        .iter()
        .zip(&keys.keys)
        .map(|(&class_id, k)| BankEntry {
            embedding: k.clone(),
            class_id,
        })
        .collect()
}

/// Evaluates the objective on the anchor pixels and returns its exact
/// gradient with respect to the model parameters.
///
/// `L_contrast` is reported per anchor (the raw sum divided by `|A|`).
/// Supervised and pseudo-label terms use the sampler's estimator weights,
/// rescaled to sum to `|A|`. The unsupervised and nearest-neighbour terms are
/// skipped (reported as 0) without a teacher or with an empty bank.
pub fn grad_total_loss(
    model: &ToyModel,
    batch: Batch<'_>,
    anchors: &SampleSet,
    state: LossState<'_>,
    objective: &Objective,
    cfg: &FineTuneConfig,
) -> Result<LossEval> {
    let f = model.shape.feat_dim;
    let k = model.shape.num_classes;
    if batch.features.len() != batch.labels.len() * f {
        return Err(Error::invalid(
            "features and labels disagree on pixel count",
        ));
    }
    let pixels: Vec<usize> = anchors.pixels().collect();
    if pixels.is_empty() {
        return Err(Error::invalid("no anchors"));
    }
    if let Some(&p) = pixels.iter().find(|&&p| p >= batch.labels.len()) {
        return Err(Error::invalid(format!("anchor {p} out of range")));
    }
    let n = pixels.len();
    let weights: Vec<f64> = anchors
        .weights(batch.strat)?
        .into_iter()
        .map(|w| w * n as f64)
        .collect();
    let labels: Vec<usize> = pixels.iter().map(|&p| batch.labels[p]).collect();
    let fw = forward_rows(model, batch.features, &pixels);

    let mut parts = LossParts::default();
    let mut d_logits = vec![0.0; n * k];
    let mut d_unit = vec![vec![0.0; model.shape.n_rep]; n];

    if objective.sup != 0.0 {
        let (l, g) = sup_loss_with_grad(&fw.logits, k, &labels, &weights)?;
        parts.sup = l;
        for (d, g) in d_logits.iter_mut().zip(&g) {
            *d += objective.sup * g;
        }
    }

    let (l, g) = contrastive_loss_with_grad(&fw.units, &labels, cfg.tau)?;
    parts.contrast = l / n as f64;
    if objective.contrast != 0.0 {
        let s = objective.contrast / n as f64;
        for (d, g) in d_unit.iter_mut().zip(&g) {
            for (a, b) in d.iter_mut().zip(g) {
                *a += s * b;
            }
        }
    }

    let mut teacher_keys = Vec::new();
    if let Some(teacher) = state.teacher {
        let tw = forward_rows(teacher, batch.features, &pixels);
        if objective.unsup != 0.0 {
            let (l, g) = unsup_loss_with_grad(&fw.logits, &tw.logits, k, &weights)?;
            parts.unsup = l;
            for (d, g) in d_logits.iter_mut().zip(&g) {
                *d += objective.unsup * g;
            }
        }
        teacher_keys = class_entries(&ClassKeys::build(&tw.units, &labels));
    }

    if let Some(bank) = state.bank.filter(|b| !b.is_empty() && objective.nn != 0.0) {
        let keys = ClassKeys::build(&fw.units, &labels);
        let queries: Vec<(Vec<f64>, usize)> = keys
            .keys
            .iter()
            .cloned()
            .zip(keys.classes.iter().copied())
            .collect();
        let (l, g) = nn_loss_with_grad(&queries, bank, cfg.k_nn)?;
        parts.nn = l;
        let key_grads: Vec<Vec<f64>> = g
            .into_iter()
            .map(|v| v.into_iter().map(|x| objective.nn * x).collect())
            .collect();
        keys.backprop(&key_grads, &mut d_unit);
    }

    let mut grad = vec![0.0; model.num_params()];
    for (i, &p) in pixels.iter().enumerate() {
        let d_raw = normalize_backward(&fw.units[i], fw.norms[i], &d_unit[i]);
        model.backward_pixel(
            &batch.features[p * f..(p + 1) * f],
            &fw.outs[i],
            &d_logits[i * k..(i + 1) * k],
            &d_raw,
            &mut grad,
        );
    }
    Ok(LossEval {
        parts,
        total: objective.combine(&parts),
        grad,
        teacher_keys,
    })
}

/// Image-level embedding: the mean unit embedding over the given rows.
pub fn global_embedding(model: &ToyModel, view: &[f64]) -> Vec<f64> {
    let rows: Vec<usize> = (0..view.len() / model.shape.feat_dim).collect();
    let fw = forward_rows(model, view, &rows);
    let mut g = vec![0.0; model.shape.n_rep];
    for u in &fw.units {
        for (a, b) in g.iter_mut().zip(u) {
            *a += b;
        }
    }
    g.iter_mut().for_each(|a| *a /= rows.len() as f64);
    g
}

/// The instance-discrimination loss between the student's view of an image
/// and the teacher's, relative to teacher embeddings of mined views.
/// Returns the loss and its gradient with respect to the student parameters.
pub fn inst_loss_with_grad(
    student: &ToyModel,
    teacher: &ToyModel,
    student_view: &[f64],
    teacher_view: &[f64],
    mined_views: &[Vec<f64>],
    cfg: &FineTuneConfig,
) -> Result<(f64, Vec<f64>)> {
    let f = student.shape.feat_dim;
    if student_view.is_empty() || student_view.len() % f != 0 {
        return Err(Error::invalid("student view must hold whole feature rows"));
    }
    let rows: Vec<usize> = (0..student_view.len() / f).collect();
    let fw = forward_rows(student, student_view, &rows);
    let mut w1 = vec![0.0; student.shape.n_rep];
    for u in &fw.units {
        for (a, b) in w1.iter_mut().zip(u) {
            *a += b / rows.len() as f64;
        }
    }
    let w2 = global_embedding(teacher, teacher_view);
    let mined: Vec<Vec<f64>> = mined_views
        .iter()
        .map(|v| global_embedding(teacher, v))
        .collect();
    let (loss, g_w1) =
        instance_discrimination_loss_with_grad(&w1, &w2, &mined, cfg.tau_s, cfg.tau_t)?;

    let mut grad = vec![0.0; student.num_params()];
    let d_unit: Vec<f64> = g_w1.iter().map(|g| g / rows.len() as f64).collect();
    let zeros = vec![0.0; student.shape.num_classes];
    for &r in &rows {
        let d_raw = normalize_backward(&fw.units[r], fw.norms[r], &d_unit);
        student.backward_pixel(
            &student_view[r * f..(r + 1) * f],
            &fw.outs[r],
            &zeros,
            &d_raw,
            &mut grad,
        );
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::bank_push;
    use crate::lattice::{build_class_grid_stratification, PixelLattice};
    use crate::sampling::{allocate_proportional, census, sample_sg};
    use crate::trainer::model::ModelShape;

    fn setup() -> (ToyModel, ToyModel, Vec<f64>, Vec<usize>, Stratification) {
        let shape = ModelShape {
            feat_dim: 3,
            hidden: 6,
            num_classes: 3,
            n_rep: 4,
        };
        let classes: Vec<usize> = (0..16).map(|i| [0, 0, 1, 2][i % 4]).collect();
        let lattice = PixelLattice::new(vec![4, 4], 3, classes.clone()).unwrap();
        let strat = build_class_grid_stratification(&lattice, &[2, 2]).unwrap();
        let features: Vec<f64> = (0..16)
            .flat_map(|i| {
                let t = i as f64;
                [
                    (0.7 * t).sin(),
                    (0.3 * t).cos(),
                    classes[i] as f64 * 0.5 - 0.4,
                ]
            })
            .collect();
        (
            ToyModel::init(shape, 3).unwrap(),
            ToyModel::init(shape, 4).unwrap(),
            features,
            classes,
            strat,
        )
    }

    fn fd_grad(f: impl Fn(&ToyModel) -> f64, m: &ToyModel) -> Vec<f64> {
        let h = 1e-6;
        (0..m.num_params())
            .map(|i| {
                let mut up = m.clone();
                up.params[i] += h;
                let mut dn = m.clone();
                dn.params[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        let scale = a.iter().map(|x| x.abs()).fold(1e-3, f64::max);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-5 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let (student, teacher, features, labels, strat) = setup();
        let alloc = allocate_proportional(&strat, 8).unwrap();
        let anchors = sample_sg(&strat, &alloc, 9).unwrap();
        let mut bank = MemoryBank::new(6);
        bank_push(
            &mut bank,
            (0..6).map(|i| BankEntry {
                embedding: vec![(i as f64).sin(), 0.3, -(i as f64).cos(), 0.1],
                class_id: i % 3,
            }),
        );
        let cfg = FineTuneConfig {
            k_nn: 2,
            ..FineTuneConfig::default()
        };
        let objective = Objective {
            sup: 1.0,
            contrast: 0.7,
            unsup: 0.5,
            nn: 0.3,
        };
        let batch = Batch {
            features: &features,
            labels: &labels,
            strat: &strat,
        };
        let state = LossState {
            teacher: Some(&teacher),
            bank: Some(&bank),
        };
        let eval = grad_total_loss(&student, batch, &anchors, state, &objective, &cfg).unwrap();
        assert!(eval.parts.nn < 0.0 && eval.parts.unsup > 0.0);
        assert_eq!(eval.teacher_keys.len(), 3);
        let fd = fd_grad(
            |m| {
                grad_total_loss(m, batch, &anchors, state, &objective, &cfg)
                    .unwrap()
                    .total
            },
            &student,
        );
        assert_close(&eval.grad, &fd);
    }

    #[test]
    fn census_anchors_give_full_pixel_loss() {
        let (student, _, features, labels, strat) = setup();
        let objective = Objective {
            sup: 1.0,
            contrast: 1.0,
            unsup: 0.0,
            nn: 0.0,
        };
        let cfg = FineTuneConfig::default();
        let batch = Batch {
            features: &features,
            labels: &labels,
            strat: &strat,
        };
        let eval = grad_total_loss(
            &student,
            batch,
            &census(&strat),
            LossState::default(),
            &objective,
            &cfg,
        )
        .unwrap();
        let map = student
            .forward_features(&features, crate::contrastive::Source::Student)
            .unwrap();
        let sup = crate::contrastive::sup_loss(&map.logits, 3, &labels).unwrap();
        let units: Vec<Vec<f64>> = (0..16).map(|p| map.embedding(p).to_vec()).collect();
        let (contrast, _) = contrastive_loss_with_grad(&units, &labels, cfg.tau).unwrap();
        assert!((eval.parts.sup - sup).abs() < 1e-12);
        assert!((eval.parts.contrast - contrast / 16.0).abs() < 1e-12);
    }

    #[test]
    fn zero_objective_gives_zero_gradient() {
        let (student, _, features, labels, strat) = setup();
        let objective = Objective {
            sup: 0.0,
            contrast: 0.0,
            unsup: 0.0,
            nn: 0.0,
        };
        let eval = grad_total_loss(
            &student,
            Batch {
                features: &features,
                labels: &labels,
                strat: &strat,
            },
            &census(&strat),
            LossState::default(),
            &objective,
            &FineTuneConfig::default(),
        )
        .unwrap();
        assert_eq!(eval.total, 0.0);
        assert!(eval.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn inst_gradient_matches_finite_differences() {
        let (student, teacher, features, _, _) = setup();
        let sv = features[..18].to_vec();
        let tv: Vec<f64> = sv.iter().map(|x| x + 0.05).collect();
        let mined = vec![
            features[18..36].to_vec(),
            features[12..30].to_vec(),
            features[30..48].to_vec(),
        ];
        let cfg = FineTuneConfig::default();
        let (_, g) = inst_loss_with_grad(&student, &teacher, &sv, &tv, &mined, &cfg).unwrap();
        let fd = fd_grad(
            |m| {
                inst_loss_with_grad(m, &teacher, &sv, &tv, &mined, &cfg)
                    .unwrap()
                    .0
            },
            &student,
        );
        assert_close(&g, &fd);
    }
}
