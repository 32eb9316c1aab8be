//! SGD on sampled anchor sets.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{grad_total_loss, Batch, LossState, Objective};
use super::model::ToyModel;
use crate::contrastive::{bank_push, ema_update, FineTuneConfig, LossParts, MemoryBank};
use crate::error::{Error, Result};
use crate::lattice::{PixelLattice, Stratification};
use crate::numeric;
use crate::rng::{Domain, StreamKey};
use crate::sampling::{
    allocate_proportional, census, sample_ns_trial, sample_trial, Allocation, SamplerKind,
};

/// Trial index of the evaluation-set stream, apart from any training step.
const EVAL_TRIAL: u64 = u32::MAX as u64;

/// A labelled image with its stratification and anchor budget.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub lattice: PixelLattice,
    pub strat: Stratification,
    pub alloc: Allocation,
}

impl TrainData {
    pub fn new(lattice: PixelLattice, strat: Stratification, n_anchors: usize) -> Result<Self> {
        if lattice.payload().is_none() {
            return Err(Error::invalid("training data needs a feature payload"));
        }
        let alloc = allocate_proportional(&strat, n_anchors)?;
        Ok(TrainData {
            lattice,
            strat,
            alloc,
        })
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            features: self.lattice.payload().map_or(&[], |p| p.values()),
            labels: self.lattice.classes(),
            strat: &self.strat,
        }
    }
}

/// Where each step's anchors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPolicy {
    /// Every pixel once: the exact, noise-free loss.
    Census,
    Sampled(SamplerKind),
}

impl From<SamplerKind> for AnchorPolicy {
    fn from(kind: SamplerKind) -> Self {
        AnchorPolicy::Sampled(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Constant {
        lr: f64,
    },
    /// `min(1 / L_hat, alpha / (sigma_hat sqrt(T)))`.
    Smoothness {
        alpha: f64,
    },
}

/// Settings of the smoothness and noise probes behind [`StepRule::Smoothness`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub pairs: usize,
    /// Distance between the two points of a probe pair.
    pub radius: f64,
    /// Anchors of the fixed probe set.
    pub anchors: usize,
    /// Sampled gradients drawn at the initial point to estimate the noise.
    pub noise_draws: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            pairs: 8,
            radius: 0.05,
            anchors: 1024,
            noise_draws: 32,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub steps: usize,
    pub rule: StepRule,
    /// Fixed smoothness estimate; probed when absent.
    pub l_hat: Option<f64>,
    /// Fixed gradient-noise estimate; probed per sampler when absent.
    pub sigma_hat: Option<f64>,
    pub probe: ProbeConfig,
    pub objective: Objective,
    pub finetune: FineTuneConfig,
    pub checkpoints: usize,
    /// Rescales any step gradient longer than this to this length. The
    /// normalization backward pass blows up on short raw embeddings, so a
    /// few steps would otherwise dominate a run.
    pub clip_norm: Option<f64>,
    /// Size of the fixed set of uniformly drawn pixels on which the
    /// contrastive loss is scored at every checkpoint; 0 disables scoring.
    pub eval_anchors: usize,
    /// Threshold on the squared gradient norm used for steps-to-threshold.
    pub epsilon: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            steps: 200,
            rule: StepRule::Smoothness { alpha: 1.0 },
            l_hat: None,
            sigma_hat: None,
            probe: ProbeConfig::default(),
            objective: Objective::contrast_only(),
            finetune: FineTuneConfig::default(),
            checkpoints: 10,
            clip_norm: Some(1.0),
            eval_anchors: 1024,
            epsilon: 1e-3,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        match self.rule {
            StepRule::Constant { lr } if !(lr > 0.0 && lr.is_finite()) => {
                return Err(Error::invalid("learning rate must be positive"))
            }
            StepRule::Smoothness { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::invalid("alpha must be positive"))
            }
            _ => {}
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if self.checkpoints == 0 || self.checkpoints > self.steps {
            return Err(Error::invalid("checkpoints must lie in 1..=steps"));
        }
        self.finetune.validate()
    }

    /// Steps (1-based counts) at which checkpoints fall: every `T / c`.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let every = self.steps / self.checkpoints;
        (1..=self.checkpoints).map(|i| i * every).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub l_hat: f64,
    pub sigma_hat: f64,
    pub lr: f64,
}

/// Largest `|grad(a) - grad(b)| / |a - b|` over random probe pairs, using a
/// fixed SG anchor set.
pub fn estimate_smoothness(
    model: &ToyModel,
    data: &TrainData,
    cfg: &ConvergenceConfig,
) -> Result<f64> {
    let alloc = allocate_proportional(&data.strat, cfg.probe.anchors)?;
    let anchors = sample_trial(SamplerKind::Sg, &data.strat, &alloc, cfg.probe.seed, 0)?;
    let grad_at = |m: &ToyModel| {
        grad_total_loss(
            m,
            data.batch(),
            &anchors,
            LossState::default(),
            &cfg.objective,
            &cfg.finetune,
        )
        .map(|e| e.grad)
    };
    let mut rng = StreamKey::new(cfg.probe.seed, Domain::Probe).rng();
    let mut best: f64 = 0.0;
    for _ in 0..cfg.probe.pairs {
        let dir: Vec<f64> = (0..model.num_params())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let scale = cfg.probe.radius / numeric::norm(&dir);
        let mut other = model.clone();
        for (p, d) in other.params.iter_mut().zip(&dir) {
            *p += scale * d;
        }
        let (ga, gb) = (grad_at(model)?, grad_at(&other)?);
        let diff: Vec<f64> = ga.iter().zip(&gb).map(|(a, b)| a - b).collect();
        best = best.max(numeric::norm(&diff) / cfg.probe.radius);
    }
    Ok(best)
}

/// Root-mean-square deviation of sampled gradients at `model` from their mean.
pub fn estimate_gradient_noise(
    model: &ToyModel,
    data: &TrainData,
    sampler: SamplerKind,
    cfg: &ConvergenceConfig,
) -> Result<f64> {
    let grads = (0..cfg.probe.noise_draws as u64)
        .map(|t| {
            let anchors = sample_trial(sampler, &data.strat, &data.alloc, cfg.probe.seed, t)?;
            grad_total_loss(
                model,
                data.batch(),
                &anchors,
                LossState::default(),
                &cfg.objective,
                &cfg.finetune,
            )
            .map(|e| e.grad)
        })
        .collect::<Result<Vec<_>>>()?;
    if grads.len() < 2 {
        return Err(Error::invalid("at least two noise draws are needed"));
    }
    let dim = model.num_params();
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x / grads.len() as f64;
        }
    }
    let ss: f64 = grads
        .iter()
        .map(|g| {
            g.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((ss / (grads.len() - 1) as f64).sqrt())
}

/// Resolves the step size for one sampler.
pub fn plan_step_size(
    model: &ToyModel,
    data: &TrainData,
    sampler: SamplerKind,
    cfg: &ConvergenceConfig,
) -> Result<StepPlan> {
    cfg.validate()?;
    match cfg.rule {
        StepRule::Constant { lr } => Ok(StepPlan {
            l_hat: cfg.l_hat.unwrap_or(f64::NAN),
            sigma_hat: cfg.sigma_hat.unwrap_or(f64::NAN),
            lr,
        }),
        StepRule::Smoothness { alpha } => {
            let l_hat = match cfg.l_hat {
                Some(l) => l,
                None => estimate_smoothness(model, data, cfg)?,
            };
            let sigma_hat = match cfg.sigma_hat {
                Some(s) => s,
                None => estimate_gradient_noise(model, data, sampler, cfg)?,
            };
            let fast = if l_hat > 0.0 {
                1.0 / l_hat
            } else {
                f64::INFINITY
            };
            let slow = if sigma_hat > 0.0 {
                alpha / (sigma_hat * (cfg.steps as f64).sqrt())
            } else {
                f64::INFINITY
            };
            let lr = fast.min(slow);
            if !lr.is_finite() {
                return Err(Error::invalid(
                    "step size is unbounded: both smoothness and noise estimates are zero",
                ));
            }
            Ok(StepPlan {
                l_hat,
                sigma_hat,
                lr,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_total: f64,
    pub parts: LossParts,
    pub grad_sq_norm: f64,
}

/// Contrastive loss of the student on the fixed evaluation set after
/// `step` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub seed: u64,
    /// `None` for census anchors.
    pub sampler: Option<SamplerKind>,
    pub lr: f64,
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalPoint>,
    /// Not serialized, so that logs of identical runs compare equal on disk.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contrast(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.parts.contrast).collect()
    }

    /// First step whose squared gradient norm is at most `epsilon`.
    pub fn steps_to_threshold(&self, epsilon: f64) -> Option<usize> {
        self.records.iter().position(|r| r.grad_sq_norm <= epsilon)
    }

    /// Rows `seed,step,loss_total,loss_contrast,loss_nn,loss_unsup,loss_sup,grad_sq_norm`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.records {
            w.write_record([
                self.seed.to_string(),
                r.step.to_string(),
                r.loss_total.to_string(),
                r.parts.contrast.to_string(),
                r.parts.nn.to_string(),
                r.parts.unsup.to_string(),
                r.parts.sup.to_string(),
                r.grad_sq_norm.to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const TRAJECTORY_HEADER: [&str; 8] = [
    "seed",
    "step",
    "loss_total",
    "loss_contrast",
    "loss_nn",
    "loss_unsup",
    "loss_sup",
    "grad_sq_norm",
];

/// Runs `cfg.steps` SGD steps from `model`, drawing a fresh anchor set for
/// every step from the `(seed, step)` stream of the sampler (or using every
/// pixel under [`AnchorPolicy::Census`]).
///
/// With a teacher-dependent objective the run also keeps an EMA teacher and
/// a memory bank of teacher class keys, updated after each step.
pub fn sgd_train(
    model: &ToyModel,
    data: &TrainData,
    anchors: impl Into<AnchorPolicy>,
    cfg: &ConvergenceConfig,
    plan: &StepPlan,
    seed: u64,
) -> Result<TrajectoryLog> {
    sgd_fit(model, data, anchors, cfg, plan, seed).map(|(_, log)| log)
}

/// [`sgd_train`] that also returns the trained student.
pub fn sgd_fit(
    model: &ToyModel,
    data: &TrainData,
    anchors: impl Into<AnchorPolicy>,
    cfg: &ConvergenceConfig,
    plan: &StepPlan,
    seed: u64,
) -> Result<(ToyModel, TrajectoryLog)> {
    cfg.validate()?;
    if !(plan.lr > 0.0 && plan.lr.is_finite()) {
        return Err(Error::invalid("step size must be positive"));
    }
    let policy = anchors.into();
    let census_set = census(&data.strat);
    let started = Instant::now();
    let mut student = model.clone();
    let mut teacher = cfg.objective.needs_teacher().then(|| model.clone());
    let mut bank = MemoryBank::new(cfg.finetune.bank_capacity);
    let mut log = TrajectoryLog {
        seed,
        sampler: match policy {
            AnchorPolicy::Census => None,
            AnchorPolicy::Sampled(kind) => Some(kind),
        },
        lr: plan.lr,
        records: Vec::with_capacity(cfg.steps),
        evals: Vec::new(),
        wall_clock: Duration::ZERO,
    };
    // shared by every run and sampler with the same probe seed
    let eval_set = match cfg.eval_anchors {
        0 => None,
        n => Some(sample_ns_trial(
            data.strat.population(),
            n,
            cfg.probe.seed,
            EVAL_TRIAL,
        )?),
    };
    let checkpoints = cfg.checkpoint_steps();

    for step in 0..cfg.steps {
        let drawn;
        let anchors = match policy {
            AnchorPolicy::Census => &census_set,
            AnchorPolicy::Sampled(kind) => {
                drawn = sample_trial(kind, &data.strat, &data.alloc, seed, step as u64)?;
                &drawn
            }
        };
        let eval = grad_total_loss(
            &student,
            data.batch(),
            anchors,
            LossState {
                teacher: teacher.as_ref(),
                bank: Some(&bank),
            },
            &cfg.objective,
            &cfg.finetune,
        )?;
        let grad_sq_norm = numeric::dot(&eval.grad, &eval.grad);
        if !eval.total.is_finite() || !grad_sq_norm.is_finite() {
            log.wall_clock = started.elapsed();
            return Err(Error::Diverged {
                step,
                partial: Some(Box::new(log)),
            });
        }
        log.records.push(StepRecord {
            step,
            loss_total: eval.total,
            parts: eval.parts,
            grad_sq_norm,
        });
        let scale = match cfg.clip_norm {
            Some(c) if grad_sq_norm > c * c => c / grad_sq_norm.sqrt(),
            _ => 1.0,
        };
        for (p, g) in student.params.iter_mut().zip(&eval.grad) {
            *p -= plan.lr * scale * g;
        }
        if let Some(t) = teacher.as_mut() {
            ema_update(&mut t.params, &student.params, cfg.finetune.ema_momentum)?;
            bank_push(&mut bank, eval.teacher_keys);
        }
        if let Some(set) = &eval_set {
            if checkpoints.contains(&(step + 1)) {
                let scored = grad_total_loss(
                    &student,
                    data.batch(),
                    set,
                    LossState {
                        teacher: None,
                        bank: None,
                    },
                    &Objective::contrast_only(),
                    &cfg.finetune,
                )?;
                log.evals.push(EvalPoint {
                    step: step + 1,
                    contrast: scored.parts.contrast,
                });
            }
        }
    }
    log.wall_clock = started.elapsed();
    Ok((student, log))
}
