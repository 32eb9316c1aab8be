//! TOML experiment configs. See `configs/example.toml` for every field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::hfun::HSpec;
use super::synthetic::{generate, SyntheticSpec};
use crate::contrastive::FineTuneConfig;
use crate::error::{Error, Result};
use crate::lattice::{build_stratification, load_lattice, PixelLattice, Scheme, Stratification};
use crate::sampling::SamplerKind;
use crate::trainer::{ConvergenceConfig, PretrainConfig, QuadraticConfig, StepRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LatticeSource {
    Synthetic(SyntheticSpec),
    /// A lattice JSON header with its CSV body alongside. Relative paths
    /// resolve against the config file's directory.
    File { path: PathBuf },
}

impl Default for LatticeSource {
    fn default() -> Self {
        LatticeSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratificationConfig {
    pub scheme: Scheme,
    pub cell: Vec<usize>,
}

impl Default for StratificationConfig {
    fn default() -> Self {
        StratificationConfig {
            scheme: Scheme::GridClass,
            cell: vec![16, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub n: usize,
    pub trials: usize,
    /// Test functions; the default battery when empty.
    pub functions: Vec<HSpec>,
    /// Monte-Carlo means must lie within this many standard errors.
    pub mean_sigmas: f64,
    /// Relative tolerance of Monte-Carlo against analytic variances.
    pub var_rel_tol: f64,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            n: 256,
            trials: 100_000,
            functions: Vec::new(),
            mean_sigmas: 4.0,
            var_rel_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    /// Independent runs per sampler.
    pub runs: usize,
    pub n_anchors: usize,
    pub hidden: usize,
    pub n_rep: usize,
    /// Seed of the initial weights, shared by every run so that runs differ
    /// only in their anchor draws.
    pub init_seed: u64,
    /// Checkpoint statistics average the logged loss over this many steps
    /// ending at the checkpoint.
    pub window: usize,
    /// Strata of the training anchors. Plain grid cells by default: their
    /// allocation is exactly proportional, so SG batches carry no
    /// class-composition bias.
    pub stratification: StratificationConfig,
    pub sgd: ConvergenceConfig,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            runs: 10,
            n_anchors: 256,
            hidden: 16,
            n_rep: 8,
            init_seed: 0,
            window: 1,
            stratification: StratificationConfig {
                scheme: Scheme::Grid,
                cell: vec![16, 16],
            },
            sgd: ConvergenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    pub seeds: usize,
    /// Horizons of the `c1/T + c2/sqrt(T)` fit.
    pub horizons: Vec<usize>,
    /// One-sided sign-test level for "c2 grows with sigma".
    pub alpha: f64,
    pub quadratic: QuadraticConfig,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            sigmas: vec![0.0, 0.01, 0.02, 0.04],
            seeds: 30,
            horizons: vec![100, 200, 400, 800, 1600, 3200],
            alpha: 0.05,
            quadratic: QuadraticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub sampler: SamplerKind,
    pub n_anchors: usize,
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    pub n_rep: usize,
    /// Extra synthetic images for the warm-up; 0 skips it. With a file
    /// lattice the warm-up uses the lattice itself.
    pub pretrain_images: usize,
    pub pretrain: PretrainConfig,
    pub finetune: FineTuneConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            sampler: SamplerKind::Sg,
            n_anchors: 256,
            steps: 100,
            lr: 0.05,
            hidden: 16,
            n_rep: 8,
            pretrain_images: 4,
            pretrain: PretrainConfig::default(),
            finetune: FineTuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub samplers: Vec<SamplerKind>,
    pub lattice: LatticeSource,
    pub stratification: StratificationConfig,
    pub variance: VarianceSection,
    pub convergence: ConvergenceSection,
    pub sweep: SweepSection,
    pub train: TrainSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("results"),
            samplers: SamplerKind::ALL.to_vec(),
            lattice: LatticeSource::default(),
            stratification: StratificationConfig::default(),
            variance: VarianceSection::default(),
            convergence: ConvergenceSection::default(),
            sweep: SweepSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML and resolves relative file paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if let LatticeSource::File { path } = &mut cfg.lattice {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        ExperimentConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.samplers.is_empty() {
            return Err(Error::invalid("at least one sampler is required"));
        }
        if let LatticeSource::File { path } = &self.lattice {
            if !path.is_file() {
                return Err(Error::invalid(format!(
                    "lattice file {} does not exist",
                    path.display()
                )));
            }
        }
        let v = &self.variance;
        if v.n == 0 || v.trials < 2 || !(v.mean_sigmas > 0.0) || !(v.var_rel_tol > 0.0) {
            return Err(Error::invalid(
                "variance needs n >= 1, trials >= 2 and positive tolerances",
            ));
        }
        let c = &self.convergence;
        if c.runs == 0 || c.n_anchors == 0 || c.hidden == 0 || c.n_rep == 0 || c.window == 0 {
            return Err(Error::invalid(
                "convergence runs, n_anchors, hidden, n_rep and window must be positive",
            ));
        }
        c.sgd.validate()?;
        let s = &self.sweep;
        if s.seeds == 0 || s.sigmas.is_empty() || s.horizons.len() < 2 {
            return Err(Error::invalid(
                "sweep needs seeds >= 1, a noise level and at least two horizons",
            ));
        }
        if s.sigmas.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("sweep noise levels must be finite and nonnegative"));
        }
        let t = &self.train;
        if t.n_anchors == 0 || t.steps == 0 || !(t.lr > 0.0) || t.hidden == 0 || t.n_rep == 0 {
            return Err(Error::invalid(
                "train needs positive n_anchors, steps, lr, hidden and n_rep",
            ));
        }
        t.finetune.validate()?;
        Ok(())
    }

    pub fn lattice(&self) -> Result<PixelLattice> {
        match &self.lattice {
            LatticeSource::Synthetic(spec) => generate(spec),
            LatticeSource::File { path } => load_lattice(path),
        }
    }

    /// Strata of the variance study and the train subcommand.
    pub fn stratify(&self, lattice: &PixelLattice) -> Result<Stratification> {
        let s = &self.stratification;
        build_stratification(lattice, s.scheme, &s.cell)
    }

    /// Strata of the convergence experiment.
    pub fn convergence_strata(&self, lattice: &PixelLattice) -> Result<Stratification> {
        let s = &self.convergence.stratification;
        build_stratification(lattice, s.scheme, &s.cell)
    }

    /// The trainer config of the convergence experiment.
    pub fn sgd(&self) -> &ConvergenceConfig {
        &self.convergence.sgd
    }

    /// The constant-step trainer config of the train subcommand.
    pub fn train_sgd(&self) -> ConvergenceConfig {
        let t = &self.train;
        ConvergenceConfig {
            steps: t.steps,
            rule: StepRule::Constant { lr: t.lr },
            objective: crate::trainer::Objective::finetune(&t.finetune),
            finetune: t.finetune.clone(),
            ..ConvergenceConfig::default()
        }
    }
}
