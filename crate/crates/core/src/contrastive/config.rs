use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bank::DEFAULT_BANK_CAPACITY;
use crate::error::{Error, Result};

/// Loss-stack hyperparameters. Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Student temperature of the instance-discrimination softmax.
    pub tau_s: f64,
    /// Teacher temperature of the instance-discrimination softmax.
    pub tau_t: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub ema_momentum: f64,
    pub k_nn: usize,
    /// Mined views per image.
    pub d_mined: usize,
    pub bank_capacity: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            tau: 0.5,
            tau_s: 0.1,
            tau_t: 0.01,
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3: 1.0,
            ema_momentum: 0.99,
            k_nn: 5,
            d_mined: 5,
            bank_capacity: DEFAULT_BANK_CAPACITY,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau", self.tau),
            ("tau_s", self.tau_s),
            ("tau_t", self.tau_t),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a positive number")));
            }
        }
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("{name} must be nonnegative")));
            }
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::invalid("ema_momentum must lie in [0, 1)"));
        }
        if self.k_nn == 0 || self.d_mined == 0 || self.bank_capacity == 0 {
            return Err(Error::invalid(
                "k_nn, d_mined and bank_capacity must be positive",
            ));
        }
        Ok(())
    }

    /// Reads a `.json` or `.toml` file (by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: FineTuneConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sup: f64,
    pub contrast: f64,
    pub unsup: f64,
    pub nn: f64,
}

/// `L_sup + lambda1 L_contrast + lambda2 L_unsup + lambda3 L_nn`.
pub fn total_finetune_loss(parts: &LossParts, cfg: &FineTuneConfig) -> Result<f64> {
    let LossParts {
        sup,
        contrast,
        unsup,
        nn,
    } = *parts;
    if [sup, contrast, unsup, nn].iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("loss parts must be finite"));
    }
    Ok(sup + cfg.lambda1 * contrast + cfg.lambda2 * unsup + cfg.lambda3 * nn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = FineTuneConfig::default();
        assert_eq!((c.tau, c.tau_s, c.tau_t), (0.5, 0.1, 0.01));
        assert_eq!((c.lambda1, c.lambda2, c.lambda3), (0.01, 1.0, 1.0));
        assert_eq!(c.ema_momentum, 0.99);
        assert_eq!(c.d_mined, 5);
        assert_eq!(c.bank_capacity, 36);
    }

    #[test]
    fn total_loss_arithmetic() {
        let cfg = FineTuneConfig::default();
        assert_eq!(
            total_finetune_loss(&LossParts::default(), &cfg).unwrap(),
            0.0
        );
        let ones = LossParts {
            sup: 1.0,
            contrast: 1.0,
            unsup: 1.0,
            nn: 1.0,
        };
        assert!((total_finetune_loss(&ones, &cfg).unwrap() - 3.01).abs() < 1e-15);
        let bad = LossParts {
            nn: f64::NAN,
            ..ones
        };
        assert!(total_finetune_loss(&bad, &cfg).is_err());
    }

    #[test]
    fn lambda_sweep_grid_validates() {
        for l1 in [0.001, 0.005, 0.01, 0.05, 0.1, 1.0] {
            for l2 in [0.1, 0.5, 1.0, 5.0, 10.0] {
                for l3 in [0.1, 0.5, 1.0, 5.0, 10.0] {
                    let cfg = FineTuneConfig {
                        lambda1: l1,
                        lambda2: l2,
                        lambda3: l3,
                        ..FineTuneConfig::default()
                    };
                    cfg.validate().unwrap();
                }
            }
        }
        let bad = FineTuneConfig {
            tau: 0.0,
            ..FineTuneConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loads_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "tau = 0.2\nlambda1 = 0.05\n").unwrap();
        let c = FineTuneConfig::load(&t).unwrap();
        assert_eq!((c.tau, c.lambda1, c.tau_t), (0.2, 0.05, 0.01));
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"k_nn": 3}"#).unwrap();
        assert_eq!(FineTuneConfig::load(&j).unwrap().k_nn, 3);
        std::fs::write(&j, r#"{"bogus": 3}"#).unwrap();
        assert!(FineTuneConfig::load(&j).is_err());
    }
}
