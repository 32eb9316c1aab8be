//! SGD on a known quadratic with exactly injected gradient noise.
//!
//! `f(x) = 1/2 sum_i l_i x_i^2` with eigenvalues `l_i` evenly spaced in
//! `[l_min, l_max]`, started from the all-ones point. A noisy gradient is
//! `l * x + sigma * xi` with `xi` standard normal. Noise draws for a seed are
//! shared across noise levels (common random numbers), so level-to-level
//! differences are not swamped by seed-to-seed ones.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub l_min: f64,
    pub l_max: f64,
    /// Threshold on the true squared gradient norm.
    pub epsilon: f64,
    /// Step cap; runs that never reach the threshold report this value.
    pub max_steps: usize,
    /// `alpha` of the step rule `min(1/L, alpha / (sigma sqrt(T)))`, with
    /// `T = max_steps`.
    pub alpha: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        QuadraticConfig {
            dim: 10,
            l_min: 0.1,
            l_max: 1.0,
            epsilon: 1e-3,
            max_steps: 2000,
            alpha: 1.0,
        }
    }
}

impl QuadraticConfig {
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.l_max];
        }
        (0..self.dim)
            .map(|i| self.l_min + (self.l_max - self.l_min) * i as f64 / (self.dim - 1) as f64)
            .collect()
    }

    pub fn step_size(&self, sigma: f64, horizon: usize) -> f64 {
        let fast = 1.0 / self.l_max;
        if sigma == 0.0 {
            fast
        } else {
            fast.min(self.alpha / (sigma * (horizon as f64).sqrt()))
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.l_min > 0.0 && self.l_min <= self.l_max) {
            return Err(Error::invalid("need dim >= 1 and 0 < l_min <= l_max"));
        }
        if !(self.alpha > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::invalid(
                "alpha must be positive and epsilon nonnegative",
            ));
        }
        Ok(())
    }
}

/// Squared true-gradient norms `|grad f(x_t)|^2` for `t = 0..=steps`.
pub fn quadratic_run(
    cfg: &QuadraticConfig,
    sigma: f64,
    lr: f64,
    steps: usize,
    seed: u64,
) -> Vec<f64> {
    let lambda = cfg.eigenvalues();
    let mut x = vec![1.0; cfg.dim];
    let mut rng = StreamKey::new(seed, Domain::QuadraticNoise).rng();
    let grad_sq = |x: &[f64]| -> f64 { x.iter().zip(&lambda).map(|(v, l)| (l * v).powi(2)).sum() };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(grad_sq(&x));
    for _ in 0..steps {
        for (v, l) in x.iter_mut().zip(&lambda) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *v -= lr * (l * *v + sigma * xi);
        }
        out.push(grad_sq(&x));
    }
    out
}

/// Steps until the true squared gradient norm first drops to `epsilon`
/// (0 if it starts there), capped at `max_steps`.
pub fn steps_to_threshold(cfg: &QuadraticConfig, sigma: f64, seed: u64) -> usize {
    let lr = cfg.step_size(sigma, cfg.max_steps);
    quadratic_run(cfg, sigma, lr, cfg.max_steps, seed)
        .iter()
        .position(|&g| g <= cfg.epsilon)
        .unwrap_or(cfg.max_steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepRow {
    pub sigma: f64,
    pub lr: f64,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub censored: usize,
    pub per_seed: Vec<usize>,
}

/// Steps-to-threshold for every noise level and seed.
pub fn noise_controlled_descent(
    cfg: &QuadraticConfig,
    sigmas: &[f64],
    seeds: &[u64],
) -> Result<Vec<NoiseSweepRow>> {
    cfg.validate()?;
    if sigmas.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::invalid("noise levels must be nonnegative"));
    }
    Ok(sigmas
        .iter()
        .map(|&sigma| {
            let per_seed: Vec<usize> = seeds
                .iter()
                .map(|&s| steps_to_threshold(cfg, sigma, s))
                .collect();
            let as_f: Vec<f64> = per_seed.iter().map(|&v| v as f64).collect();
            let (mean_steps, var) = crate::numeric::mean_var(&as_f);
            NoiseSweepRow {
                sigma,
                lr: cfg.step_size(sigma, cfg.max_steps),
                mean_steps,
                std_steps: var.sqrt(),
                censored: per_seed.iter().filter(|&&s| s == cfg.max_steps).count(),
                per_seed,
            }
        })
        .collect())
}

/// Least-squares fit of `y(T) = c1 / T + c2 / sqrt(T)`.
pub fn fit_rate(horizons: &[usize], values: &[f64]) -> Result<(f64, f64)> {
    if horizons.len() != values.len() || horizons.len() < 2 {
        return Err(Error::invalid("need at least two (horizon, value) pairs"));
    }
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in horizons.iter().zip(values) {
        let a = 1.0 / t as f64;
        let b = 1.0 / (t as f64).sqrt();
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        b1 += a * y;
        b2 += b * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 {
        return Err(Error::invalid("horizons must be distinct"));
    }
    Ok(((s22 * b1 - s12 * b2) / det, (s11 * b2 - s12 * b1) / det))
}

/// Mean squared true-gradient norm over a run of `horizon` steps, with the
/// step size of that horizon.
pub fn average_grad_sq(cfg: &QuadraticConfig, sigma: f64, horizon: usize, seed: u64) -> f64 {
    let lr = cfg.step_size(sigma, horizon);
    let g = quadratic_run(cfg, sigma, lr, horizon, seed);
    g[..horizon].iter().sum::<f64>() / horizon as f64
}

/// Per seed: fitted `(c1, c2)` at each noise level.
pub fn rate_fits(
    cfg: &QuadraticConfig,
    sigmas: &[f64],
    horizons: &[usize],
    seeds: &[u64],
) -> Result<Vec<Vec<(f64, f64)>>> {
    cfg.validate()?;
    seeds
        .iter()
        .map(|&seed| {
            sigmas
                .iter()
                .map(|&sigma| {
                    let ys: Vec<f64> = horizons
                        .iter()
                        .map(|&t| average_grad_sq(cfg, sigma, t, seed))
                        .collect();
                    fit_rate(horizons, &ys)
                })
                .collect()
        })
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent closed form: with no noise each coordinate contracts by
    /// `(1 - lr l_i)` per step.
    fn closed_form_steps(cfg: &QuadraticConfig) -> usize {
        let lr = 1.0 / cfg.l_max;
        let ls = cfg.eigenvalues();
        (0..)
            .find(|&t| {
                ls.iter()
                    .map(|l| l * l * (1.0 - lr * l).powi(2 * t as i32))
                    .sum::<f64>()
                    <= cfg.epsilon
            })
            .unwrap()
    }

    #[test]
    fn noiseless_matches_closed_form() {
        for eps in [1e-2, 1e-3, 1e-5] {
            let cfg = QuadraticConfig {
                epsilon: eps,
                ..QuadraticConfig::default()
            };
            let got = steps_to_threshold(&cfg, 0.0, 7) as i64;
            assert!((got - closed_form_steps(&cfg) as i64).abs() <= 1);
        }
    }

    #[test]
    fn large_threshold_needs_no_steps() {
        let cfg = QuadraticConfig {
            epsilon: 100.0,
            ..QuadraticConfig::default()
        };
        assert_eq!(steps_to_threshold(&cfg, 0.5, 1), 0);
    }

    #[test]
    fn fit_recovers_exact_coefficients() {
        let hs = [100, 200, 400, 800];
        let ys: Vec<f64> = hs
            .iter()
            .map(|&t| 3.0 / t as f64 + 0.5 / (t as f64).sqrt())
            .collect();
        let (c1, c2) = fit_rate(&hs, &ys).unwrap();
        assert!((c1 - 3.0).abs() < 1e-9 && (c2 - 0.5).abs() < 1e-10);
    }

    #[test]
    fn negative_noise_is_rejected() {
        assert!(noise_controlled_descent(&QuadraticConfig::default(), &[-1.0], &[0]).is_err());
    }
}
