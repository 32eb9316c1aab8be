//! Multi-run SGD trajectories per sampler, and the controlled-noise sweep.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::checks::{Check, CheckFile, Outcome};
use super::config::ExperimentConfig;
use super::{run_seed, write_atomic, write_csv, write_json};
use crate::error::{Error, Result};
use crate::estimate::CheckStatus;
use crate::numeric;
use crate::sampling::SamplerKind;
use crate::trainer::{
    noise_controlled_descent, plan_step_size, rate_fits, sgd_train, slope, ModelShape, StepPlan,
    ToyModel, TrainData, TrajectoryLog, TRAJECTORY_HEADER,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStat {
    /// Steps taken when the checkpoint is read.
    pub step: usize,
    /// The logged training-batch contrastive loss (averaged over the
    /// window ending here): mean and unbiased variance across runs. The
    /// stability checks compare these.
    pub sampled_mean: f64,
    pub sampled_var: f64,
    /// Contrastive loss on the fixed evaluation set, as a diagnostic;
    /// `None` when scoring is disabled.
    pub eval_mean: Option<f64>,
    pub eval_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerSummary {
    pub sampler: SamplerKind,
    pub plan: StepPlan,
    pub seeds: Vec<u64>,
    /// Seeds whose run hit a non-finite loss, with the failing step.
    pub diverged: Vec<(u64, usize)>,
    /// Per run; `None` when the threshold was never reached.
    pub steps_to_threshold: Vec<Option<usize>>,
    /// Mean over runs, counting unreached runs as `steps`.
    pub mean_steps_to_threshold: f64,
    pub checkpoints: Vec<CheckpointStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ConvergenceSummary {
    steps: usize,
    runs: usize,
    n_anchors: usize,
    epsilon: f64,
    window: usize,
    samplers: Vec<SamplerSummary>,
}

fn run_all(
    model: &ToyModel,
    data: &TrainData,
    kind: SamplerKind,
    cfg: &ExperimentConfig,
    plan: &StepPlan,
) -> Result<Vec<(TrajectoryLog, Option<usize>)>> {
    let seeds: Vec<u64> = (0..cfg.convergence.runs)
        .map(|r| run_seed(cfg.seed, r))
        .collect();
    seeds
        .par_iter()
        .map(|&seed| match sgd_train(model, data, kind, cfg.sgd(), plan, seed) {
            Ok(log) => Ok((log, None)),
            Err(Error::Diverged {
                step,
                partial: Some(log),
            }) => Ok((*log, Some(step))),
            Err(e) => Err(e),
        })
        .collect()
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    if values.len() > 1 {
        numeric::sample_mean_var(values)
    } else {
        (values[0], 0.0)
    }
}

/// Per checkpoint: the fixed-set score, and the logged contrastive loss
/// averaged over the `window` steps ending there, each summarized across runs.
fn checkpoint_stats(logs: &[&TrajectoryLog], steps: &[usize], window: usize) -> Vec<CheckpointStat> {
    steps
        .iter()
        .map(|&step| {
            let lo = step.saturating_sub(window);
            let sampled: Vec<f64> = logs
                .iter()
                .map(|log| {
                    let c = log.contrast();
                    let hi = step.min(c.len());
                    if hi <= lo {
                        f64::NAN
                    } else {
                        numeric::sum(c[lo..hi].iter().copied()) / (hi - lo) as f64
                    }
                })
                .collect();
            let evals: Option<Vec<f64>> = logs
                .iter()
                .map(|log| log.evals.iter().find(|e| e.step == step).map(|e| e.contrast))
                .collect();
            let (sampled_mean, sampled_var) = mean_and_var(&sampled);
            let eval = evals.map(|v| mean_and_var(&v));
            CheckpointStat {
                step,
                eval_mean: eval.map(|e| e.0),
                eval_var: eval.map(|e| e.1),
                sampled_mean,
                sampled_var,
            }
        })
        .collect()
}

fn per_step_table(logs: &[&TrajectoryLog], steps: usize) -> Vec<Vec<String>> {
    (0..steps)
        .map(|t| {
            let column = |f: &dyn Fn(&crate::trainer::StepRecord) -> f64| -> (f64, f64, usize) {
                let v: Vec<f64> = logs
                    .iter()
                    .filter_map(|l| l.records.get(t).map(f))
                    .collect();
                match v.len() {
                    0 => (f64::NAN, f64::NAN, 0),
                    1 => (v[0], 0.0, 1),
                    k => {
                        let (m, var) = numeric::sample_mean_var(&v);
                        (m, var.sqrt(), k)
                    }
                }
            };
            let (cm, cs, k) = column(&|r| r.parts.contrast);
            let (tm, ts, _) = column(&|r| r.loss_total);
            let (gm, gs, _) = column(&|r| r.grad_sq_norm);
            vec![
                t.to_string(),
                k.to_string(),
                cm.to_string(),
                cs.to_string(),
                tm.to_string(),
                ts.to_string(),
                gm.to_string(),
                gs.to_string(),
            ]
        })
        .collect()
}

fn trajectory_bytes(logs: &[&TrajectoryLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    for log in logs {
        log.write_csv(&mut w)?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

/// Trains `convergence.runs` runs per sampler from one shared
/// initialization and writes `trajectory_<sampler>.csv`,
/// `plot_convergence_<sampler>.csv`, `convergence_summary.json` and
/// `convergence_checks.json`.
///
/// Runs execute on the current rayon pool and are reduced in seed order.
pub fn run_convergence(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let c = &cfg.convergence;
    let lattice = cfg.lattice()?;
    let feat_dim = lattice
        .payload()
        .ok_or_else(|| Error::invalid("convergence runs need a lattice with a feature payload"))?
        .dim();
    let shape = ModelShape {
        feat_dim,
        hidden: c.hidden,
        num_classes: lattice.num_classes(),
        n_rep: c.n_rep,
    };
    let strat = cfg.convergence_strata(&lattice)?;
    let data = TrainData::new(lattice, strat, c.n_anchors)?;
    let model = ToyModel::init(shape, c.init_seed)?;
    let sgd = cfg.sgd();
    let checkpoint_steps = sgd.checkpoint_steps();

    let mut files: Vec<PathBuf> = Vec::new();
    let mut summaries = Vec::new();
    for &kind in &cfg.samplers {
        let plan = plan_step_size(&model, &data, kind, sgd)?;
        let mut runs = run_all(&model, &data, kind, cfg, &plan)?;
        runs.sort_by_key(|(log, _)| log.seed);
        let logs: Vec<&TrajectoryLog> = runs.iter().map(|(l, _)| l).collect();

        let path = out.join(format!("trajectory_{}.csv", kind.name()));
        write_atomic(&path, &trajectory_bytes(&logs)?)?;
        files.push(path);
        let path = out.join(format!("plot_convergence_{}.csv", kind.name()));
        write_csv(
            &path,
            &[
                "step",
                "runs",
                "contrast_mean",
                "contrast_std",
                "total_mean",
                "total_std",
                "grad_sq_mean",
                "grad_sq_std",
            ],
            per_step_table(&logs, sgd.steps),
        )?;
        files.push(path);

        let reached: Vec<Option<usize>> = logs
            .iter()
            .map(|l| l.steps_to_threshold(sgd.epsilon))
            .collect();
        let censored: Vec<f64> = reached
            .iter()
            .map(|r| r.unwrap_or(sgd.steps) as f64)
            .collect();
        summaries.push(SamplerSummary {
            sampler: kind,
            plan,
            seeds: logs.iter().map(|l| l.seed).collect(),
            diverged: runs
                .iter()
                .filter_map(|(l, d)| d.map(|step| (l.seed, step)))
                .collect(),
            steps_to_threshold: reached,
            mean_steps_to_threshold: numeric::mean_var(&censored).0,
            checkpoints: checkpoint_stats(&logs, &checkpoint_steps, c.window),
        });
    }

    let path = out.join("plot_checkpoints.csv");
    write_csv(
        &path,
        &[
            "sampler",
            "step",
            "eval_mean",
            "eval_std",
            "sampled_mean",
            "sampled_std",
        ],
        summaries.iter().flat_map(|s| {
            s.checkpoints.iter().map(move |c| {
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
                vec![
                    s.sampler.name().to_string(),
                    c.step.to_string(),
                    opt(c.eval_mean),
                    opt(c.eval_var.map(f64::sqrt)),
                    c.sampled_mean.to_string(),
                    c.sampled_var.sqrt().to_string(),
                ]
            })
        }),
    )?;
    files.push(path);

    let checks = stability_checks(&summaries);
    let summary = ConvergenceSummary {
        steps: sgd.steps,
        runs: c.runs,
        n_anchors: c.n_anchors,
        epsilon: sgd.epsilon,
        window: c.window,
        samplers: summaries,
    };
    let path = out.join("convergence_summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    let path = out.join("convergence_checks.json");
    write_json(&path, &CheckFile {
        checks: checks.clone(),
    })?;
    files.push(path);
    Ok(Outcome { checks, files })
}

/// SG against NS: final-checkpoint mean, inter-run variance at all but at
/// most one checkpoint, and mean steps-to-threshold.
fn stability_checks(summaries: &[SamplerSummary]) -> Vec<Check> {
    let find = |k| summaries.iter().find(|s| s.sampler == k);
    let (Some(sg), Some(ns)) = (find(SamplerKind::Sg), find(SamplerKind::Ns)) else {
        return vec![Check::new(
            "sg_vs_ns",
            CheckStatus::NotApplicable,
            "needs both the ns and sg samplers",
        )];
    };
    let mut out = Vec::new();
    for (name, s) in [("sg", sg), ("ns", ns)] {
        out.push(Check::from_bool(
            format!("no_divergence[{name}]"),
            s.diverged.is_empty(),
            format!("{} diverged runs", s.diverged.len()),
        ));
    }
    let (a, b) = (sg.checkpoints.last(), ns.checkpoints.last());
    if let (Some(a), Some(b)) = (a, b) {
        let (ma, mb) = (a.sampled_mean, b.sampled_mean);
        out.push(Check::from_bool(
            "sg_final_contrast_le_ns",
            ma <= mb,
            format!("at step {}: sg {ma:.6} vs ns {mb:.6}", a.step),
        ));
    }
    let total = sg.checkpoints.len();
    let ok = sg
        .checkpoints
        .iter()
        .zip(&ns.checkpoints)
        .filter(|(a, b)| a.sampled_var <= b.sampled_var)
        .count();
    out.push(Check::from_bool(
        "sg_variance_le_ns",
        total > 0 && ok + 1 >= total,
        format!("sg variance <= ns variance at {ok} of {total} checkpoints (one inversion allowed)"),
    ));
    out.push(Check::from_bool(
        "sg_steps_to_threshold_le_ns",
        sg.mean_steps_to_threshold <= ns.mean_steps_to_threshold,
        format!(
            "mean steps to threshold: sg {:.2} vs ns {:.2}",
            sg.mean_steps_to_threshold, ns.mean_steps_to_threshold
        ),
    ));
    out
}

/// One-sided sign test: probability of at least `positive` successes out of
/// `trials` fair coin flips.
pub fn sign_test_p_value(positive: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    let mut log_choose = 0.0f64; // ln C(trials, k), built up from k = 0
    for k in 0..=trials {
        if k > 0 {
            log_choose += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= positive {
            p += (log_choose - trials as f64 * std::f64::consts::LN_2).exp();
        }
    }
    p.min(1.0)
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary {
    sigmas: Vec<f64>,
    seeds: Vec<u64>,
    horizons: Vec<usize>,
    rows: Vec<crate::trainer::NoiseSweepRow>,
    /// Per seed, the slope of fitted `c2` against sigma.
    c2_slopes: Vec<f64>,
    positive_slopes: usize,
    sign_test_p: f64,
}

/// The controlled-noise quadratic sweep; writes `noise_sweep.csv`,
/// `sweep_fits.csv`, `sweep_summary.json` and `sweep_checks.json`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let s = &cfg.sweep;
    let seeds: Vec<u64> = (0..s.seeds).map(|i| run_seed(cfg.seed, i)).collect();
    let per_seed_rows: Vec<Vec<crate::trainer::NoiseSweepRow>> = seeds
        .par_iter()
        .map(|&seed| noise_controlled_descent(&s.quadratic, &s.sigmas, &[seed]))
        .collect::<Result<_>>()?;
    let rows: Vec<crate::trainer::NoiseSweepRow> = (0..s.sigmas.len())
        .map(|i| {
            let per_seed: Vec<usize> = per_seed_rows.iter().map(|r| r[i].per_seed[0]).collect();
            let as_f: Vec<f64> = per_seed.iter().map(|&v| v as f64).collect();
            let (mean_steps, var) = numeric::mean_var(&as_f);
            crate::trainer::NoiseSweepRow {
                sigma: s.sigmas[i],
                lr: per_seed_rows[0][i].lr,
                mean_steps,
                std_steps: var.sqrt(),
                censored: per_seed
                    .iter()
                    .filter(|&&v| v == s.quadratic.max_steps)
                    .count(),
                per_seed,
            }
        })
        .collect();
    let fits: Vec<Vec<(f64, f64)>> = seeds
        .par_iter()
        .map(|&seed| rate_fits(&s.quadratic, &s.sigmas, &s.horizons, &[seed]).map(|mut v| v.remove(0)))
        .collect::<Result<_>>()?;
    let c2_slopes: Vec<f64> = fits
        .iter()
        .map(|f| slope(&s.sigmas, &f.iter().map(|p| p.1).collect::<Vec<_>>()))
        .collect();
    let positive = c2_slopes.iter().filter(|&&v| v > 0.0).count();
    let nonzero = c2_slopes.iter().filter(|&&v| v != 0.0).count();
    let p = sign_test_p_value(positive, nonzero);

    let mut files = Vec::new();
    let path = out.join("noise_sweep.csv");
    write_csv(
        &path,
        &["sigma", "lr", "mean_steps", "std_steps", "censored", "seeds"],
        rows.iter().map(|r| {
            vec![
                r.sigma.to_string(),
                r.lr.to_string(),
                r.mean_steps.to_string(),
                r.std_steps.to_string(),
                r.censored.to_string(),
                r.per_seed.len().to_string(),
            ]
        }),
    )?;
    files.push(path);
    let path = out.join("sweep_fits.csv");
    write_csv(
        &path,
        &["seed", "sigma", "c1", "c2"],
        seeds.iter().zip(&fits).flat_map(|(seed, f)| {
            s.sigmas.iter().zip(f).map(move |(sigma, (c1, c2))| {
                vec![
                    seed.to_string(),
                    sigma.to_string(),
                    c1.to_string(),
                    c2.to_string(),
                ]
            })
        }),
    )?;
    files.push(path);

    let mut sorted = s.sigmas.clone();
    sorted.sort_by(f64::total_cmp);
    let ordered = sorted == s.sigmas;
    let monotone = ordered && rows.windows(2).all(|w| w[1].mean_steps > w[0].mean_steps);
    let checks = vec![
        Check::from_bool(
            "sweep_monotone",
            monotone,
            format!(
                "mean steps by sigma: {}",
                rows.iter()
                    .map(|r| format!("{}: {:.2}", r.sigma, r.mean_steps))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
        Check::from_bool(
            "c2_grows_with_sigma",
            p <= s.alpha,
            format!("{positive} of {nonzero} seeds have a positive c2 slope, sign-test p = {p:.3e}"),
        ),
    ];
    let summary = SweepSummary {
        sigmas: s.sigmas.clone(),
        seeds,
        horizons: s.horizons.clone(),
        rows,
        c2_slopes,
        positive_slopes: positive,
        sign_test_p: p,
    };
    let path = out.join("sweep_summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    let path = out.join("sweep_checks.json");
    write_json(&path, &CheckFile {
        checks: checks.clone(),
    })?;
    files.push(path);
    Ok(Outcome { checks, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_tails() {
        assert!((sign_test_p_value(0, 10) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        // P(X >= 20 | n = 30) = 0.0494
        assert!((sign_test_p_value(20, 30) - 0.049_368_3).abs() < 1e-6);
    }
}
