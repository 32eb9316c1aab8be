//! The variance study: analytic and Monte-Carlo moments of every sampler
//! for a battery of test functions.

use std::path::Path;

use serde::Serialize;

use super::checks::{Check, CheckFile, Outcome};
use super::config::ExperimentConfig;
use super::hfun::HSpec;
use super::{write_csv, write_json};
use crate::error::Result;
use crate::estimate::{
    check_lemma_sag, check_theorem_sg, monte_carlo_study_tabulated, CheckStatus, LemmaCheck,
    TheoremCheck, VarianceReport,
};
use crate::sampling::{allocate_proportional, SamplerKind};

#[derive(Debug, Clone, Serialize)]
struct FunctionResult {
    report: VarianceReport,
    theorem: TheoremCheck,
    lemma: LemmaCheck,
}

#[derive(Debug, Clone, Serialize)]
struct StudyFile {
    n: usize,
    population: usize,
    strata: usize,
    trials: usize,
    seed: u64,
    /// `n > |P|`: draws necessarily repeat pixels.
    n_exceeds_population: bool,
    allocation: Vec<usize>,
    exactly_proportional: bool,
    functions: Vec<FunctionResult>,
}

fn mc_checks(report: &VarianceReport, cfg: &ExperimentConfig) -> Vec<Check> {
    let v = &cfg.variance;
    let mut out = Vec::new();
    for mc in &report.monte_carlo {
        let kind = mc.sampler;
        let tag = format!("{}/{}", report.function, kind.name());
        let an_mean = report.analytic.mean(kind);
        let an_var = report.analytic.var(kind);
        let mean_tol = v.mean_sigmas * an_var.max(0.0).sqrt() / (mc.trials as f64).sqrt()
            + 1e-12 * an_mean.abs().max(1.0);
        let dm = (mc.mean - an_mean).abs();
        out.push(Check::from_bool(
            format!("mc_mean[{tag}]"),
            dm <= mean_tol,
            format!("|mc - analytic| = {dm:.3e}, tolerance {mean_tol:.3e}"),
        ));
        // relative tolerance, widened to 5 standard errors when the
        // estimate's own sampling error is larger
        let var_tol = (v.var_rel_tol * an_var).max(5.0 * mc.var_se) + 1e-15;
        let dv = (mc.var - an_var).abs();
        out.push(Check::from_bool(
            format!("mc_var[{tag}]"),
            dv <= var_tol,
            format!(
                "mc {:.6e} vs analytic {an_var:.6e}, |diff| {dv:.3e}, tolerance {var_tol:.3e}",
                mc.var
            ),
        ));
    }
    out
}

/// Runs the study described by `cfg` and writes into `out`:
/// `variance_report.json`, `variance.csv`, `plot_sampler_variance.csv`,
/// `plot_gap_decomposition.csv` and `variance_checks.json`.
pub fn run_variance_study(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let strat = cfg.stratify(&lattice)?;
    let n = cfg.variance.n;
    let alloc = allocate_proportional(&strat, n)?;
    let functions = if cfg.variance.functions.is_empty() {
        HSpec::default_battery(&lattice)
    } else {
        cfg.variance.functions.clone()
    };

    let mut results = Vec::new();
    let mut checks = Vec::new();
    if n > lattice.len() {
        checks.push(Check::new(
            "n_within_population",
            CheckStatus::NotApplicable,
            format!("n = {n} exceeds |P| = {}; draws repeat pixels", lattice.len()),
        ));
    }
    for spec in &functions {
        let table = spec.tabulate(&lattice, &strat)?;
        let report = monte_carlo_study_tabulated(
            &table.values,
            &table.name,
            &strat,
            &alloc,
            &cfg.samplers,
            cfg.variance.trials,
            cfg.seed,
        )?;
        let theorem = check_theorem_sg(&report, &alloc);
        let lemma = check_lemma_sag(&report);
        let name = &report.function;
        checks.push(Check::new(
            format!("theorem_sg[{name}]"),
            theorem.status,
            if theorem.status == CheckStatus::NotApplicable {
                "allocation is not exactly proportional".to_string()
            } else {
                format!(
                    "var_ns - var_sg = {:.6e}, between-stratum term = {:.6e}",
                    theorem.gap_analytic, theorem.gap_formula
                )
            },
        ));
        checks.push(Check::new(
            format!("lemma_sag[{name}]"),
            lemma.status,
            format!("var_sag / var_sg = {:.6}", lemma.ratio),
        ));
        checks.extend(mc_checks(&report, cfg));
        results.push(FunctionResult {
            report,
            theorem,
            lemma,
        });
    }

    let study = StudyFile {
        n,
        population: lattice.len(),
        strata: strat.len(),
        trials: cfg.variance.trials,
        seed: cfg.seed,
        n_exceeds_population: n > lattice.len(),
        exactly_proportional: alloc.is_exactly_proportional(&strat),
        allocation: alloc.per_stratum.clone(),
        functions: results,
    };
    let files = write_outputs(&study, out)?;
    write_json(&out.join("variance_checks.json"), &CheckFile {
        checks: checks.clone(),
    })?;
    let mut files = files;
    files.push(out.join("variance_checks.json"));
    Ok(Outcome { checks, files })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_outputs(study: &StudyFile, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    let report_path = out.join("variance_report.json");
    write_json(&report_path, study)?;

    let table_path = out.join("variance.csv");
    write_csv(
        &table_path,
        &[
            "function",
            "n",
            "h_true",
            "var_ns",
            "var_sg",
            "var_sag",
            "gap_weighted",
            "gap_unweighted",
            "mc_var_ns",
            "mc_var_sg",
            "mc_var_sag",
            "theorem_sg",
            "lemma_sag",
        ],
        study.functions.iter().map(|f| {
            let r = &f.report;
            let a = &r.analytic;
            let mc = |k| opt(r.monte_carlo_for(k).map(|m| m.var));
            vec![
                r.function.clone(),
                r.n.to_string(),
                r.h_true.to_string(),
                a.var_ns.to_string(),
                a.var_sg.to_string(),
                a.var_sag.to_string(),
                a.gap_weighted.to_string(),
                a.gap_unweighted.to_string(),
                mc(SamplerKind::Ns),
                mc(SamplerKind::Sg),
                mc(SamplerKind::Sag),
                f.theorem.status.label().to_string(),
                f.lemma.status.label().to_string(),
            ]
        }),
    )?;

    // sampler vs variance: one row per (function, sampler)
    let sampler_path = out.join("plot_sampler_variance.csv");
    write_csv(
        &sampler_path,
        &["function", "sampler", "analytic_var", "mc_var", "mc_var_se"],
        study.functions.iter().flat_map(|f| {
            let r = &f.report;
            SamplerKind::ALL.into_iter().map(move |k| {
                let mc = r.monte_carlo_for(k);
                vec![
                    r.function.clone(),
                    k.name().to_string(),
                    r.analytic.var(k).to_string(),
                    opt(mc.map(|m| m.var)),
                    opt(mc.map(|m| m.var_se)),
                ]
            })
        }),
    )?;

    // gap decomposition: each stratum's share of the between-stratum term
    // `(1/n) w_m (mu_m - mu)^2` and of the SG variance `w_m^2 sigma_m^2 / n_m`
    let gap_path = out.join("plot_gap_decomposition.csv");
    write_csv(
        &gap_path,
        &[
            "function",
            "stratum",
            "size",
            "weight",
            "n_m",
            "mean",
            "var",
            "between_term",
            "sg_term",
        ],
        study.functions.iter().flat_map(|f| {
            let r = &f.report;
            let mu = r.population.mean;
            let n = r.n as f64;
            r.per_stratum.iter().map(move |s| {
                let sg_term = if s.n_m > 0 {
                    s.weight * s.weight * s.var / s.n_m as f64
                } else {
                    0.0
                };
                vec![
                    r.function.clone(),
                    s.id.to_string(),
                    s.size.to_string(),
                    s.weight.to_string(),
                    s.n_m.to_string(),
                    s.mean.to_string(),
                    s.var.to_string(),
                    (s.weight * (s.mean - mu).powi(2) / n).to_string(),
                    sg_term.to_string(),
                ]
            })
        }),
    )?;
    Ok(vec![report_path, table_path, sampler_path, gap_path])
}
