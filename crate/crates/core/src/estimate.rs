//! Aggregation estimators and their exact variances.
//!
//! For a per-pixel function `h`, the target is the pixel mean
//! `H = (1/|P|) sum_p h(p)`. Stratified samples are combined in the
//! population-weighted form `sum_m w_m mean_{D_m}(h)` with `w_m = |P_m|/|P|`,
//! which coincides with the unweighted `1/M` form when strata have equal
//! sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{PixelLattice, Stratification};
use crate::numeric::{self, CompensatedSum};
use crate::sampling::{
    allocate_proportional, sample_trial, Allocation, EmptyStrata, SampleSet, SamplerKind,
};

/// A deterministic real function of a pixel.
pub trait PixelFunction: Sync {
    fn name(&self) -> &str;
    fn eval(&self, lattice: &PixelLattice, pixel: usize) -> f64;
}

/// Precomputed values, one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub name: String,
    pub values: Vec<f64>,
}

impl Tabulated {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Tabulated {
            name: name.into(),
            values,
        }
    }

    pub fn from_fn(lattice: &PixelLattice, h: &dyn PixelFunction) -> Self {
        Tabulated::new(h.name(), tabulate(lattice, h))
    }
}

impl PixelFunction for Tabulated {
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, _: &PixelLattice, pixel: usize) -> f64 {
        self.values[pixel]
    }
}

/// Adapts a closure.
pub struct FnPixel<F> {
    pub name: String,
    pub f: F,
}

impl<F> FnPixel<F>
where
    F: Fn(&PixelLattice, usize) -> f64 + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnPixel {
            name: name.into(),
            f,
        }
    }
}

impl<F> PixelFunction for FnPixel<F>
where
    F: Fn(&PixelLattice, usize) -> f64 + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, lattice: &PixelLattice, pixel: usize) -> f64 {
        (self.f)(lattice, pixel)
    }
}

pub fn tabulate(lattice: &PixelLattice, h: &dyn PixelFunction) -> Vec<f64> {
    (0..lattice.len()).map(|p| h.eval(lattice, p)).collect()
}

/// `H = (1/|P|) sum_p h(p)` with compensated summation.
pub fn aggregate_exact(lattice: &PixelLattice, h: &dyn PixelFunction) -> f64 {
    numeric::sum((0..lattice.len()).map(|p| h.eval(lattice, p))) / lattice.len() as f64
}

/// Estimate of `H` from a sample.
///
/// NS samples give the plain mean; SG and SAG samples give
/// `sum_m w_m mean_{D_m}(h)`. Empty strata are only allowed when the sample
/// was drawn in exact-empty-strata mode, in which case the exact stratum
/// mean is used.
pub fn estimate(
    sample: &SampleSet,
    strat: &Stratification,
    lattice: &PixelLattice,
    h: &dyn PixelFunction,
) -> Result<f64> {
    estimate_with(sample, strat, |p| h.eval(lattice, p))
}

/// [`estimate`] over tabulated values.
pub fn estimate_tabulated(
    sample: &SampleSet,
    strat: &Stratification,
    values: &[f64],
) -> Result<f64> {
    estimate_with(sample, strat, |p| values[p])
}

fn estimate_with(
    sample: &SampleSet,
    strat: &Stratification,
    h: impl Fn(usize) -> f64,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if sample.kind == SamplerKind::Ns {
        let total = numeric::sum(sample.pixels().map(&h));
        return Ok(total / sample.len() as f64);
    }
    let pop = strat.population() as f64;
    let mut acc = CompensatedSum::new();
    for s in &sample.strata {
        let stratum = strat
            .get(s.stratum)
            .ok_or_else(|| Error::invalid(format!("unknown stratum {}", s.stratum)))?;
        let w = stratum.len() as f64 / pop;
        let mean = if s.pixels.is_empty() {
            if !sample.exact_empty {
                return Err(Error::invalid(format!(
                    "stratum {} has no draws",
                    s.stratum
                )));
            }
            numeric::sum(stratum.pixels.iter().map(|&p| h(p))) / stratum.len() as f64
        } else {
            numeric::sum(s.pixels.iter().map(|&p| h(p))) / s.pixels.len() as f64
        };
        acc.add(w * mean);
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMoments {
    pub id: usize,
    pub size: usize,
    pub weight: f64,
    pub n_m: usize,
    /// `mu_m`
    pub mean: f64,
    /// `sigma_m^2`, population variance of `h` on the stratum.
    pub var: f64,
    /// Covariance of `h(p)` and `h(reflect(p))` for `p` uniform on the stratum.
    pub cov: f64,
    /// Variance of `h(p) + h(reflect(p))`.
    pub pair_var: f64,
    /// Mean of `h(reflect(p))`; equals `mean` whenever reflection is a bijection.
    pub reflected_mean: f64,
    pub snapped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationMoments {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVariances {
    pub mean_ns: f64,
    pub mean_sg: f64,
    pub mean_sag: f64,
    pub var_ns: f64,
    /// `sum_m w_m^2 sigma_m^2 / n_m`
    pub var_sg: f64,
    pub var_sag: f64,
    /// The alternative form `sum_m sigma_m^2 n_m / n`, kept for comparison.
    pub var_sg_alt: f64,
    /// `(1/n) sum_m w_m (mu_m - mu)^2`
    pub gap_weighted: f64,
    /// `(1/n) sum_m (mu_m - mu)^2`
    pub gap_unweighted: f64,
}

impl AnalyticVariances {
    pub fn mean(&self, kind: SamplerKind) -> f64 {
        match kind {
            SamplerKind::Ns => self.mean_ns,
            SamplerKind::Sg => self.mean_sg,
            SamplerKind::Sag => self.mean_sag,
        }
    }

    pub fn var(&self, kind: SamplerKind) -> f64 {
        match kind {
            SamplerKind::Ns => self.var_ns,
            SamplerKind::Sg => self.var_sg,
            SamplerKind::Sag => self.var_sag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub sampler: SamplerKind,
    pub mean: f64,
    /// Unbiased sample variance of the per-trial estimates.
    pub var: f64,
    pub trials: usize,
    /// Standard error of `mean`.
    pub mean_se: f64,
    /// Large-sample standard error of `var`, `sqrt((m4 - var^2) / trials)`.
    pub var_se: f64,
}

impl MonteCarloSummary {
    pub fn from_estimates(sampler: SamplerKind, estimates: &[f64]) -> Self {
        let (mean, var) = numeric::sample_mean_var(estimates);
        let t = estimates.len() as f64;
        let m4 = numeric::sum(estimates.iter().map(|e| (e - mean).powi(4))) / t;
        MonteCarloSummary {
            sampler,
            mean,
            var,
            trials: estimates.len(),
            mean_se: (var / t).sqrt(),
            var_se: ((m4 - var * var).max(0.0) / t).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub function: String,
    pub n: usize,
    pub exactly_proportional: bool,
    pub h_true: f64,
    pub per_stratum: Vec<StratumMoments>,
    pub population: PopulationMoments,
    pub analytic: AnalyticVariances,
    pub monte_carlo: Vec<MonteCarloSummary>,
    /// Pixels whose reflection had to snap to the nearest member.
    pub snapped_pixels: usize,
}

impl VarianceReport {
    /// `sum_m w_m sigma_m^2 + sum_m w_m (mu_m - mu)^2`
    pub fn total_variance_decomposition(&self) -> f64 {
        let mu = self.population.mean;
        let within = numeric::sum(self.per_stratum.iter().map(|s| s.weight * s.var));
        let between = numeric::sum(
            self.per_stratum
                .iter()
                .map(|s| s.weight * (s.mean - mu) * (s.mean - mu)),
        );
        within + between
    }

    pub fn monte_carlo_for(&self, kind: SamplerKind) -> Option<&MonteCarloSummary> {
        self.monte_carlo.iter().find(|m| m.sampler == kind)
    }

    /// One CSV row per sampler.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sampler",
            "function",
            "n",
            "h_true",
            "analytic_mean",
            "analytic_var",
            "mc_mean",
            "mc_var",
            "trials",
        ])?;
        for kind in SamplerKind::ALL {
            let mc = self.monte_carlo_for(kind);
            w.write_record([
                kind.name().to_string(),
                self.function.clone(),
                self.n.to_string(),
                self.h_true.to_string(),
                self.analytic.mean(kind).to_string(),
                self.analytic.var(kind).to_string(),
                mc.map_or(String::new(), |m| m.mean.to_string()),
                mc.map_or(String::new(), |m| m.var.to_string()),
                mc.map_or(String::new(), |m| m.trials.to_string()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Exact moments of every estimator, by enumeration over each stratum.
///
/// With `n_m` draws in stratum `m`, SG has variance `w_m^2 sigma_m^2 / n_m`
/// per stratum. SAG draws `floor(n_m/2)` pairs `(p, reflect(p))` plus one
/// unpaired draw when `n_m` is odd, so its stratum term is
/// `w_m^2 (pairs Var[h(p)+h(p')] + odd sigma_m^2) / n_m^2`, where the pair
/// variance is `2 sigma_m^2 + 2 Cov_m` whenever reflection permutes the stratum.
pub fn analytic_variance(
    lattice: &PixelLattice,
    strat: &Stratification,
    alloc: &Allocation,
    h: &dyn PixelFunction,
) -> Result<VarianceReport> {
    let values = tabulate(lattice, h);
    analytic_variance_tabulated(&values, h.name(), strat, alloc)
}

pub fn analytic_variance_tabulated(
    values: &[f64],
    name: &str,
    strat: &Stratification,
    alloc: &Allocation,
) -> Result<VarianceReport> {
    if values.len() != strat.population() {
        return Err(Error::invalid("function table does not match the lattice"));
    }
    if alloc.per_stratum.len() != strat.len() {
        return Err(Error::invalid(
            "allocation does not match the stratification",
        ));
    }
    if alloc.total == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let (mu, sigma2) = numeric::mean_var(values);
    let pop = strat.population() as f64;
    let n = alloc.total as f64;

    let mut per_stratum = Vec::with_capacity(strat.len());
    for (s, &n_m) in strat.strata().iter().zip(&alloc.per_stratum) {
        let own: Vec<f64> = s.pixels.iter().map(|&p| values[p]).collect();
        let refl: Vec<f64> = (0..s.len()).map(|i| values[s.reflect_at(i)]).collect();
        let (mean, var) = numeric::mean_var(&own);
        let (reflected_mean, _) = numeric::mean_var(&refl);
        let cov = numeric::sum(
            own.iter()
                .zip(&refl)
                .map(|(a, b)| (a - mean) * (b - reflected_mean)),
        ) / s.len() as f64;
        let pair: Vec<f64> = own.iter().zip(&refl).map(|(a, b)| a + b).collect();
        let (_, pair_var) = numeric::mean_var(&pair);
        per_stratum.push(StratumMoments {
            id: s.id,
            size: s.len(),
            weight: s.len() as f64 / pop,
            n_m,
            mean,
            var,
            cov,
            pair_var,
            reflected_mean,
            snapped: s.snapped_count(),
        });
    }

    let mut var_sg = CompensatedSum::new();
    let mut var_sag = CompensatedSum::new();
    let mut mean_sg = CompensatedSum::new();
    let mut mean_sag = CompensatedSum::new();
    let mut var_sg_alt = CompensatedSum::new();
    let mut gap_w = CompensatedSum::new();
    let mut gap_u = CompensatedSum::new();
    for m in &per_stratum {
        let w = m.weight;
        gap_w.add(w * (m.mean - mu) * (m.mean - mu));
        gap_u.add((m.mean - mu) * (m.mean - mu));
        var_sg_alt.add(m.var * m.n_m as f64 / n);
        if m.n_m == 0 {
            if alloc.empty_strata != EmptyStrata::Exact {
                return Err(Error::invalid(format!("stratum {} has no draws", m.id)));
            }
            mean_sg.add(w * m.mean);
            mean_sag.add(w * m.mean);
            continue;
        }
        let n_m = m.n_m as f64;
        let pairs = (m.n_m / 2) as f64;
        let odd = (m.n_m % 2) as f64;
        mean_sg.add(w * m.mean);
        var_sg.add(w * w * m.var / n_m);
        mean_sag.add(w * (pairs * (m.mean + m.reflected_mean) + odd * m.mean) / n_m);
        var_sag.add(w * w * (pairs * m.pair_var + odd * m.var) / (n_m * n_m));
    }

    Ok(VarianceReport {
        function: name.to_string(),
        n: alloc.total,
        exactly_proportional: alloc.is_exactly_proportional(strat),
        h_true: mu,
        per_stratum,
        population: PopulationMoments {
            mean: mu,
            var: sigma2,
        },
        analytic: AnalyticVariances {
            mean_ns: mu,
            mean_sg: mean_sg.value(),
            mean_sag: mean_sag.value(),
            var_ns: sigma2 / n,
            var_sg: var_sg.value().max(0.0),
            var_sag: var_sag.value().max(0.0),
            var_sg_alt: var_sg_alt.value(),
            gap_weighted: gap_w.value() / n,
            gap_unweighted: gap_u.value() / n,
        },
        monte_carlo: Vec::new(),
        snapped_pixels: strat.snapped_count(),
    })
}

/// Per-trial estimates for one sampler, in trial order.
///
/// Trials run on the current rayon pool; trial `t` always uses the stream
/// keyed by `(seed, sampler, t)`, so the output is independent of the
/// number of threads.
pub fn trial_estimates(
    kind: SamplerKind,
    strat: &Stratification,
    alloc: &Allocation,
    values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let sample = sample_trial(kind, strat, alloc, seed, t as u64)?;
            estimate_tabulated(&sample, strat, values)
        })
        .collect()
}

/// Analytic report plus Monte-Carlo mean and variance of every sampler.
pub fn monte_carlo_study(
    lattice: &PixelLattice,
    strat: &Stratification,
    h: &dyn PixelFunction,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    let alloc = allocate_proportional(strat, n)?;
    let values = tabulate(lattice, h);
    monte_carlo_study_tabulated(
        &values,
        h.name(),
        strat,
        &alloc,
        &SamplerKind::ALL,
        trials,
        seed,
    )
}

pub fn monte_carlo_study_tabulated(
    values: &[f64],
    name: &str,
    strat: &Stratification,
    alloc: &Allocation,
    samplers: &[SamplerKind],
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if trials < 2 {
        return Err(Error::invalid(
            "a Monte-Carlo study needs at least 2 trials",
        ));
    }
    let mut report = analytic_variance_tabulated(values, name, strat, alloc)?;
    for &kind in samplers {
        let est = trial_estimates(kind, strat, alloc, values, trials, seed)?;
        report
            .monte_carlo
            .push(MonteCarloSummary::from_estimates(kind, &est));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl CheckStatus {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    /// `var_ns - var_sg` from the analytic report.
    pub gap_analytic: f64,
    /// `(1/n) sum_m w_m (mu_m - mu)^2`
    pub gap_formula: f64,
    pub gap_unweighted: f64,
    pub status: CheckStatus,
}

pub const GAP_RELATIVE_TOLERANCE: f64 = 1e-10;
pub const LEMMA_ABSOLUTE_SLACK: f64 = 1e-12;

/// Checks `var_ns - var_sg == (1/n) sum_m w_m (mu_m - mu)^2` and
/// `var_sg <= var_ns` for exactly proportional allocations.
///
/// The difference is compared relative to `max(gap, var_ns)` so that a zero
/// gap is judged against the scale of the variances.
pub fn check_theorem_sg(report: &VarianceReport, alloc: &Allocation) -> TheoremCheck {
    let a = &report.analytic;
    let gap_analytic = a.var_ns - a.var_sg;
    let mut out = TheoremCheck {
        gap_analytic,
        gap_formula: a.gap_weighted,
        gap_unweighted: a.gap_unweighted,
        status: CheckStatus::NotApplicable,
    };
    let proportional = alloc.total == report.n
        && alloc.per_stratum.len() == report.per_stratum.len()
        && report
            .per_stratum
            .iter()
            .zip(&alloc.per_stratum)
            .all(|(m, &n_m)| {
                let pop: usize = report.per_stratum.iter().map(|s| s.size).sum();
                n_m as u128 * pop as u128 == alloc.total as u128 * m.size as u128
            });
    if !proportional {
        return out;
    }
    let scale = a.gap_weighted.abs().max(a.var_ns.abs());
    let close = (gap_analytic - a.gap_weighted).abs() <= GAP_RELATIVE_TOLERANCE * scale;
    let ordered = a.var_sg <= a.var_ns * (1.0 + GAP_RELATIVE_TOLERANCE);
    out.status = CheckStatus::from_bool(close && ordered);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// `var_sag / var_sg`; zero when both vanish.
    pub ratio: f64,
    pub status: CheckStatus,
}

/// Checks `var_sag <= 2 var_sg + 1e-12`.
pub fn check_lemma_sag(report: &VarianceReport) -> LemmaCheck {
    let a = &report.analytic;
    let ratio = if a.var_sg > 0.0 {
        a.var_sag / a.var_sg
    } else if a.var_sag > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    LemmaCheck {
        ratio,
        status: CheckStatus::from_bool(a.var_sag <= 2.0 * a.var_sg + LEMMA_ABSOLUTE_SLACK),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_grid_stratification;
    use crate::sampling::{census, sample_ns, sample_sg};

    fn table(values: Vec<f64>) -> Tabulated {
        Tabulated::new("t", values)
    }

    #[test]
    fn aggregate_constant_and_small() {
        let l = PixelLattice::uniform(vec![2, 2]).unwrap();
        assert_eq!(aggregate_exact(&l, &table(vec![3.5; 4])), 3.5);
        assert_eq!(aggregate_exact(&l, &table(vec![0.0, 2.0, 0.0, 2.0])), 1.0);
    }

    #[test]
    fn aggregate_indicator_is_class_fraction() {
        let l = PixelLattice::new(vec![2, 3], 2, vec![0, 1, 1, 0, 1, 1]).unwrap();
        let h = FnPixel::new("is0", |l: &PixelLattice, p| f64::from(l.class_of(p) == 0));
        assert!((aggregate_exact(&l, &h) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn census_estimate_is_exact() {
        let l = PixelLattice::uniform(vec![5, 4]).unwrap();
        let s = build_grid_stratification(&l, &[2, 2]).unwrap();
        let h = table((0..20).map(|i| (i as f64).sin()).collect());
        let est = estimate(&census(&s), &s, &l, &h).unwrap();
        assert!((est - aggregate_exact(&l, &h)).abs() < 1e-15);
    }

    #[test]
    fn equal_strata_weighted_form_matches_one_over_m() {
        let l = PixelLattice::uniform(vec![4, 4]).unwrap();
        let s = build_grid_stratification(&l, &[2, 2]).unwrap();
        let h = table((0..16).map(|i| (i * i) as f64).collect());
        let a = allocate_proportional(&s, 12).unwrap();
        let sample = sample_sg(&s, &a, 3).unwrap();
        let weighted = estimate(&sample, &s, &l, &h).unwrap();
        let m = sample.strata.len() as f64;
        let plain: f64 = sample
            .strata
            .iter()
            .map(|st| st.pixels.iter().map(|&p| h.values[p]).sum::<f64>() / st.pixels.len() as f64)
            .sum::<f64>()
            / m;
        assert!((weighted - plain).abs() < 1e-12);
    }

    #[test]
    fn single_stratum_matches_plain_mean() {
        let l = PixelLattice::uniform(vec![3, 3]).unwrap();
        let s = Stratification::single(&l);
        let h = table((0..9).map(|i| i as f64 * 0.5).collect());
        let ns = sample_ns(&l, 7, 11).unwrap();
        let mut as_sg = ns.clone();
        as_sg.kind = SamplerKind::Sg;
        assert!(
            (estimate(&ns, &s, &l, &h).unwrap() - estimate(&as_sg, &s, &l, &h).unwrap()).abs()
                < 1e-15
        );
    }

    #[test]
    fn empty_sample_is_rejected() {
        let l = PixelLattice::uniform(vec![2, 2]).unwrap();
        let s = Stratification::single(&l);
        let mut sample = sample_ns(&l, 1, 0).unwrap();
        sample.strata[0].pixels.clear();
        assert!(matches!(
            estimate(&sample, &s, &l, &table(vec![0.0; 4])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn exact_empty_strata_plug_in_means() {
        let l = PixelLattice::uniform(vec![1, 4]).unwrap();
        let s = Stratification::from_groups(&l, vec![vec![0, 1, 2], vec![3]]).unwrap();
        let a = Allocation::from_counts(vec![2, 0]);
        let h = table(vec![1.0, 1.0, 1.0, 5.0]);
        let sample = sample_sg(&s, &a, 0).unwrap();
        assert!(sample.exact_empty);
        assert!((estimate(&sample, &s, &l, &h).unwrap() - 2.0).abs() < 1e-15);
        let r = analytic_variance(&l, &s, &a, &h).unwrap();
        assert_eq!(r.analytic.var_sg, 0.0);
        assert!((r.analytic.mean_sg - 2.0).abs() < 1e-15);
    }

    #[test]
    fn column_strata_fixture() {
        // 2x2, h = 0 on column 0 and 2 on column 1, one stratum per column
        let l = PixelLattice::uniform(vec![2, 2]).unwrap();
        let s = Stratification::from_groups(&l, vec![vec![0, 2], vec![1, 3]]).unwrap();
        let h = table(vec![0.0, 2.0, 0.0, 2.0]);
        let a = allocate_proportional(&s, 2).unwrap();
        let r = analytic_variance(&l, &s, &a, &h).unwrap();
        assert_eq!(r.analytic.var_sg, 0.0);
        assert!((r.analytic.var_ns - 0.5).abs() < 1e-15);
        assert!((r.analytic.gap_weighted - 0.5).abs() < 1e-15);
        let c = check_theorem_sg(&r, &a);
        assert_eq!(c.status, CheckStatus::Pass);
        assert!((c.gap_analytic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_antithetic_stratum() {
        let l = PixelLattice::uniform(vec![1, 4]).unwrap();
        let s = Stratification::single(&l);
        let h = table(vec![0.0, 1.0, 3.0, 4.0]);
        let a = Allocation::from_counts(vec![2]);
        let r = analytic_variance(&l, &s, &a, &h).unwrap();
        let m = &r.per_stratum[0];
        assert!((m.var - 2.5).abs() < 1e-15);
        assert!((m.cov + 2.5).abs() < 1e-15);
        assert_eq!(r.analytic.var_sag, 0.0);
        assert_eq!(check_lemma_sag(&r).status, CheckStatus::Pass);
    }

    #[test]
    fn center_symmetric_function_makes_lemma_tight() {
        let l = PixelLattice::uniform(vec![4, 6]).unwrap();
        let s = build_grid_stratification(&l, &[2, 3]).unwrap();
        let values: Vec<f64> = (0..l.len())
            .map(|p| {
                let st = s.get(s.assignment()[p]).unwrap();
                let c = l.coords(p);
                c.iter()
                    .zip(&st.center)
                    .map(|(&x, &m)| (x as f64 - m).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let a = allocate_proportional(&s, 8).unwrap();
        let r = analytic_variance_tabulated(&values, "dist", &s, &a).unwrap();
        for m in &r.per_stratum {
            assert!((m.cov - m.var).abs() < 1e-12);
        }
        let lemma = check_lemma_sag(&r);
        assert!((lemma.ratio - 2.0).abs() < 1e-12);
        assert_eq!(lemma.status, CheckStatus::Pass);
    }

    #[test]
    fn constant_function_has_zero_variance_everywhere() {
        let l = PixelLattice::uniform(vec![4, 4]).unwrap();
        let s = build_grid_stratification(&l, &[2, 2]).unwrap();
        let r = monte_carlo_study(&l, &s, &table(vec![7.0; 16]), 8, 50, 1).unwrap();
        assert_eq!(r.analytic.var_ns, 0.0);
        assert_eq!(r.analytic.var_sg, 0.0);
        assert_eq!(r.analytic.var_sag, 0.0);
        for mc in &r.monte_carlo {
            assert_eq!(mc.var, 0.0);
            assert_eq!(mc.mean, 7.0);
        }
        assert_eq!(check_lemma_sag(&r).ratio, 0.0);
    }

    #[test]
    fn theorem_not_applicable_when_not_proportional() {
        let l = PixelLattice::uniform(vec![4, 4]).unwrap();
        let s = build_grid_stratification(&l, &[2, 2]).unwrap();
        let a = allocate_proportional(&s, 5).unwrap();
        let r = analytic_variance(&l, &s, &a, &table((0..16).map(f64::from).collect())).unwrap();
        assert_eq!(check_theorem_sg(&r, &a).status, CheckStatus::NotApplicable);
    }

    #[test]
    fn equal_stratum_means_give_zero_gap() {
        let l = PixelLattice::uniform(vec![2, 4]).unwrap();
        let s = build_grid_stratification(&l, &[2, 2]).unwrap();
        let h = table(vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let a = allocate_proportional(&s, 4).unwrap();
        let r = analytic_variance(&l, &s, &a, &h).unwrap();
        assert_eq!(r.analytic.gap_weighted, 0.0);
        assert!((r.analytic.var_sg - r.analytic.var_ns).abs() < 1e-15);
        assert_eq!(check_theorem_sg(&r, &a).status, CheckStatus::Pass);
    }

    #[test]
    fn single_stratum_has_zero_gap() {
        let l = PixelLattice::uniform(vec![3, 3]).unwrap();
        let s = Stratification::single(&l);
        let a = allocate_proportional(&s, 9).unwrap();
        let h = table((0..9).map(|i| (i as f64).sqrt()).collect());
        let c = check_theorem_sg(&analytic_variance(&l, &s, &a, &h).unwrap(), &a);
        assert_eq!(c.status, CheckStatus::Pass);
        assert!(c.gap_formula.abs() < 1e-18);
    }

    #[test]
    fn csv_has_one_row_per_sampler() {
        let l = PixelLattice::uniform(vec![2, 2]).unwrap();
        let s = Stratification::from_groups(&l, vec![vec![0, 2], vec![1, 3]]).unwrap();
        let a = allocate_proportional(&s, 2).unwrap();
        let r = analytic_variance(&l, &s, &a, &table(vec![0.0, 2.0, 0.0, 2.0])).unwrap();
        let csv = r.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("ns,t,2,1,1,0.5,"));
        assert!(lines[2].starts_with("sg,t,2,1,1,0,"));
    }
}
