//! Naive, stratified and stratified-antithetic pixel samplers.
//!
//! All samplers draw with replacement. Randomness comes from
//! [`StreamKey`](crate::rng::StreamKey) streams keyed by
//! `(seed, sampler, trial, stratum id)`, so the draws for a stratum do not
//! depend on the order strata are visited in, and trials can run on any
//! thread.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{PixelLattice, Stratification};
use crate::rng::{Domain, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ns,
    Sg,
    Sag,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [SamplerKind::Ns, SamplerKind::Sg, SamplerKind::Sag];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ns => "ns",
            SamplerKind::Sg => "sg",
            SamplerKind::Sag => "sag",
        }
    }

    fn domain(self) -> Domain {
        match self {
            SamplerKind::Ns => Domain::Naive,
            SamplerKind::Sg => Domain::Stratified,
            SamplerKind::Sag => Domain::Antithetic,
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Ok(SamplerKind::Ns),
            "sg" => Ok(SamplerKind::Sg),
            "sag" => Ok(SamplerKind::Sag),
            other => Err(Error::Parse(format!("unknown sampler `{other}`"))),
        }
    }
}

/// What to do with strata whose proportional share rounds to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyStrata {
    /// Move units from the largest allocations until every stratum has one.
    #[default]
    AtLeastOne,
    /// Keep zero allocations; estimators plug in the exact stratum mean.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub per_stratum: Vec<usize>,
    pub total: usize,
    pub empty_strata: EmptyStrata,
}

impl Allocation {
    /// An explicit allocation; zero entries imply [`EmptyStrata::Exact`].
    pub fn from_counts(per_stratum: Vec<usize>) -> Self {
        let total = per_stratum.iter().sum();
        let empty_strata = if per_stratum.contains(&0) {
            EmptyStrata::Exact
        } else {
            EmptyStrata::AtLeastOne
        };
        Allocation {
            per_stratum,
            total,
            empty_strata,
        }
    }

    pub fn len(&self) -> usize {
        self.per_stratum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_stratum.is_empty()
    }

    /// True when `n_m = n |P_m| / |P|` holds exactly for every stratum.
    pub fn is_exactly_proportional(&self, strat: &Stratification) -> bool {
        let pop = strat.population() as u128;
        self.per_stratum.len() == strat.len()
            && strat
                .strata()
                .iter()
                .zip(&self.per_stratum)
                .all(|(s, &n_m)| n_m as u128 * pop == self.total as u128 * s.len() as u128)
    }

    fn check_against(&self, strat: &Stratification) -> Result<()> {
        if self.per_stratum.len() != strat.len() {
            return Err(Error::invalid(format!(
                "allocation has {} entries, stratification has {} strata",
                self.per_stratum.len(),
                strat.len()
            )));
        }
        if self.empty_strata == EmptyStrata::AtLeastOne && self.per_stratum.contains(&0) {
            return Err(Error::invalid(
                "zero allocation without exact-empty-strata mode",
            ));
        }
        Ok(())
    }
}

/// Largest-remainder proportional allocation guaranteeing `n_m >= 1`.
pub fn allocate_proportional(strat: &Stratification, n: usize) -> Result<Allocation> {
    allocate_proportional_with(strat, n, EmptyStrata::AtLeastOne)
}

/// Largest-remainder apportionment of `n` by stratum size.
///
/// Quotas `n |P_m| / |P|` are floored and the leftover units go to the
/// largest fractional parts, ties to the lower stratum index. Under
/// [`EmptyStrata::AtLeastOne`] each zero entry (in index order) then takes a
/// unit from the current largest allocation (lowest index on ties).
pub fn allocate_proportional_with(
    strat: &Stratification,
    n: usize,
    empty_strata: EmptyStrata,
) -> Result<Allocation> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if strat.is_empty() {
        return Err(Error::invalid("stratification has no strata"));
    }
    let pop = strat.population() as u128;
    let mut per_stratum = Vec::with_capacity(strat.len());
    let mut remainders = Vec::with_capacity(strat.len());
    for (i, s) in strat.strata().iter().enumerate() {
        let scaled = n as u128 * s.len() as u128;
        per_stratum.push((scaled / pop) as usize);
        remainders.push((scaled % pop, i));
    }
    let leftover = n - per_stratum.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(leftover) {
        per_stratum[i] += 1;
    }

    if empty_strata == EmptyStrata::AtLeastOne {
        if n < strat.len() {
            return Err(Error::invalid(format!(
                "n = {n} cannot give each of {} strata a draw",
                strat.len()
            )));
        }
        for i in 0..per_stratum.len() {
            if per_stratum[i] == 0 {
                let donor = (0..per_stratum.len())
                    .max_by(|&a, &b| per_stratum[a].cmp(&per_stratum[b]).then(b.cmp(&a)))
                    .expect("nonempty");
                per_stratum[donor] -= 1;
                per_stratum[i] += 1;
            }
        }
    }
    Ok(Allocation {
        per_stratum,
        total: n,
        empty_strata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Drawn,
    Reflected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSample {
    pub stratum: usize,
    pub pixels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl StratumSample {
    fn drawn(stratum: usize, pixels: Vec<usize>) -> Self {
        let provenance = vec![Provenance::Drawn; pixels.len()];
        StratumSample {
            stratum,
            pixels,
            provenance,
        }
    }
}

/// Drawn pixels grouped by stratum.
///
/// NS samples are one pseudo-stratum with id 0. Serializes as the bare
/// list `[{stratum, pixels, provenance}, ...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub kind: SamplerKind,
    pub strata: Vec<StratumSample>,
    /// Empty strata are filled in with exact means by estimators.
    pub exact_empty: bool,
}

impl Serialize for SampleSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.strata.serialize(s)
    }
}

impl SampleSet {
    pub fn from_json(kind: SamplerKind, json: &str) -> Result<Self> {
        let strata: Vec<StratumSample> = serde_json::from_str(json)?;
        let exact_empty = strata.iter().any(|s| s.pixels.is_empty());
        Ok(SampleSet {
            kind,
            strata,
            exact_empty,
        })
    }

    pub fn len(&self) -> usize {
        self.strata.iter().map(|s| s.pixels.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All sampled pixels in stratum order (duplicates kept).
    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.strata.iter().flat_map(|s| s.pixels.iter().copied())
    }

    /// Per-pixel weights such that `sum_i weight_i h(p_i)` is the
    /// population-weighted stratified estimate (plain mean for NS), listed in
    /// the same order as [`SampleSet::pixels`].
    pub fn weights(&self, strat: &Stratification) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if self.kind == SamplerKind::Ns {
            let n = self.len() as f64;
            return Ok(vec![1.0 / n; self.len()]);
        }
        let mut out = Vec::with_capacity(self.len());
        for s in &self.strata {
            let stratum = strat
                .get(s.stratum)
                .ok_or_else(|| Error::invalid(format!("unknown stratum {}", s.stratum)))?;
            let w = stratum.len() as f64 / strat.population() as f64;
            let n_m = s.pixels.len() as f64;
            out.extend(std::iter::repeat(w / n_m).take(s.pixels.len()));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Every pixel exactly once, grouped by stratum.
pub fn census(strat: &Stratification) -> SampleSet {
    SampleSet {
        kind: SamplerKind::Sg,
        strata: strat
            .strata()
            .iter()
            .map(|s| StratumSample::drawn(s.id, s.pixels.clone()))
            .collect(),
        exact_empty: false,
    }
}

pub fn sample_ns(lattice: &PixelLattice, n: usize, seed: u64) -> Result<SampleSet> {
    sample_ns_trial(lattice.len(), n, seed, 0)
}

/// `n` uniform with-replacement draws from `0..population` for one trial.
pub fn sample_ns_trial(population: usize, n: usize, seed: u64, trial: u64) -> Result<SampleSet> {
    if population == 0 {
        return Err(Error::invalid("empty lattice"));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = StreamKey::new(seed, SamplerKind::Ns.domain())
        .trial(trial)
        .rng();
    let pixels = (0..n).map(|_| rng.gen_range(0..population)).collect();
    Ok(SampleSet {
        kind: SamplerKind::Ns,
        strata: vec![StratumSample::drawn(0, pixels)],
        exact_empty: false,
    })
}

pub fn sample_sg(strat: &Stratification, alloc: &Allocation, seed: u64) -> Result<SampleSet> {
    sample_sg_trial(strat, alloc, seed, 0)
}

/// Independent uniform with-replacement draws within every stratum.
pub fn sample_sg_trial(
    strat: &Stratification,
    alloc: &Allocation,
    seed: u64,
    trial: u64,
) -> Result<SampleSet> {
    alloc.check_against(strat)?;
    let strata = strat
        .strata()
        .iter()
        .zip(&alloc.per_stratum)
        .map(|(s, &n_m)| {
            let mut rng = StreamKey::new(seed, SamplerKind::Sg.domain())
                .trial(trial)
                .stratum(s.id as u64)
                .rng();
            let pixels = (0..n_m)
                .map(|_| s.pixels[rng.gen_range(0..s.len())])
                .collect();
            StratumSample::drawn(s.id, pixels)
        })
        .collect();
    Ok(SampleSet {
        kind: SamplerKind::Sg,
        strata,
        exact_empty: alloc.empty_strata == EmptyStrata::Exact,
    })
}

pub fn sample_sag(strat: &Stratification, alloc: &Allocation, seed: u64) -> Result<SampleSet> {
    sample_sag_trial(strat, alloc, seed, 0)
}

/// Stratified antithetic sampling.
///
/// Per stratum, `ceil(n_m / 2)` uniform draws; the first `floor(n_m / 2)`
/// are each followed by their reflection through the stratum center. With
/// odd `n_m` the last draw stays unpaired.
pub fn sample_sag_trial(
    strat: &Stratification,
    alloc: &Allocation,
    seed: u64,
    trial: u64,
) -> Result<SampleSet> {
    alloc.check_against(strat)?;
    let strata = strat
        .strata()
        .iter()
        .zip(&alloc.per_stratum)
        .map(|(s, &n_m)| {
            let mut rng = StreamKey::new(seed, SamplerKind::Sag.domain())
                .trial(trial)
                .stratum(s.id as u64)
                .rng();
            let mut pixels = Vec::with_capacity(n_m);
            let mut provenance = Vec::with_capacity(n_m);
            for _ in 0..n_m / 2 {
                let i = rng.gen_range(0..s.len());
                pixels.push(s.pixels[i]);
                provenance.push(Provenance::Drawn);
                pixels.push(s.reflect_at(i));
                provenance.push(Provenance::Reflected);
            }
            if n_m % 2 == 1 {
                pixels.push(s.pixels[rng.gen_range(0..s.len())]);
                provenance.push(Provenance::Drawn);
            }
            StratumSample {
                stratum: s.id,
                pixels,
                provenance,
            }
        })
        .collect();
    Ok(SampleSet {
        kind: SamplerKind::Sag,
        strata,
        exact_empty: alloc.empty_strata == EmptyStrata::Exact,
    })
}

/// Dispatches to the sampler for `kind` with an allocation for `n`.
pub fn sample_trial(
    kind: SamplerKind,
    strat: &Stratification,
    alloc: &Allocation,
    seed: u64,
    trial: u64,
) -> Result<SampleSet> {
    match kind {
        SamplerKind::Ns => sample_ns_trial(strat.population(), alloc.total, seed, trial),
        SamplerKind::Sg => sample_sg_trial(strat, alloc, seed, trial),
        SamplerKind::Sag => sample_sag_trial(strat, alloc, seed, trial),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_grid_stratification;

    fn grid(dims: Vec<usize>, cell: &[usize]) -> (PixelLattice, Stratification) {
        let l = PixelLattice::uniform(dims).unwrap();
        let s = build_grid_stratification(&l, cell).unwrap();
        (l, s)
    }

    #[test]
    fn equal_strata_split_evenly() {
        let (_, s) = grid(vec![4, 4], &[2, 2]);
        assert_eq!(
            allocate_proportional(&s, 8).unwrap().per_stratum,
            vec![2, 2, 2, 2]
        );
    }

    #[test]
    fn census_allocation() {
        let l = PixelLattice::uniform(vec![1, 10]).unwrap();
        let s = Stratification::from_groups(&l, vec![(0..6).collect(), (6..9).collect(), vec![9]])
            .unwrap();
        assert_eq!(
            allocate_proportional(&s, 10).unwrap().per_stratum,
            vec![6, 3, 1]
        );
    }

    #[test]
    fn fractional_quotas_tie_to_lowest_index() {
        let (_, s) = grid(vec![4, 4], &[2, 2]);
        let a = allocate_proportional(&s, 5).unwrap();
        assert_eq!(a.per_stratum, vec![2, 1, 1, 1]);
        assert!(!a.is_exactly_proportional(&s));
        assert!(allocate_proportional(&s, 8)
            .unwrap()
            .is_exactly_proportional(&s));
    }

    #[test]
    fn at_least_one_steals_from_largest() {
        let l = PixelLattice::uniform(vec![1, 20]).unwrap();
        let s =
            Stratification::from_groups(&l, vec![(0..18).collect(), vec![18], vec![19]]).unwrap();
        let exact = allocate_proportional_with(&s, 4, EmptyStrata::Exact).unwrap();
        assert_eq!(exact.per_stratum, vec![4, 0, 0]);
        let min1 = allocate_proportional(&s, 4).unwrap();
        assert_eq!(min1.per_stratum, vec![2, 1, 1]);
        assert!(allocate_proportional(&s, 2).is_err());
    }

    #[test]
    fn ns_singleton_population() {
        let l = PixelLattice::uniform(vec![1, 1]).unwrap();
        let s = sample_ns(&l, 3, 99).unwrap();
        assert_eq!(s.pixels().collect::<Vec<_>>(), vec![0, 0, 0]);
    }

    #[test]
    fn ns_is_deterministic() {
        let l = PixelLattice::uniform(vec![4, 4]).unwrap();
        assert_eq!(sample_ns(&l, 8, 5).unwrap(), sample_ns(&l, 8, 5).unwrap());
        assert_ne!(sample_ns(&l, 8, 5).unwrap(), sample_ns(&l, 8, 6).unwrap());
    }

    #[test]
    fn ns_rejects_zero_n() {
        let l = PixelLattice::uniform(vec![2, 2]).unwrap();
        assert!(sample_ns(&l, 0, 1).is_err());
    }

    #[test]
    fn sg_singleton_strata_hit_every_pixel() {
        let (_, s) = grid(vec![3, 3], &[1, 1]);
        let a = allocate_proportional(&s, 9).unwrap();
        let sample = sample_sg(&s, &a, 1).unwrap();
        assert_eq!(
            sample.pixels().collect::<Vec<_>>(),
            (0..9).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sg_independent_of_stratum_order() {
        let (_, s) = grid(vec![6, 6], &[2, 3]);
        let a = allocate_proportional(&s, 18).unwrap();
        let base = sample_sg(&s, &a, 42).unwrap();
        let order: Vec<usize> = (0..s.len()).rev().collect();
        let permuted = s.permuted(&order).unwrap();
        let pa = Allocation::from_counts(order.iter().map(|&i| a.per_stratum[i]).collect());
        let other = sample_sg(&permuted, &pa, 42).unwrap();
        for ss in &other.strata {
            let matching = base
                .strata
                .iter()
                .find(|b| b.stratum == ss.stratum)
                .unwrap();
            assert_eq!(matching, ss);
        }
    }

    #[test]
    fn sg_rejects_mismatched_allocation() {
        let (_, s) = grid(vec![4, 4], &[2, 2]);
        let a = Allocation::from_counts(vec![1, 1]);
        assert!(matches!(sample_sg(&s, &a, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(sample_sag(&s, &a, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sag_pairs_reflect_through_center() {
        let (_, s) = grid(vec![2, 2], &[2, 2]);
        let a = Allocation::from_counts(vec![2]);
        for seed in 0..20 {
            let sample = sample_sag(&s, &a, seed).unwrap();
            let st = &sample.strata[0];
            assert_eq!(
                st.provenance,
                vec![Provenance::Drawn, Provenance::Reflected]
            );
            assert_eq!(st.pixels[0] + st.pixels[1], 3);
        }
    }

    #[test]
    fn sag_odd_allocation_leaves_one_unpaired() {
        let (_, s) = grid(vec![2, 2], &[2, 2]);
        let one = sample_sag(&s, &Allocation::from_counts(vec![1]), 3).unwrap();
        assert_eq!(one.strata[0].provenance, vec![Provenance::Drawn]);
        let three = sample_sag(&s, &Allocation::from_counts(vec![3]), 3).unwrap();
        assert_eq!(
            three.strata[0].provenance,
            vec![Provenance::Drawn, Provenance::Reflected, Provenance::Drawn]
        );
    }

    #[test]
    fn sample_set_json_shape() {
        let (_, s) = grid(vec![2, 2], &[2, 2]);
        let sample = sample_sag(&s, &Allocation::from_counts(vec![2]), 0).unwrap();
        let json = sample.to_json().unwrap();
        assert!(json.starts_with(r#"[{"stratum":0,"pixels":["#));
        assert!(json.contains(r#""provenance":["drawn","reflected"]"#));
        assert_eq!(
            SampleSet::from_json(SamplerKind::Sag, &json).unwrap(),
            sample
        );
    }

    #[test]
    fn census_weights_are_uniform() {
        let (_, s) = grid(vec![5, 4], &[2, 2]);
        let c = census(&s);
        let w = c.weights(&s).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 20.0).abs() < 1e-15));
    }
}
