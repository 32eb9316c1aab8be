//! Per-pixel test functions named in configs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Tabulated;
use crate::lattice::{PixelLattice, Stratification};
use crate::rng::splitmix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HSpec {
    /// One payload column.
    Payload { column: usize },
    /// 1 on pixels of `class`, else 0.
    ClassIndicator { class: usize },
    /// `sum_i weights[i] * coord_i`. Linear in position, so a pixel and its
    /// reflection about a stratum center average to the center value: the
    /// case where antithetic pairs cancel.
    Linear { weights: Vec<f64> },
    /// Squared distance to the pixel's stratum center. Symmetric under
    /// reflection, so pairs are perfectly correlated: the worst case for
    /// antithetic pairs.
    StratumRadial,
    Constant { value: f64 },
    /// Independent uniform values in `[0, 1)` from a hash of the pixel index.
    Hash { seed: u64 },
}

impl HSpec {
    pub fn name(&self) -> String {
        match self {
            HSpec::Payload { column } => format!("payload_{column}"),
            HSpec::ClassIndicator { class } => format!("class_{class}"),
            HSpec::Linear { .. } => "linear".into(),
            HSpec::StratumRadial => "stratum_radial".into(),
            HSpec::Constant { .. } => "constant".into(),
            HSpec::Hash { seed } => format!("hash_{seed}"),
        }
    }

    /// Values on every pixel.
    pub fn tabulate(&self, lattice: &PixelLattice, strat: &Stratification) -> Result<Tabulated> {
        let n = lattice.len();
        let values: Vec<f64> = match self {
            HSpec::Payload { column } => {
                let payload = lattice
                    .payload()
                    .ok_or_else(|| Error::invalid("payload function on a lattice without payload"))?;
                if *column >= payload.dim() {
                    return Err(Error::invalid(format!(
                        "payload column {column} out of range (dim {})",
                        payload.dim()
                    )));
                }
                (0..n).map(|p| payload.row(p)[*column]).collect()
            }
            HSpec::ClassIndicator { class } => {
                if *class >= lattice.num_classes() {
                    return Err(Error::invalid(format!("class {class} out of range")));
                }
                lattice
                    .classes()
                    .iter()
                    .map(|&c| f64::from(u8::from(c == *class)))
                    .collect()
            }
            HSpec::Linear { weights } => {
                if weights.len() != lattice.ndim() {
                    return Err(Error::invalid(
                        "linear weights must have one entry per lattice axis",
                    ));
                }
                (0..n)
                    .map(|p| {
                        lattice
                            .coords(p)
                            .iter()
                            .zip(weights)
                            .map(|(&x, w)| w * x as f64)
                            .sum()
                    })
                    .collect()
            }
            HSpec::StratumRadial => {
                let mut values = vec![0.0; n];
                for s in strat.strata() {
                    for &p in &s.pixels {
                        values[p] = lattice
                            .coords(p)
                            .iter()
                            .zip(&s.center)
                            .map(|(&x, c)| (x as f64 - c).powi(2))
                            .sum();
                    }
                }
                values
            }
            HSpec::Constant { value } => vec![*value; n],
            HSpec::Hash { seed } => (0..n as u64)
                .map(|p| {
                    let mut state = seed ^ p.wrapping_mul(0xd134_2543_de82_ef95);
                    (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect(),
        };
        Ok(Tabulated::new(self.name(), values))
    }

    /// The default battery of a variance study.
    pub fn default_battery(lattice: &PixelLattice) -> Vec<HSpec> {
        let mut out = Vec::new();
        if lattice.payload().is_some() {
            out.push(HSpec::Payload { column: 0 });
        }
        if lattice.num_classes() > 1 {
            out.push(HSpec::ClassIndicator {
                class: lattice.num_classes() - 1,
            });
        }
        let mut weights = vec![0.0; lattice.ndim()];
        weights[0] = 1.0;
        if let Some(w) = weights.get_mut(1) {
            *w = 0.5;
        }
        out.push(HSpec::Linear { weights });
        out.push(HSpec::StratumRadial);
        out.push(HSpec::Constant { value: 1.0 });
        out.push(HSpec::Hash { seed: 1 });
        out
    }
}
