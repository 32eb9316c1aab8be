//! The pixel contrastive loss on census and on sampled anchors.

use pixstrat::contrastive::{build_key_sets, contrastive_loss};
use pixstrat::harness::{generate, SyntheticSpec};
use pixstrat::lattice::build_class_grid_stratification;
use pixstrat::sampling::{allocate_proportional, census, sample_ns, sample_sg};
use pixstrat::trainer::{ModelShape, ToyModel};

fn main() -> pixstrat::Result<()> {
    let lattice = generate(&SyntheticSpec {
        dims: vec![32, 32],
        smallest_fraction: 0.05,
        ..SyntheticSpec::default()
    })?;
    let model = ToyModel::init(
        ModelShape {
            feat_dim: 4,
            hidden: 16,
            num_classes: 4,
            n_rep: 8,
        },
        0,
    )?;
    let map = model.forward(&lattice)?;
    let strat = build_class_grid_stratification(&lattice, &[8, 8])?;
    let tau = 0.5;

    let all = build_key_sets(&map, lattice.classes(), &census(&strat))?;
    let full = contrastive_loss(&all, tau)? / lattice.len() as f64;
    println!("census loss per anchor: {full:.5}");
    for (class, queries) in all.classes.iter().zip(&all.queries) {
        println!("  class {class}: {} queries", queries.len());
    }

    // smaller anchor sets mean fewer negatives per query, so per-anchor
    // values sit below the census value
    let alloc = allocate_proportional(&strat, 64)?;
    for seed in 0..3 {
        let per_anchor = |set| -> pixstrat::Result<f64> {
            let keys = build_key_sets(&map, lattice.classes(), &set)?;
            Ok(contrastive_loss(&keys, tau)? / 64.0)
        };
        println!(
            "seed {seed}: ns {:.5}  sg {:.5}",
            per_anchor(sample_ns(&lattice, 64, seed)?)?,
            per_anchor(sample_sg(&strat, &alloc, seed)?)?
        );
    }
    Ok(())
}
