//! Draws one NS, SG and SAG sample and compares their estimates of a mean.

use pixstrat::estimate::{aggregate_exact, estimate, FnPixel};
use pixstrat::harness::{generate, SyntheticSpec};
use pixstrat::lattice::build_class_grid_stratification;
use pixstrat::sampling::{allocate_proportional, sample_ns, sample_sag, sample_sg};

fn main() -> pixstrat::Result<()> {
    let lattice = generate(&SyntheticSpec {
        dims: vec![64, 64],
        seed: 1,
        ..SyntheticSpec::default()
    })?;
    let strat = build_class_grid_stratification(&lattice, &[16, 16])?;
    let alloc = allocate_proportional(&strat, 128)?;
    println!("{} strata, {} draws", strat.len(), alloc.total);

    // fraction of pixels in the rarest class
    let h = FnPixel::new("rare", |l: &pixstrat::lattice::PixelLattice, p| (l.class_of(p) == 3) as u8 as f64);
    println!("exact      {:.5}", aggregate_exact(&lattice, &h));
    for seed in 0..3 {
        let ns = estimate(&sample_ns(&lattice, 128, seed)?, &strat, &lattice, &h)?;
        let sg = estimate(&sample_sg(&strat, &alloc, seed)?, &strat, &lattice, &h)?;
        let sag = estimate(&sample_sag(&strat, &alloc, seed)?, &strat, &lattice, &h)?;
        println!("seed {seed}     ns {ns:.5}  sg {sg:.5}  sag {sag:.5}");
    }
    let sample = sample_sag(&strat, &alloc, 0)?;
    println!("first SAG stratum: {}", serde_json::to_string(&sample.strata[0]).unwrap_or_default());
    Ok(())
}
