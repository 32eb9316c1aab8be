//! Exact and Monte-Carlo variances of the three samplers, with the
//! between-stratum gap that SG removes.

use pixstrat::estimate::{check_lemma_sag, check_theorem_sg, monte_carlo_study_tabulated};
use pixstrat::harness::{generate, HSpec, SyntheticSpec};
use pixstrat::lattice::build_grid_stratification;
use pixstrat::sampling::{allocate_proportional, SamplerKind};

fn main() -> pixstrat::Result<()> {
    let lattice = generate(&SyntheticSpec {
        dims: vec![64, 64],
        ..SyntheticSpec::default()
    })?;
    // 8x8 cells split 64x64 evenly, so n = 256 is exactly proportional
    let strat = build_grid_stratification(&lattice, &[8, 8])?;
    let alloc = allocate_proportional(&strat, 256)?;
    for spec in [HSpec::Payload { column: 0 }, HSpec::Linear { weights: vec![1.0, 1.0] }] {
        let table = spec.tabulate(&lattice, &strat)?;
        let r = monte_carlo_study_tabulated(
            &table.values,
            &table.name,
            &strat,
            &alloc,
            &SamplerKind::ALL,
            20_000,
            9,
        )?;
        println!("h = {}  (H = {:.5})", r.function, r.h_true);
        for kind in SamplerKind::ALL {
            let mc = r.monte_carlo_for(kind).expect("all samplers ran");
            println!("  {:<3} analytic {:.3e}  monte-carlo {:.3e}", kind.name(), r.analytic.var(kind), mc.var);
        }
        let theorem = check_theorem_sg(&r, &alloc);
        let lemma = check_lemma_sag(&r);
        println!(
            "  var_ns - var_sg = {:.3e} = gap {:.3e} [{}];  var_sag / var_sg = {:.3} [{}]",
            theorem.gap_analytic,
            theorem.gap_formula,
            theorem.status.label(),
            lemma.ratio,
            lemma.status.label()
        );
    }
    Ok(())
}
