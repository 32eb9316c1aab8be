//! Generates a long-tailed synthetic segmentation map and writes it out.
//!
//! cargo run --example synthetic_data -- [OUT_DIR]

use pixstrat::harness::{gen_data, generate, SyntheticSpec};

fn main() -> pixstrat::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "results/synthetic".into());
    let spec = SyntheticSpec {
        seed: 42,
        ..SyntheticSpec::default()
    };
    let lattice = generate(&spec)?;
    let total = lattice.len() as f64;
    for (class, count) in lattice.class_counts().iter().enumerate() {
        println!("class {class}: {count:>6} pixels ({:.2}%)", 100.0 * *count as f64 / total);
    }
    let path = gen_data(&spec, std::path::Path::new(&out))?;
    println!("wrote {}", path.display());
    Ok(())
}
