//! Runs a small variance study and summarizes its checks as markdown.
//!
//! cargo run --example report -- [OUT_DIR]

use std::path::PathBuf;

use pixstrat::harness::{report, run_variance_study, ExperimentConfig};

const CONFIG: &str = r#"
[lattice]
source = "synthetic"
dims = [32, 32]
[stratification]
scheme = "grid"
cell = [8, 8]
[variance]
n = 64
trials = 5000
"#;

fn main() -> pixstrat::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pixstrat-report-example"));
    let cfg = ExperimentConfig::from_toml(CONFIG, std::path::Path::new("."))?;
    let outcome = run_variance_study(&cfg, &out)?;
    println!("{} checks, {} failed\n", outcome.checks.len(), outcome.failed().count());
    print!("{}", report(&out)?);
    Ok(())
}
