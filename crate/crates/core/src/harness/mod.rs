//! Experiment drivers behind the `pixstrat` binary.
//!
//! Every driver reads an [`ExperimentConfig`], writes its tables into an
//! output directory and returns the checks it ran. Files are written once,
//! after all parallel work has been reduced in a fixed order, via a
//! temporary file and a rename; nothing time-dependent is recorded, so
//! identical configs give byte-identical outputs.

mod checks;
mod config;
mod convergence;
mod hfun;
mod report;
mod synthetic;
mod train;
mod variance;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use checks::{Check, CheckFile, Outcome};
pub use config::{
    ConvergenceSection, ExperimentConfig, LatticeSource, StratificationConfig, SweepSection,
    TrainSection, VarianceSection,
};
pub use convergence::{run_convergence, run_sweep, sign_test_p_value};
pub use hfun::HSpec;
pub use report::{report, REPORT_FILE};
pub use synthetic::{generate, SyntheticSpec};
pub use train::run_train;
pub use variance::run_variance_study;

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| crate::error::Error::Parse(e.to_string()))
}

/// Writes a CSV table atomically.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

/// Lattice JSON/CSV pair for `spec` under `out`, named `lattice.json`.
pub fn gen_data(spec: &SyntheticSpec, out: &Path) -> Result<std::path::PathBuf> {
    let lattice = generate(spec)?;
    fs::create_dir_all(out)?;
    let path = out.join("lattice.json");
    crate::lattice::save_lattice(&lattice, &path)?;
    Ok(path)
}

/// Derived seed of the `index`-th run of an experiment.
pub fn run_seed(base: u64, index: usize) -> u64 {
    let mut state = base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    crate::rng::splitmix64(&mut state)
}
