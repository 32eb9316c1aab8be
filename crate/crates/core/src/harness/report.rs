//! Consolidates `*checks.json` files into a markdown summary.

use std::fs;
use std::path::Path;

use super::checks::CheckFile;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::estimate::CheckStatus;

pub const REPORT_FILE: &str = "report.md";

/// Reads every `*checks.json` in `dir` (sorted by name) and writes
/// `report.md` there. One line per check; failing checks start with
/// `FAIL`. Returns the report text.
pub fn report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let check_files: Vec<&String> = names.iter().filter(|n| n.ends_with("checks.json")).collect();
    let plots: Vec<&String> = names
        .iter()
        .filter(|n| n.starts_with("plot_") && n.ends_with(".csv"))
        .collect();

    let mut text = String::from("# pixstrat report\n\n");
    if check_files.is_empty() {
        text.push_str("no results found\n");
        write_atomic(&dir.join(REPORT_FILE), text.as_bytes())?;
        return Ok(text);
    }
    let (mut pass, mut fail, mut na) = (0, 0, 0);
    let mut body = String::new();
    for name in check_files {
        let parsed: CheckFile = serde_json::from_str(&fs::read_to_string(dir.join(name))?)?;
        body.push_str(&format!("\n## {name}\n\n"));
        for c in &parsed.checks {
            match c.status {
                CheckStatus::Pass => pass += 1,
                CheckStatus::Fail => fail += 1,
                CheckStatus::NotApplicable => na += 1,
            }
            body.push_str(&format!("{} {}: {}\n", c.status.label(), c.name, c.detail));
        }
    }
    text.push_str(&format!(
        "checks: {pass} passed, {fail} failed, {na} not applicable\n"
    ));
    text.push_str(&body);
    if !plots.is_empty() {
        text.push_str("\n## plot data\n\n");
        for p in plots {
            text.push_str(&format!("- {p}\n"));
        }
    }
    write_atomic(&dir.join(REPORT_FILE), text.as_bytes())?;
    Ok(text)
}
