//! JSON header + CSV body lattice files.
//!
//! `<stem>.json` holds `{"dims": [...], "K": k}`; `<stem>.csv` holds one
//! row per pixel in row-major order with columns
//! `class,payload_0,...,payload_{d-1}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PixelLattice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeHeader {
    pub dims: Vec<usize>,
    #[serde(rename = "K")]
    pub num_classes: usize,
}

fn csv_path_for(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

/// Writes `<stem>.json` and `<stem>.csv` next to each other.
pub fn save_lattice(lattice: &PixelLattice, json_path: &Path) -> Result<()> {
    let header = LatticeHeader {
        dims: lattice.dims().to_vec(),
        num_classes: lattice.num_classes(),
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    fs::write(json_path, json)?;

    let payload_dim = lattice.payload().map_or(0, |p| p.dim());
    let mut w = csv::Writer::from_path(csv_path_for(json_path))?;
    let mut names = vec!["class".to_string()];
    names.extend((0..payload_dim).map(|i| format!("payload_{i}")));
    w.write_record(&names)?;
    let mut row = Vec::with_capacity(payload_dim + 1);
    for p in 0..lattice.len() {
        row.clear();
        row.push(lattice.class_of(p).to_string());
        if let Some(payload) = lattice.payload() {
            row.extend(payload.row(p).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_lattice(json_path: &Path) -> Result<PixelLattice> {
    let header: LatticeHeader = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    let mut reader = csv::Reader::from_path(csv_path_for(json_path))?;
    let columns = reader.headers()?.clone();
    if columns.get(0) != Some("class") {
        return Err(Error::Parse("first CSV column must be `class`".into()));
    }
    for (i, name) in columns.iter().skip(1).enumerate() {
        if name != format!("payload_{i}") {
            return Err(Error::Parse(format!(
                "expected column payload_{i}, found `{name}`"
            )));
        }
    }
    let payload_dim = columns.len() - 1;
    let mut classes = Vec::new();
    let mut payload = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let class = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("row {line}: bad class id: {e}")))?;
        classes.push(class);
        for field in record.iter().skip(1) {
            payload.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {line}: bad payload value: {e}")))?,
            );
        }
    }
    let lattice = PixelLattice::new(header.dims, header.num_classes, classes)?;
    if payload_dim > 0 {
        lattice.with_payload(payload_dim, payload)
    } else {
        Ok(lattice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.json");
        let l = PixelLattice::new(vec![2, 3], 2, vec![0, 1, 1, 0, 0, 1])
            .unwrap()
            .with_payload(2, (0..12).map(|i| i as f64 * 0.1 + 1e-17).collect())
            .unwrap();
        save_lattice(&l, &path).unwrap();
        let csv = fs::read_to_string(dir.path().join("img.csv")).unwrap();
        assert!(csv.starts_with("class,payload_0,payload_1\n0,"));
        let json = fs::read_to_string(&path).unwrap();
        assert!(json.contains("\"K\": 2"));
        assert_eq!(load_lattice(&path).unwrap(), l);
    }

    #[test]
    fn rejects_class_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"{"dims":[1,2],"K":1}"#).unwrap();
        fs::write(dir.path().join("bad.csv"), "class\n0\n1\n").unwrap();
        assert!(matches!(load_lattice(&path), Err(Error::InvalidInput(_))));
    }
}
