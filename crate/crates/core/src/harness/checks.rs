use serde::{Deserialize, Serialize};

use crate::estimate::CheckStatus;

/// One named pass/fail judgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, status: CheckStatus, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            status,
            detail: detail.into(),
        }
    }

    pub fn from_bool(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check::new(name, CheckStatus::from_bool(pass), detail)
    }
}

/// Contents of a `*checks.json` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckFile {
    pub checks: Vec<Check>,
}

/// What a driver did: its checks and the files it wrote.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub files: Vec<std::path::PathBuf>,
}

impl Outcome {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn all_passed(&self) -> bool {
        self.failed().next().is_none()
    }
}
