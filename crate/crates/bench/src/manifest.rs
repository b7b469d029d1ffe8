//! Append-only record of cell executions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Completed,
    /// Inputs unchanged since a previous completed run; nothing recomputed.
    Cached,
    /// Ran, but the model missed the accuracy gate; no metrics emitted.
    Excluded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// Index of the run that produced this record.
    pub run: usize,
    pub cell: String,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub key: Option<String>,
    pub paths: BTreeMap<String, PathBuf>,
    pub test_accuracy: Option<f64>,
    pub passes_gate: Option<bool>,
    pub metrics_rows: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub runs: usize,
    pub records: Vec<CellRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            runs: 0,
            records: Vec::new(),
        }
    }
}

impl RunManifest {
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Appends one run's records.
    pub fn append_run(&mut self, mut records: Vec<CellRecord>) -> usize {
        let run = self.runs;
        for r in &mut records {
            r.run = run;
        }
        self.records.extend(records);
        self.runs += 1;
        run
    }

    pub fn run_records(&self, run: usize) -> impl Iterator<Item = &CellRecord> {
        self.records.iter().filter(move |r| r.run == run)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}
