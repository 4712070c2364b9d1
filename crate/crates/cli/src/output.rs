//! Artifact directory: reports, schedules, CSV tables and the failure marker.

use std::fs;
use std::path::{Path, PathBuf};

use ladderlab::engine::ControlSchedule;
use serde::Serialize;

use crate::error::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const SCHEDULE_FILE: &str = "schedule.json";
/// Present only when the task failed; holds the reason.
pub const FAILURE_MARKER: &str = "FAILED";

/// One asserted invariant of a task.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_owned(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub task: &'a str,
    pub seed: u64,
    pub passed: bool,
    pub checks: &'a [Check],
    pub result: &'a T,
}

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        // A marker from an earlier run in the same directory is stale.
        let marker = dir.join(FAILURE_MARKER);
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(Artifacts { dir: dir.to_owned() })
    }

    pub fn child(&self, name: &str) -> Result<Self, CliError> {
        Artifacts::create(&self.dir.join(name))
    }

    /// Writes `report.json` and, when a check failed, the failure marker.
    pub fn report<T: Serialize>(&self, task: &str, seed: u64, checks: &[Check], result: &T) -> Result<bool, CliError> {
        let passed = checks.iter().all(|c| c.passed);
        let report = Report {
            task,
            seed,
            passed,
            checks,
            result,
        };
        ladderlab::io::write_json(&self.dir.join(REPORT_FILE), &report)?;
        if !passed {
            let failed: Vec<String> = checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect();
            self.mark_failed(&failed.join("\n"))?;
        }
        Ok(passed)
    }

    pub fn mark_failed(&self, reason: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(FAILURE_MARKER), format!("{reason}\n"))?;
        Ok(())
    }

    pub fn schedule(&self, sched: &ControlSchedule) -> Result<PathBuf, CliError> {
        let path = self.dir.join(SCHEDULE_FILE);
        ladderlab::io::write_json(&path, sched)?;
        Ok(path)
    }

    /// Writes a CSV table; an empty `rows` still produces the header.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Seventeen significant digits; empty for non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or(String::new(), num)
}
