//! Config-driven experiments behind the command-line tool.
//!
//! Every experiment returns a [`Report`] of named checks. When given an output
//! directory it also writes CSV files whose `#` header lines echo the full
//! configuration, the seed and the source revision, so a rerun with the same
//! header reproduces the file byte for byte.

pub mod cartpole;
pub mod coverage;
pub mod stochastic;
pub mod toy;
pub mod verify;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub experiment: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Self::default()
        }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    /// Plain-text table, one check per line.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        for c in &self.checks {
            let tag = if c.pass { "pass" } else { "FAIL" };
            s += &format!("{tag}  {:width$}  {}\n", c.name, c.detail);
        }
        for f in &self.files {
            s += &format!("wrote {}\n", f.display());
        }
        s
    }
}

/// Reads a JSON config, or the default when no path is given. Unknown keys are errors.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Full-precision float formatting for CSV cells.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Source revision recorded in CSV headers.
pub fn revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `#`-prefixed metadata lines, a header row, then the rows.
pub fn write_csv(
    path: &Path,
    experiment: &str,
    seed: u64,
    config: &impl Serialize,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(File::create(path)?);
    let cfg = serde_json::to_string(config).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(file, "# experiment: {experiment}")?;
    writeln!(file, "# seed: {seed}")?;
    writeln!(file, "# revision: {}", revision())?;
    writeln!(file, "# config: {cfg}")?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Output location shared by the experiments.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
}

impl Output {
    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }
}
