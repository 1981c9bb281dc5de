use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0} assertion(s) failed")]
    Assertion(usize),
    #[error("decode: {0}")]
    Decode(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Io(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Decode(_) => 5,
        })
    }
}

impl From<fcc_core::Error> for CliError {
    fn from(e: fcc_core::Error) -> Self {
        match e {
            fcc_core::Error::Decode(msg) => CliError::Decode(msg),
            fcc_core::Error::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Output directory with atomic file writes.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        fcc_core::codec::write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        self.write(name, text.as_bytes())
    }
}

/// Pass/fail lines of one run.
#[derive(Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<CheckLine>,
}

#[derive(Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Report {
    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        let line = CheckLine {
            name: name.into(),
            pass,
            detail: detail.into(),
        };
        println!("{} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.name, line.detail);
        self.checks.push(line);
    }

    pub fn finish(self) -> CliResult<()> {
        match self.checks.iter().filter(|c| !c.pass).count() {
            0 => Ok(()),
            n => Err(CliError::Assertion(n)),
        }
    }
}

/// A list of grid values parsed from one argument.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid(pub Vec<u64>);

pub fn grid_arg(s: &str) -> Result<Grid, String> {
    parse_grid(s).map(Grid)
}

pub fn decades_arg(s: &str) -> Result<Grid, String> {
    parse_decades(s).map(Grid)
}

/// Parses `a..b` (inclusive) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad value {t:?}")))
        .collect()
}

/// Parses `a..b` as the decades `a, 10a, 100a, ... ≤ b`, or a comma list.
pub fn parse_decades(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a == 0 || a > b {
            return Err(format!("bad decade range {s:?}"));
        }
        let mut out = Vec::new();
        let mut v = a;
        while v <= b {
            out.push(v);
            v = v.saturating_mul(10);
        }
        return Ok(out);
    }
    parse_grid(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_grid("3,7").unwrap(), vec![3, 7]);
        assert!(parse_grid("5..2").is_err());
        assert_eq!(parse_decades("10..1000").unwrap(), vec![10, 100, 1000]);
        assert_eq!(parse_decades("10").unwrap(), vec![10]);
    }
}
