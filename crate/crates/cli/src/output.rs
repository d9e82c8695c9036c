use anyhow::Context;
use serde_json::{json, Value};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<urllc_core::Error> for CliError {
    fn from(e: urllc_core::Error) -> Self {
        match e {
            urllc_core::Error::Infeasible(inf) => CliError::Infeasible(inf.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Output directory plus the manifest describing how its files were made.
pub struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
    manifest: Value,
}

impl OutDir {
    pub fn create(dir: &Path, manifest: Value) -> CliResult<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            manifest,
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.files.push("manifest.json".into());
        self.manifest["files"] = json!(self.files);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialise");
        let path = self.dir.join("manifest.json");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
