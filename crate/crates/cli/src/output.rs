use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub exit_code: u8,
    pub version: String,
    pub timestamp: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            status: "ok".into(),
            error: None,
            exit_code: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) {
        self.config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    }

    pub fn fail(&mut self, e: &CliError) {
        self.status = "error".into();
        self.error = Some(e.to_string());
        self.exit_code = e.exit_code();
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let out = OutputDir::create(dir)?;
        out.write_json("manifest.json", self)?;
        Ok(())
    }
}

/// Output directory whose files are written to a temporary file and renamed
/// into place.
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    pub fn create(path: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(path)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn write_with<F>(&self, name: &str, f: F) -> CliResult<String>
    where
        F: FnOnce(&mut BufWriter<&mut File>) -> CliResult<()>,
    {
        let target = self.path.join(name);
        let io_err = |e: std::io::Error| CliError::Input(format!("writing {}: {e}", target.display()));
        let mut tmp = NamedTempFile::new_in(&self.path).map_err(io_err)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            f(&mut w)?;
            w.flush().map_err(io_err)?;
        }
        tmp.persist(&target).map_err(|e| io_err(e.error))?;
        Ok(target.display().to_string())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<String> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Input(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| CliError::Input(e.to_string()))
        })
    }
}
