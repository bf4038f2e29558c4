use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub engine_version: String,
    /// Digest of the inputs that define the run.
    pub config_hash: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
    pub diagnostics: Vec<serde_json::Value>,
    pub failures: Vec<String>,
    pub partial: bool,
}

/// Collects output files under one directory and their digests.
pub struct Outputs {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Outputs {
    pub fn new(dir: &Path, command: &str, config_hash: String, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                engine_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash,
                seed,
                started: now(),
                finished: String::new(),
                outputs: vec![],
                diagnostics: vec![],
                failures: vec![],
                partial: false,
            },
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        self.manifest.outputs.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(p)
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished = now();
        self.manifest.partial = !self.manifest.failures.is_empty();
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        let p = self.dir.join("manifest.json");
        std::fs::write(&p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        Ok(self.manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
