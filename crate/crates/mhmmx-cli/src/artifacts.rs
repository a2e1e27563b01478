//! Reproducibility plumbing: hashed inputs, atomic writes, and the per-run
//! manifest.

use crate::error::{CliError, CliResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const ARTIFACT_VERSION: &str = "1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Tracks a single command run: which inputs it hashed and which outputs it
/// wrote, finalized into `manifest.json` in the output directory.
pub struct RunRecorder {
    command: String,
    seed: u64,
    output_dir: PathBuf,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    artifact_version: &'a str,
    seed: u64,
    config_sha256: &'a str,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a [String],
}

impl RunRecorder {
    pub fn new(
        command: &str,
        seed: u64,
        output_dir: &Path,
        resolved_config_json: &str,
    ) -> CliResult<Self> {
        std::fs::create_dir_all(output_dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", output_dir.display())))?;
        let mut rec = RunRecorder {
            command: command.to_string(),
            seed,
            output_dir: output_dir.to_path_buf(),
            config_sha256: sha256_hex(resolved_config_json.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        };
        rec.write_output("resolved_config.json", resolved_config_json.as_bytes())?;
        Ok(rec)
    }

    /// Reads an input file, recording its hash in the manifest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::input(format!("cannot read input `{}`: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Records an input hash without holding its bytes (for files the
    /// library loads itself).
    pub fn hash_input(&mut self, path: &Path) -> CliResult<()> {
        self.read_input(path).map(|_| ())
    }

    /// Writes one output file atomically (temp file + rename) inside the
    /// output directory.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.output_dir.join(name);
        atomic_write(&path, bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.outputs.push("manifest.json".to_string());
        let manifest = Manifest {
            command: &self.command,
            artifact_version: ARTIFACT_VERSION,
            seed: self.seed,
            config_sha256: &self.config_sha256,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::input(format!("manifest serialization: {e}")))?;
        atomic_write(&self.output_dir.join("manifest.json"), json.as_bytes())
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::input(format!("cannot create temp file in {}: {e}", dir.display())))?;
    std::io::Write::write_all(&mut tmp.as_file(), bytes)
        .map_err(|e| CliError::input(format!("write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::input(format!("rename into {}: {e}", path.display())))?;
    Ok(())
}

/// Shortest-roundtrip float formatting shared by every CSV writer, so reruns
/// are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_f64(x),
        None => "NA".to_string(),
    }
}
