//! Provenance blocks and file writers. Floats use Rust's shortest
//! round-trip formatting, so identical runs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;

pub const TOOL: &str = "densjump";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    /// Hash of the model text and the result-relevant parameters.
    pub fn new(command: &str, model_text: &str, params: &impl Serialize, seed: u64) -> Self {
        let doc = serde_json::json!({
            "command": command,
            "model": model_text,
            "params": params,
        });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        Provenance {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            config_sha256: hex::encode(digest),
            seed,
        }
    }

    fn header(&self) -> String {
        format!(
            "# tool: {}\n# version: {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

/// Output directory, created on first use.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Provenance comment lines followed by an RFC 4180 table.
    pub fn csv(
        &self,
        name: &str,
        prov: &Provenance,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        wr.write_record(header).map_err(io)?;
        for row in rows {
            wr.write_record(row).map_err(io)?;
        }
        let table = wr.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        let mut bytes = prov.header().into_bytes();
        bytes.extend(table);
        self.write(name, &bytes)
    }

    /// Provenance comment lines followed by raw CSV text.
    pub fn csv_text(&self, name: &str, prov: &Provenance, body: &[u8]) -> Result<PathBuf, CliError> {
        let mut bytes = prov.header().into_bytes();
        bytes.extend_from_slice(body);
        self.write(name, &bytes)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write(name, text.as_bytes())
    }

    /// `{"provenance": ..., "result": ...}`, pretty-printed.
    pub fn json(&self, name: &str, prov: &Provenance, result: &impl Serialize) -> Result<PathBuf, CliError> {
        let doc = serde_json::json!({ "provenance": prov, "result": result });
        self.json_raw(name, &doc)
    }

    pub fn json_raw(&self, name: &str, doc: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Column names `prefix1..prefixd`.
pub fn coord_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}
