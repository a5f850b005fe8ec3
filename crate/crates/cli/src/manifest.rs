use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::write_key_values;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub n_chains: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn start(
        command: &str,
        config_hash: String,
        data_hash: String,
        seed: u64,
        n_chains: usize,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            data_hash,
            seed,
            n_chains,
            started_unix: unix_now(),
            finished_unix: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Identifier derived from the inputs only, so that reruns with the same
    /// inputs stamp identical output files.
    pub fn run_id(&self) -> String {
        let key = format!(
            "{}|{}|{}|{}|{}|{}",
            self.command, self.config_hash, self.data_hash, self.seed, self.n_chains, self.version
        );
        sha256_hex(key.as_bytes())[..16].to_string()
    }

    /// Comment line placed at the top of every CSV output.
    pub fn stamp(&self) -> String {
        format!("manifest = {MANIFEST_FILE} run_id = {}", self.run_id())
    }

    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("command".to_string(), self.command.clone()),
            ("run_id".into(), self.run_id()),
            ("config_hash".into(), self.config_hash.clone()),
            ("data_hash".into(), self.data_hash.clone()),
            ("seed".into(), self.seed.to_string()),
            ("n_chains".into(), self.n_chains.to_string()),
            ("started_unix".into(), self.started_unix.to_string()),
            ("finished_unix".into(), self.finished_unix.to_string()),
            ("version".into(), self.version.clone()),
            ("outputs".into(), self.outputs.join(",")),
            ("n_failures".into(), self.failures.len().to_string()),
        ];
        for (k, f) in self.failures.iter().enumerate() {
            out.push((format!("failure.{k}"), f.replace('\n', " ")));
        }
        out
    }

    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        write_key_values(&dir.join(MANIFEST_FILE), &self.lines())
    }
}
