//! Run manifests: every invocation records its command, arguments, input
//! hashes, and output paths so reruns can be checked for byte-identical
//! logical outputs.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub input_hashes: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            arguments: std::env::args().skip(1).collect(),
            seed: None,
            input_hashes: BTreeMap::new(),
            output_paths: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.input_hashes.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    /// Write next to the primary output unless an explicit path was given.
    pub fn write(&self, explicit: Option<&Path>, primary_output: &Path) -> anyhow::Result<PathBuf> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let mut s = primary_output.as_os_str().to_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
        };
        let doc = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, doc)?;
        Ok(path)
    }
}
