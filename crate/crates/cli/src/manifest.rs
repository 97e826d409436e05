//! Run manifests: the resolved config plus content hashes of every input
//! and output, enough to replay a run with `--config manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use groupnewton::PassCount;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    /// `ok`, `aborted` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
    /// Input name to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the output directory) to sha256.
    pub outputs: BTreeMap<String, String>,
    pub passes: PassCount,
    pub steps: usize,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub final_grad_norm: Option<f64>,
    #[serde(default)]
    pub converged: Option<bool>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            tool: format!("groupnewton {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            status: "ok".into(),
            error: None,
            warnings: Vec::new(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            passes: PassCount::default(),
            steps: 0,
            final_loss: None,
            final_grad_norm: None,
            converged: None,
        }
    }
}

/// Writes files under one directory and remembers their hashes.
pub struct Artifacts {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` (may contain `/`) and records its hash.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |source| CliError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&path, contents).map_err(io)?;
        self.hashes.insert(name.into(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        manifest.outputs = std::mem::take(&mut self.hashes);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write("manifest.json", &format!("{text}\n"))?;
        Ok(manifest)
    }
}
