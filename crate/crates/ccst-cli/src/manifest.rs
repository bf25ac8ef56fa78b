//! Run manifests: every output directory records the fully resolved
//! invocation that produced it, so any run can be reproduced byte-for-byte
//! with `ccst rerun <manifest>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved argument vector, defaults included; replaying it
    /// reproduces the run exactly.
    pub argv: Vec<String>,
    pub seed: u64,
    /// Output files written by the run, relative to the manifest directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, outputs: Vec<String>) -> Self {
        Self {
            tool: "ccst".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            seed,
            outputs,
        }
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join(MANIFEST_NAME), text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| format!("cannot parse manifest {}: {e}", path.display()))
    }
}
