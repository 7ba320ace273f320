//! Run manifest: resolved config, seed and input hashes, enough to repeat the run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Manifest {
            tool: "relcull",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv,
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn set_config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serializes");
    }

    /// Records a file's hash under `role`.
    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        let sha256 = hash_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256,
            },
        );
        Ok(())
    }

    /// Records a dataset file and, when present, its vocabulary sidecar.
    pub fn dataset_input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.input(role, path)?;
        let sidecar = relcull::sgdata::vocab_sidecar_path(path);
        if sidecar.exists() {
            self.input(&format!("{role}.vocab"), &sidecar)?;
        }
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn hash_file(path: &Path) -> anyhow::Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
