//! Run manifests: what ran, on which inputs, producing what.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gsanim_core::assets::{read_bytes, save_json};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Stage name → wall time, milliseconds.
    pub timing_ms: BTreeMap<String, f64>,
}

pub struct Recorder {
    manifest: RunManifest,
    clock: Instant,
}

impl Recorder {
    pub fn new(command: &str, seed: u64, threads: usize) -> Self {
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                threads,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                timing_ms: BTreeMap::new(),
            },
            clock: Instant::now(),
        }
    }

    /// Hashes an input file. Call before reading it so a missing file is
    /// reported as such by the loader.
    pub fn input(&mut self, path: &Path) {
        if let Ok(bytes) = read_bytes(path) {
            self.manifest
                .inputs
                .insert(path.display().to_string(), sha256_hex(&bytes));
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn config(&mut self, value: impl Serialize) {
        self.manifest.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.manifest
            .timing_ms
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        r
    }

    /// Writes the manifest to `path`, or next to the first output.
    pub fn finish(mut self, path: Option<&Path>) -> CliResult<Option<PathBuf>> {
        self.manifest
            .timing_ms
            .insert("total".into(), self.clock.elapsed().as_secs_f64() * 1e3);
        let target = match path {
            Some(p) => p.to_path_buf(),
            None => match self.manifest.outputs.first() {
                Some(first) => PathBuf::from(format!("{first}.manifest.json")),
                None => return Ok(None),
            },
        };
        save_json(&self.manifest, &target)?;
        Ok(Some(target))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
