use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmncd_core::datagen::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "MMNCD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

/// What a run wrote, for later inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    /// Artifact name to path.
    pub outputs: BTreeMap<String, String>,
    /// Phase name to wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
}

/// The directory of one run, `<digest>-<seed>` under the output root. The
/// digest covers the command, its options, the resolved config and the bytes
/// of every input file, so identical invocations land in the same place and
/// different ones never share a directory.
pub struct RunDir {
    path: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

fn digest(command: &str, options: &str, config: &RunConfig, inputs: &[&Path]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(options.as_bytes());
    h.update([0]);
    h.update(config.to_toml().as_bytes());
    for input in inputs {
        let bytes = std::fs::read(input)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", input.display())))?;
        h.update([0]);
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize())[..16].to_string())
}

impl RunDir {
    /// `options` is any command-specific setting not in the config.
    pub fn new(
        root: &Path,
        command: &str,
        options: &str,
        config: &RunConfig,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        let digest = digest(command, options, config, inputs)?;
        Ok(Self {
            path: root.join(format!("{digest}-{}", config.seed)),
            manifest: RunManifest {
                command: command.to_string(),
                config_digest: digest,
                seed: config.seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                outputs: BTreeMap::new(),
                timings: BTreeMap::new(),
            },
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn time(&mut self, phase: &str, seconds: f64) {
        self.manifest.timings.insert(phase.to_string(), seconds);
    }

    /// Writes `bytes` to `name` inside the run directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.path.join(name);
        self.write_to(name, &target, bytes)?;
        Ok(target)
    }

    /// Writes an artifact to an explicit location and records it.
    pub fn write_to(&mut self, name: &str, target: &Path, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.path)?;
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(target, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
        self.record(name, target);
        Ok(())
    }

    /// Lists a file that something else already wrote.
    pub fn record(&mut self, name: &str, target: &Path) {
        self.manifest
            .outputs
            .insert(name.to_string(), target.display().to_string());
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.time("total", self.started.elapsed().as_secs_f64());
        let json = serde_json::to_string_pretty(&self.manifest).expect("plain data");
        std::fs::create_dir_all(&self.path)?;
        let target = self.path.join("manifest.json");
        write_atomic(&target, json.as_bytes())?;
        Ok(self.path)
    }
}
