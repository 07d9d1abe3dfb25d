//! Run manifests.
//!
//! Every subcommand writes a `RunManifest` next to its outputs describing
//! exactly what ran: the subcommand name, the fully resolved configuration
//! (defaults filled in), every seed, the build version, input and output
//! paths, and elapsed wall time. A run must be reproducible from its
//! manifest alone, so commands echo all effective settings — including
//! values that were derived rather than given, such as parameters drawn
//! for a randomized process family.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved settings, defaults included.
    pub config: BTreeMap<String, String>,
    /// Every seed the run consumed, by role.
    pub seeds: BTreeMap<String, u64>,
    pub build_version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            build_version: build_version(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn echo_config(&mut self, cfg: &crate::config::FlatConfig) {
        for (k, v) in cfg.entries() {
            self.config.insert(k.clone(), v.clone());
        }
    }

    pub fn seed(&mut self, role: &str, seed: u64) {
        self.seeds.insert(role.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Serialize to pretty JSON and write via a temp file + rename so a
    /// crash never leaves a truncated manifest.
    pub fn write_atomic(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::validation(format!("manifest serialization failed: {e}")))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json.as_bytes())
            .map_err(|e| CliError::validation(format!("write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path)
            .map_err(|e| CliError::validation(format!("rename to {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Crate version plus the source revision when one is discoverable.
pub fn build_version() -> String {
    let version = env!("CARGO_PKG_VERSION");
    match git_revision() {
        Some(rev) => format!("{version}+{rev}"),
        None => version.to_string(),
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let rev = String::from_utf8(out.stdout).ok()?;
    let rev = rev.trim();
    if rev.is_empty() { None } else { Some(rev.to_string()) }
}

/// Manifest path for a run whose primary output is `out`: a sibling file
/// named after it. Directory outputs get `manifest.json` inside.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() || out.extension().is_none() {
        out.join("manifest.json")
    } else {
        let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.with_file_name(format!("{stem}.manifest.json"))
    }
}

/// Wall-clock timer for manifest reporting.
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        WallClock { start: Instant::now() }
    }

    pub fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
