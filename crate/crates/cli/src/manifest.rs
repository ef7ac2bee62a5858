//! `manifest.json`: what each stage read and wrote, by digest.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use factorpref_core::io::{file_digest, write_string};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// The config sections the stage depends on.
    pub config: serde_json::Value,
    /// path -> sha256 hex
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Config as written plus overrides, without the output directory.
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Digest mismatch between an artifact on disk and what its producer recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stale {
    pub artifact: String,
    pub producer: String,
}

impl RunManifest {
    pub fn load_or_default(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_string(&out_dir.join(MANIFEST_FILE), &text)?;
        Ok(())
    }

    /// The stage that last recorded `artifact` as an output.
    pub fn producer(&self, artifact: &str) -> Option<(&str, &str)> {
        self.stages
            .iter()
            .filter_map(|(name, s)| s.outputs.get(artifact).map(|d| (name.as_str(), d.as_str(), s.timestamp)))
            .max_by_key(|&(_, _, t)| t)
            .map(|(n, d, _)| (n, d))
    }

    /// `Some` when the file behind `artifact` no longer matches its recorded
    /// digest. Unrecorded artifacts are never stale.
    pub fn check(&self, artifact: &str, path: &Path) -> Result<Option<Stale>> {
        let Some((producer, recorded)) = self.producer(artifact) else {
            return Ok(None);
        };
        let current = file_digest(path)?;
        Ok((current != recorded).then(|| Stale {
            artifact: artifact.to_string(),
            producer: producer.to_string(),
        }))
    }
}
