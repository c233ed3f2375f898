//! The run manifest: the single source of truth for what a run directory
//! contains, which work is already done, and what it cost. The manifest is
//! keyed by a hash of the effective configuration; re-opening a run with a
//! different configuration is refused rather than silently mixing arms.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrError};
use crate::jsonl::write_atomic;
use crate::types::CallUsage;
use crate::{ENGINE_VERSION, SCHEMA_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One finished unit of work: a loop (or run) of one arm on one problem.
/// Ordered so the serialized set is stable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompletedKey {
    pub arm: String,
    pub problem_id: String,
    pub loop_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

impl UsageTotals {
    pub fn add(&mut self, usage: &CallUsage) {
        self.calls += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.wall_time_ms += usage.wall_time_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Stable identity for the run directory: config hash prefix + seed.
    pub run_id: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub engine_version: String,
    /// Problem ids the run was launched over, sorted.
    pub dataset_ids: Vec<String>,
    pub completed: BTreeSet<CompletedKey>,
    /// Aggregate spend per agent tag (e.g. `http:gpt-x`, `sim:verifier`).
    pub usage: BTreeMap<String, UsageTotals>,
    /// How teacher-side token scoring was obtained, once known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_mechanism: Option<String>,
}

pub fn run_id(config_hash: &str, base_seed: u64) -> String {
    let prefix: String = config_hash.chars().take(12).collect();
    format!("{prefix}-s{base_seed}")
}

impl RunManifest {
    pub fn new(config_hash: &str, base_seed: u64, mut dataset_ids: Vec<String>) -> Self {
        dataset_ids.sort();
        dataset_ids.dedup();
        RunManifest {
            schema_version: SCHEMA_VERSION,
            run_id: run_id(config_hash, base_seed),
            config_hash: config_hash.to_string(),
            base_seed,
            engine_version: ENGINE_VERSION.to_string(),
            dataset_ids,
            completed: BTreeSet::new(),
            usage: BTreeMap::new(),
            teacher_mechanism: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrError::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| VrError::Manifest(format!("{}: {e}", path.display())))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(VrError::Manifest(format!(
                "{}: schema version {} (engine speaks {})",
                path.display(),
                manifest.schema_version,
                SCHEMA_VERSION
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, &text)
    }

    /// Resume the manifest at `path`, or start one. A hash or seed mismatch
    /// is a refusal: the directory belongs to a different run.
    pub fn open_or_create(
        path: &Path,
        config_hash: &str,
        base_seed: u64,
        dataset_ids: Vec<String>,
    ) -> Result<Self> {
        if !path.exists() {
            return Ok(RunManifest::new(config_hash, base_seed, dataset_ids));
        }
        let manifest = RunManifest::load(path)?;
        if manifest.config_hash != config_hash {
            return Err(VrError::Manifest(format!(
                "{}: run was started with config hash {} but the current config hashes to {}; \
                 refusing to mix configurations in one run directory",
                path.display(),
                manifest.config_hash,
                config_hash
            )));
        }
        if manifest.base_seed != base_seed {
            return Err(VrError::Manifest(format!(
                "{}: run was started with base seed {} but {} was requested",
                path.display(),
                manifest.base_seed,
                base_seed
            )));
        }
        Ok(manifest)
    }

    /// Record one finished unit. The completed set only grows; re-marking
    /// is idempotent.
    pub fn mark_completed(&mut self, arm: &str, problem_id: &str, loop_id: u64) {
        self.completed.insert(CompletedKey {
            arm: arm.to_string(),
            problem_id: problem_id.to_string(),
            loop_id,
        });
    }

    pub fn is_completed(&self, arm: &str, problem_id: &str, loop_id: u64) -> bool {
        self.completed.contains(&CompletedKey {
            arm: arm.to_string(),
            problem_id: problem_id.to_string(),
            loop_id,
        })
    }

    pub fn completed_in_arm(&self, arm: &str) -> BTreeSet<(String, u64)> {
        self.completed
            .iter()
            .filter(|k| k.arm == arm)
            .map(|k| (k.problem_id.clone(), k.loop_id))
            .collect()
    }

    pub fn add_usage(&mut self, tag: &str, usage: &CallUsage) {
        self.usage.entry(tag.to_string()).or_default().add(usage);
    }

    /// Fold a unit's whole usage vector under one tag.
    pub fn add_usage_all(&mut self, tag: &str, usage: &[CallUsage]) {
        for u in usage {
            self.add_usage(tag, u);
        }
    }
}
