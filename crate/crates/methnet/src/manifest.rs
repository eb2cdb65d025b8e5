//! Run manifest: per-stage input hash and output file hashes. It holds no
//! timings, worker counts or absolute paths, so identical runs produce
//! identical manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::binfmt::file_sha256;
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory, `/`-separated.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input_hash: String,
    pub completed: bool,
    /// True when the stage had nothing to do (optional input absent).
    #[serde(default)]
    pub skipped: bool,
    pub outputs: Vec<OutputFile>,
    #[serde(default)]
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub parameters: Value,
    pub inputs: Vec<InputRecord>,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl Manifest {
    pub fn new(seed: u64, parameters: Value) -> Self {
        Manifest { version: MANIFEST_VERSION, seed, parameters, inputs: Vec::new(), stages: Vec::new(), failure: None }
    }

    pub fn load(out_dir: &Path) -> Result<Option<Self>> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let m: Manifest = read_json(&path)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(Some(m))
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
        write_json(&tmp, self)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Inserts or replaces a stage record, keeping `order`.
    pub fn upsert(&mut self, record: StageRecord, order: &[&str]) {
        self.stages.retain(|s| s.name != record.name);
        self.stages.push(record);
        let rank = |n: &str| order.iter().position(|o| *o == n).unwrap_or(usize::MAX);
        self.stages.sort_by_key(|s| rank(&s.name));
    }
}

/// Whether every recorded output exists with its recorded hash.
pub fn outputs_verify(out_dir: &Path, record: &StageRecord) -> bool {
    record.completed
        && record.outputs.iter().all(|o| {
            let p = out_dir.join(&o.file);
            p.is_file() && file_sha256(&p).map(|h| h == o.sha256).unwrap_or(false)
        })
}

/// Hash of the stage name, its parameters and its upstream output hashes.
pub fn input_hash(stage: &str, params: &Value, upstream: &[&StageRecord], inputs: &[InputRecord]) -> String {
    let doc = serde_json::json!({
        "stage": stage,
        "params": params,
        "inputs": inputs,
        "upstream": upstream.iter().map(|r| serde_json::json!({"name": r.name, "outputs": r.outputs})).collect::<Vec<_>>(),
    });
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&doc).expect("json value serializes"));
    hex::encode(h.finalize())
}
