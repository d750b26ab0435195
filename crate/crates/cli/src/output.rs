//! Artifact writing and the run manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use qsurf_core::sha256_hex;
use serde_json::{json, Value};

use crate::commands::{json_bytes, Artifact};

/// Writes `bytes` to `dir/name` through a temporary sibling and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

pub struct ManifestInput<'a> {
    pub command: &'a str,
    pub config: Value,
    pub seed_mesh_sha256: Option<String>,
    pub artifacts: &'a [Artifact],
    pub mesh_hashes: &'a [String],
    pub error: Option<Value>,
}

/// Manifest document. Wall-clock timings are deliberately absent so that
/// repeated runs produce identical bytes.
pub fn manifest(m: &ManifestInput) -> Vec<u8> {
    let artifacts: Vec<Value> = m
        .artifacts
        .iter()
        .map(|a| json!({ "name": a.name, "sha256": sha256_hex(&a.bytes), "bytes": a.bytes.len() }))
        .collect();
    json_bytes(&json!({
        "tool": "qsurf",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": qsurf_core::VERSION,
        "command": m.command,
        "status": if m.error.is_some() { "error" } else { "ok" },
        "error": m.error,
        "config": m.config,
        "seed_mesh_sha256": m.seed_mesh_sha256,
        "mesh_hashes": m.mesh_hashes,
        "artifacts": artifacts,
    }))
}

/// Writes every artifact, then the manifest last.
pub fn write_all(dir: &Path, artifacts: &[Artifact], manifest_bytes: &[u8]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for a in artifacts {
        write_atomic(dir, &a.name, &a.bytes)?;
    }
    write_atomic(dir, "manifest.json", manifest_bytes)
}
