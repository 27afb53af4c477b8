//! Per-run audit record written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const ERROR_FILE: &str = "error.json";

/// Everything needed to rerun a command and check that its outputs match.
///
/// Contains no timestamps or host details, so reruns of the same command on
/// the same inputs produce a byte-identical manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved config file written alongside.
    pub config_hash: String,
    pub resolved_config: String,
    pub seeds: Vec<u64>,
    /// Input path → SHA-256 of its content (directories hash their file tree).
    pub inputs: BTreeMap<String, String>,
    /// Output file name → SHA-256, excluding the manifest itself.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    /// Run details that callers should know about, such as the offline
    /// stand-ins used in place of pretrained encoders.
    pub notes: Vec<String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or of every file below a directory in sorted order
/// (relative path and content both contribute).
pub fn sha256_path(path: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(fs::read(path.join(&rel))?);
        }
    } else {
        let mut f = fs::File::open(path)?;
        let mut buf = [0u8; 1 << 16];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walk stays under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
