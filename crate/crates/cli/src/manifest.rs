use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance block embedded in every JSON output. Thread count and file
/// paths are left out: they do not change results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub options: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub input_digest: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, options: BTreeMap<String, String>, seed: u64, input: Option<&[u8]>) -> Self {
        RunManifest {
            command: command.to_string(),
            options,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest: input.map(|b| format!("sha256:{}", hex::encode(Sha256::digest(b)))),
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
