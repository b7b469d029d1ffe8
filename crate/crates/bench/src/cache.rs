//! Content-addressed stage directories.
//!
//! A stage's key is the SHA-256 of its name, a format version and the
//! canonical JSON of every input (including upstream keys). A directory is
//! reusable iff its `stamp.json` names the same key; the stamp is written last.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const CACHE_FORMAT_VERSION: u32 = 1;
const STAMP_FILE: &str = "stamp.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub key: String,
    pub format_version: u32,
}

pub fn content_key<T: Serialize + ?Sized>(stage: &str, inputs: &T) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    hasher.update(b"\n");
    hasher.update(CACHE_FORMAT_VERSION.to_le_bytes());
    hasher.update(serde_json::to_vec(inputs)?);
    Ok(hex::encode(hasher.finalize()))
}

/// Short form used in directory names.
pub fn short(key: &str) -> &str {
    &key[..key.len().min(16)]
}

pub fn is_fresh(dir: &Path, key: &str) -> bool {
    fs::read(dir.join(STAMP_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<Stamp>(&b).ok())
        .is_some_and(|s| s.key == key && s.format_version == CACHE_FORMAT_VERSION)
}

pub fn write_stamp(dir: &Path, stage: &str, key: &str) -> Result<()> {
    let stamp = Stamp {
        stage: stage.to_string(),
        key: key.to_string(),
        format_version: CACHE_FORMAT_VERSION,
    };
    fs::write(dir.join(STAMP_FILE), serde_json::to_string_pretty(&stamp)? + "\n")?;
    Ok(())
}

/// Drops a stale stamp before a stage rewrites its directory.
pub fn invalidate(dir: &Path) -> Result<()> {
    match fs::remove_file(dir.join(STAMP_FILE)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}
