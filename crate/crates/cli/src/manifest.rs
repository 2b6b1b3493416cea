use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written once all its outputs exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub suite_path: String,
    /// SHA-256 over `blob <len>\0<content>`, as git would hash the file.
    pub suite_sha256: String,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    /// Writes `manifest.json` into `dir` through a temporary file and a rename.
    pub fn write_atomic(&self, dir: &Path) -> std::io::Result<()> {
        let body = serde_json::to_vec_pretty(self).expect("manifest serializes");
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(tmp, dir.join(MANIFEST_FILE))
    }
}

pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_of_empty_content() {
        // `git hash-object --object-format=sha256 /dev/null`
        assert_eq!(
            git_blob_sha256(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
