//! Provenance record embedded in every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// What produced an artifact. Rerunning the same manifest reproduces the
/// artifact byte for byte; the timestamp is only written when asked for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: u64,
    pub model_hash: String,
    pub dataset_hash: Option<String>,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, model_hash: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config: None,
            seed,
            model_hash: model_hash.to_string(),
            dataset_hash: None,
            tool_version: TOOL_VERSION.to_string(),
            timestamp: None,
        }
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn timestamp_is_omitted_unless_set() {
        let m = RunManifest::new("gen", 3, "abc");
        let s = serde_json::to_string(&m).unwrap();
        assert!(!s.contains("timestamp"));
        let back: RunManifest = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
