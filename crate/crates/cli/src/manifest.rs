//! Provenance record written next to every run's outputs.

use i2cr_core::digest;
use i2cr_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub config: PipelineConfig,
    pub kg_digest: String,
    /// Endpoint URL, or transcript path plus its digest.
    pub backend: String,
    /// Omitted in deterministic runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(
        command: Vec<String>,
        config: &PipelineConfig,
        kg_digest: &str,
        backend: String,
        stamped: bool,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: config.clone(),
            kg_digest: kg_digest.to_string(),
            backend,
            timestamp: stamped.then(|| chrono::Utc::now().to_rfc3339()),
        }
    }

    /// Digest of everything except the timestamp.
    pub fn fingerprint(&self) -> String {
        let mut unstamped = self.clone();
        unstamped.timestamp = None;
        digest::fingerprint(&unstamped)
    }
}
