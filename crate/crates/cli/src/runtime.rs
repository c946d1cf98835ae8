//! Loading the KG and constructing backends from settings.

use std::path::Path;
use std::sync::Arc;

use i2cr_core::backends::http::HttpBackend;
use i2cr_core::backends::mock::MockBackend;
use i2cr_core::digest::sha256_hex;
use i2cr_core::kg::{load_kg, KgFormat, KgSnapshot};
use i2cr_core::Backends;

use crate::error::CliError;
use crate::settings::{BackendSettings, Settings};

pub fn open_kg(path: &Path) -> Result<KgSnapshot, CliError> {
    let kg = load_kg(path, KgFormat::from_path(path))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    tracing::info!(entities = kg.len(), digest = kg.source_digest(), "loaded KG");
    Ok(kg)
}

/// Backend handles plus a description for the run manifest.
///
/// HTTP clients are blocking; build them before any async runtime starts.
pub fn open_backends(settings: &Settings) -> Result<(Backends, String), CliError> {
    match &settings.backend {
        BackendSettings::Mock { transcript, mode } => {
            let bytes = std::fs::read(transcript)
                .map_err(|e| CliError::Input(format!("{}: {e}", transcript.display())))?;
            let mock = MockBackend::from_file(transcript, *mode)
                .map_err(|e| CliError::Input(format!("{}: {e}", transcript.display())))?;
            let described = format!(
                "mock:{}:{}:sha256={}",
                serde_json::to_value(mode).unwrap().as_str().unwrap_or_default(),
                transcript.display(),
                sha256_hex(&bytes)
            );
            Ok((Backends::uniform(Arc::new(mock)), described))
        }
        BackendSettings::Http(http) => {
            let backend = HttpBackend::new(http.to_config())
                .map_err(|e| CliError::Backend(e.to_string()))?;
            Ok((Backends::uniform(Arc::new(backend)), format!("http:{}", http.url)))
        }
        BackendSettings::Unset => Err(CliError::Config(
            "no backend configured: set backend_url or mock_transcript (or --mock-transcript)".into(),
        )),
    }
}
